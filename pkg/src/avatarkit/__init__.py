"""avatarkit: compositional 3D avatars from a skinned mesh body, painted UV
textures, and transferable canonical-space radiance components."""

from .body import (
    AvatarParams,
    BodyModel,
    VertexTransforms,
    joint_positions,
    skin_mesh,
    vertex_transforms,
)
from .body_io import load_model, save_model
from .camera import Camera
from .canonical import CanonicalFrame, CanonicalMap, canonicalize
from .component import RadianceComponent, load_component, save_component
from .compose import (
    AvatarRig,
    ComponentAttachment,
    animate,
    attach,
    detach,
    load_avatar,
    render_avatar,
    save_avatar,
)
from .config import PipelineConfig
from .field import FieldConfig, RadianceField, fit_rgb_adapter
from .http_oracle import HttpOracle
from .image import FeatureImage
from .landmarks import FitConfig, LandmarkSet, fit_residual, fit_shape, load_landmarks
from .losses import LossWeights, mask_loss, sds_gradient, similarity_loss, sparsity_loss
from .mesh import Mesh, load_obj, save_obj
from .oracle import GuidanceOracle, NoiseSchedule, SdsRequest, SdsResponse, SyntheticOracle
from .raycast import build_bvh, intersect_first
from .texture import TextureMap, ViewSchedule, paint_texture, project_view, rasterize, symmetry_loss
from .training import (
    CameraDistribution,
    RefineConfig,
    TrainConfig,
    refine_component,
    train_component,
)
from .volume import RaySamples, render_image, render_mask, render_ray, render_ray_hybrid

__all__ = [
    "AvatarParams",
    "AvatarRig",
    "BodyModel",
    "Camera",
    "CameraDistribution",
    "CanonicalFrame",
    "CanonicalMap",
    "ComponentAttachment",
    "FeatureImage",
    "FieldConfig",
    "FitConfig",
    "GuidanceOracle",
    "HttpOracle",
    "LandmarkSet",
    "LossWeights",
    "Mesh",
    "NoiseSchedule",
    "PipelineConfig",
    "RadianceComponent",
    "RadianceField",
    "RaySamples",
    "RefineConfig",
    "SdsRequest",
    "SdsResponse",
    "SyntheticOracle",
    "TextureMap",
    "TrainConfig",
    "VertexTransforms",
    "ViewSchedule",
    "animate",
    "attach",
    "build_bvh",
    "canonicalize",
    "detach",
    "fit_residual",
    "fit_rgb_adapter",
    "fit_shape",
    "intersect_first",
    "joint_positions",
    "load_avatar",
    "load_component",
    "load_landmarks",
    "load_model",
    "load_obj",
    "mask_loss",
    "paint_texture",
    "project_view",
    "rasterize",
    "refine_component",
    "render_avatar",
    "render_image",
    "render_mask",
    "render_ray",
    "render_ray_hybrid",
    "save_avatar",
    "save_component",
    "save_model",
    "save_obj",
    "sds_gradient",
    "similarity_loss",
    "skin_mesh",
    "sparsity_loss",
    "symmetry_loss",
    "train_component",
    "vertex_transforms",
]

__version__ = "0.1.0"
