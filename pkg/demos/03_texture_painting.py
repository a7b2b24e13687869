"""Iterative multi-view texture painting.

Paints the toy head from the ten scheduled views using a procedural
generation oracle (depth-shaded skin tones), then renders a small turntable
from the painted texture.  Shows the validity mask growing monotonically.
"""

from pathlib import Path

import torch

from avatarkit import png16, toy
from avatarkit.body import AvatarParams, skin_mesh
from avatarkit.camera import Camera
from avatarkit.image import to_uint8
from avatarkit.oracle import SyntheticOracle
from avatarkit.texture import ViewSchedule, paint_texture, rasterize

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

model = toy.head_model()
mesh = skin_mesh(model, AvatarParams.zeros(model))


def skin_tone_generator(prompt, size, depth=None, current=None, known_mask=None, seed=0, camera=None):
    h, w = size
    img = torch.zeros(h, w, 3, dtype=torch.float64)
    d = torch.as_tensor(depth, dtype=torch.float64) if depth is not None else torch.zeros(h, w)
    img[:, :, 0] = 0.55 + 0.30 * d
    img[:, :, 1] = 0.42 + 0.22 * d
    img[:, :, 2] = 0.35 + 0.12 * d
    return img.clamp(0, 1)


schedule = ViewSchedule.default(size=128, distance=2.2)
print(f"schedule: {len(schedule)} views, symmetry pairing {schedule.pairing}")

oracle = SyntheticOracle(generator=skin_tone_generator)
texture = paint_texture(mesh, schedule, oracle, "a healthy complexion",
                        uv_size=128, steps=120, seed=4,
                        resume_dir=out / "paint_progress")
print(f"painted texels: {int(texture.validity.sum())} / {texture.validity.numel()}")

texture.save(out / "head_texture.png")
for i, az in enumerate((0, 90, 180)):
    cam = Camera(azimuth_deg=az, width=160, height=160, distance=2.2)
    img = rasterize(texture, cam, mesh)
    png16.write_png(out / f"turntable_{i}.png", to_uint8(img.data))
print("wrote texture + turntable renders to", out)
