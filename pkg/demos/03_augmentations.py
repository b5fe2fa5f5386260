"""Augmentation gallery: applies each training transform to one synthetic
person and writes a PNG contact sheet per transform.

Run: python demos/03_augmentations.py
Outputs land in demos/out/.
"""
from pathlib import Path

import numpy as np

from pfcnet.augment import (AugmentConfig, color_jitter, color_pca_augment,
                            compose_pipeline, random_crop, random_erasing,
                            random_flip, resize_bilinear, save_png)
from pfcnet.data import SynthConfig, generate_synthetic
from pfcnet.rng import Rng

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

split = generate_synthetic(SynthConfig(n_id=2, cameras=2,
                                       images_per_id_per_camera=1, seed=4))
person = split.train[0].image
config = AugmentConfig()
rng = Rng(7)


def sheet(name, images):
    gap = np.ones((3, images[0].shape[1], 2), dtype=np.float32)
    row = []
    for i, img in enumerate(images):
        row.append(img)
        if i < len(images) - 1:
            row.append(gap)
    path = out / f"{name}.png"
    save_png(path, np.concatenate(row, axis=2))
    print(f"wrote {path}")


sheet("original", [person])
sheet("crop", [random_crop(person, config.crop_padding, rng.split(f"c{i}"))
               for i in range(5)])
sheet("erasing", [random_erasing(person, AugmentConfig(erase_probability=1.0),
                                 rng.split(f"e{i}")) for i in range(5)])
sheet("flip", [random_flip(person, 1.0, rng.split("f"))])
sheet("jitter", [color_jitter(person, config, rng.split(f"j{i}"))
                 for i in range(5)])
sheet("pca_color", [color_pca_augment(person, 0.5, rng.split(f"p{i}"))
                    for i in range(5)])
sheet("resized_48x24", [resize_bilinear(person, 48, 24)])
sheet("resized_32x16", [resize_bilinear(person, 32, 16)])

print("\nfull training pipeline (augment once, resize to every scale):")
views = compose_pipeline(person, config, ((64, 32), (48, 24)), rng.split("pipe"))
for v, scale in zip(views, ((64, 32), (48, 24))):
    print(f"  scale {scale}: shape {v.shape}, range [{v.min():.3f}, {v.max():.3f}]")
sheet("pipeline_large", [views[0]])
sheet("pipeline_small", [views[1]])
