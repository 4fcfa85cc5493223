"""Build real-vs-altered full-image pairs for the observer study.

Each pair shows two complete x-rays: an untouched one and one whose
lung-overlapping window had its central hole regenerated by one of the
models and pasted back. Which side carries the altered image is
uniform random. Ground truth stays in the pair manifest, which the
study service never sends to a client.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..data.lungmask import heuristic_lung_mask, load_lung_mask
from ..data.sampling import sample_patch_specs
from ..data.store import derive_seed
from ..errors import ConfigError, DataError
from ..imaging import load_gray_png, paste_patch, save_gray_png

POSITIONS = ("left", "right")


@dataclass(frozen=True)
class TrialPair:
    pair_id: str
    model_id: str
    real_source_id: str
    altered_source_id: str
    left_image: str  # served file names
    right_image: str
    altered_position: str
    window: dict  # {"x0","y0","size"} of the inpainted patch window
    mask: dict  # {"hx","hy","hw","hh"} inside the window
    n_pixels_changed: int


def generate_pairs(
    manifest,
    models: dict,
    n_pairs: int,
    seed: int,
    out_dir,
    mask_dir=None,
    same_source: bool = False,
) -> list[TrialPair]:
    """Create n_pairs trials round-robin over the given fitted models.

    Sources come from the test splits (normal and abnormal pools). By
    default the two images of a pair are distinct source x-rays; set
    same_source=True to show the altered image next to its own original,
    a deliberately harder test. Deterministic given the seed; images are
    written as PNGs under out_dir/images and a pairs.json manifest under
    out_dir.
    """
    if not models:
        raise ConfigError("no models supplied for pair generation")
    for mid, m in models.items():
        if not getattr(m, "fitted_", False):
            raise ConfigError(f"model {mid!r} has no trained checkpoint loaded")
    pool = manifest.by_split("test_normal") + manifest.by_split("test_abnormal")
    if len(pool) < (1 if same_source else 2):
        raise DataError(f"test pool has {len(pool)} images, cannot form pairs")

    out_dir = Path(out_dir)
    image_out = out_dir / "images"
    image_out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    model_ids = sorted(models)
    pairs = []
    for i in range(n_pairs):
        model_id = model_ids[i % len(model_ids)]
        model = models[model_id]
        patch_size = model.patch_size
        mask = model._mask()

        if same_source:
            altered_rec = real_rec = pool[int(rng.integers(0, len(pool)))]
        else:
            a, b = rng.choice(len(pool), size=2, replace=False)
            real_rec, altered_rec = pool[int(a)], pool[int(b)]

        real_img = load_gray_png(real_rec.file_path)
        src_img = load_gray_png(altered_rec.file_path)
        lung = load_lung_mask(mask_dir, altered_rec.image_id, shape=src_img.pixels.shape)
        if lung is None:
            lung = heuristic_lung_mask(src_img.pixels)
        spec = sample_patch_specs(
            src_img,
            lung,
            count=1,
            patch_size=patch_size,
            rng_seed=derive_seed(seed, f"pair{i}-window"),
        )[0]
        patch = src_img.pixels[spec.y0 : spec.y0 + spec.size, spec.x0 : spec.x0 + spec.size]
        result = model.inpaint(patch)
        altered = paste_patch(src_img.pixels, result.patch, spec)
        changed = int(np.sum(altered != src_img.pixels))
        if changed > mask.area:
            raise DataError(
                f"pair {i}: altered image differs in {changed} pixels, hole is {mask.area}"
            )

        pair_id = f"pair{i:04d}"
        altered_position = POSITIONS[int(rng.integers(0, 2))]
        names = {"left": f"{pair_id}_left.png", "right": f"{pair_id}_right.png"}
        if altered_position == "left":
            save_gray_png(altered, image_out / names["left"])
            save_gray_png(real_img.pixels, image_out / names["right"])
        else:
            save_gray_png(real_img.pixels, image_out / names["left"])
            save_gray_png(altered, image_out / names["right"])

        pairs.append(
            TrialPair(
                pair_id=pair_id,
                model_id=model_id,
                real_source_id=real_rec.image_id,
                altered_source_id=altered_rec.image_id,
                left_image=names["left"],
                right_image=names["right"],
                altered_position=altered_position,
                window={"x0": spec.x0, "y0": spec.y0, "size": spec.size},
                mask={"hx": mask.hx, "hy": mask.hy, "hw": mask.hw, "hh": mask.hh},
                n_pixels_changed=changed,
            )
        )

    payload = {
        "seed": seed,
        "models": {mid: models[mid].checkpoint_hash_ for mid in model_ids},
        "pairs": [asdict(p) for p in pairs],
    }
    (out_dir / "pairs.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    return pairs


def load_pairs(out_dir) -> list[TrialPair]:
    payload = json.loads((Path(out_dir) / "pairs.json").read_text())
    return [TrialPair(**p) for p in payload["pairs"]]
