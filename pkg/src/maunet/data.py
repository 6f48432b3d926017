"""PNG image/mask datasets and the synthetic ellipse corpus."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .rng import RngState

MASK_THRESHOLD = 128


@dataclass
class SegSample:
    id: str
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    mask: np.ndarray  # (1, H, W) float32 in {0, 1}
    split: str
    path: Path | None = None

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError(f"sample {self.id!r}: image {self.image.shape} vs mask {self.mask.shape}")


def read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def write_gray(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path, format="PNG")


def n_train(n: int, fraction: float) -> int:
    # rounding guards against 0.7 * 10 = 7.000000000000001
    return min(n, math.ceil(round(fraction * n, 9)))


def load_dataset(root, split_fraction: float = 0.8, seed: int = 0) -> list[SegSample]:
    """Load ``root/images/*.png`` with masks from ``root/masks`` (same stems).

    Names are sorted, shuffled with the ``split`` stream of ``seed``, and the
    first ceil(fraction * n) of that order are tagged train.  The returned list
    is in sorted-name order.
    """
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    for d in (img_dir, mask_dir):
        if not d.is_dir():
            raise DataError(f"missing directory {d}")
    images = {p.stem: p for p in img_dir.glob("*.png")}
    masks = {p.stem: p for p in mask_dir.glob("*.png")}
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        where = ["images/" + s if s in images else "masks/" + s for s in orphans]
        raise DataError(f"no counterpart for {', '.join(where)}")
    if not images:
        raise DataError(f"no PNG files under {img_dir}")
    if not 0.0 < split_fraction <= 1.0:
        raise DataError(f"split fraction must be in (0, 1], got {split_fraction}")

    names = sorted(images)
    order = RngState(seed).stream("split").permutation(len(names))
    train = {names[i] for i in order[: n_train(len(names), split_fraction)]}

    samples = []
    for name in names:
        img = read_gray(images[name])
        msk = read_gray(masks[name])
        if img.shape != msk.shape:
            raise DataError(f"pair {name!r}: image {img.shape} vs mask {msk.shape}")
        samples.append(
            SegSample(
                id=name,
                image=(img.astype(np.float32) / 255.0)[None],
                mask=(msk >= MASK_THRESHOLD).astype(np.float32)[None],
                split="train" if name in train else "val",
                path=images[name],
            )
        )
    return samples


def split(samples: list[SegSample], which: str) -> list[SegSample]:
    if which == "all":
        return list(samples)
    return [s for s in samples if s.split == which]


def stack(samples: list[SegSample], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """(N,1,H,W) image and mask arrays."""
    return (
        np.stack([s.image for s in samples]).astype(dtype),
        np.stack([s.mask for s in samples]).astype(dtype),
    )


def ellipse_sample(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """One noisy image in [0, 1] and its exact ellipse-union mask."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    r_min, r_max = max(size / 10, 2.0), size / 4
    for _ in range(rng.integers(1, 4)):
        ry, rx = rng.uniform(r_min, r_max, size=2)
        cy, cx = rng.uniform(r_min, size - r_min, size=2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    background = rng.uniform(0.15, 0.35)
    foreground = rng.uniform(0.65, 0.85)
    image = np.where(mask, foreground, background) + rng.normal(0.0, 0.1, size=(size, size))
    return np.clip(image, 0.0, 1.0), mask


def gen_synthetic(n: int, size: int, seed: int, out) -> Path:
    """Write ``n`` ellipse image/mask PNG pairs under ``out/images`` and ``out/masks``."""
    if n < 1 or size < 8:
        raise DataError(f"need n >= 1 and size >= 8, got n={n}, size={size}")
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = RngState(seed).stream("data")
    width = max(3, len(str(n - 1)))
    for i in range(n):
        image, mask = ellipse_sample(rng, size)
        stem = f"sample_{i:0{width}d}"
        write_gray(out / "images" / f"{stem}.png", np.round(image * 255))
        write_gray(out / "masks" / f"{stem}.png", mask.astype(np.uint8) * 255)
    return out
