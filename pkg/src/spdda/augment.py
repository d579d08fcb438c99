"""Whole-scene generation from a trained generator.

Every pixel's patch goes through the encoder once. Channel scores are
averaged over the scene to fix one mask, the feature Gram matrix is
accumulated so the mixer sees the whole scene (as it sees a whole batch in
training), and the centre pixel of each patch is kept. The mixer is then
applied to the stitched centre-pixel map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .data import HyperCube, extract_patches
from .metrics import gray, image_ssim, psnr, sam_stats
from .sdm import ChannelMask, SpectralDiversityModule, SpectralMixer, apply_mixer, cosine_from_gram, sample_mask, semantic_score
from .tensor import ShapeError, Tensor, no_grad


@dataclass
class AugmentResult:
    cube: HyperCube
    mask: ChannelMask
    mixer: SpectralMixer

    def mixer_json(self) -> dict:
        return {"k": self.mask.k, "mask": self.mask.to_dict(), "mixer": self.mixer.to_dict()}


def _pixel_batches(cube: HyperCube, patch_size: int, batch_size: int):
    H, W = cube.height, cube.width
    coords = np.stack(np.meshgrid(np.arange(H), np.arange(W), indexing="ij"), axis=-1).reshape(-1, 2)
    for start in range(0, len(coords), batch_size):
        c = coords[start:start + batch_size]
        patches, _, _ = extract_patches(cube, patch_size, c)
        yield c, patches


def augment_scene(gen: SpectralDiversityModule, cube: HyperCube, rng: np.random.Generator,
                  patch_size: int = 13, batch_size: int = 256, k: Optional[int] = None) -> AugmentResult:
    if cube.channels != gen.channels:
        raise ShapeError(f"generator expects {gen.channels} channels, cube {cube.name!r} has {cube.channels}")
    H, W, C = cube.height, cube.width, cube.channels
    c = patch_size // 2
    total = np.zeros(C)
    gram = np.zeros((C, C))
    centre = np.zeros((C, H, W))
    with no_grad():
        for coords, patches in _pixel_batches(cube, patch_size, batch_size):
            F, F_S, _ = gen.encode(Tensor(patches))
            total += semantic_score(F_S) * len(patches)
            flat = F.data.transpose(1, 0, 2, 3).reshape(C, -1)
            gram += flat @ flat.T
            centre[:, coords[:, 0], coords[:, 1]] = F.data[:, :, c, c].T
        mask = sample_mask(total / (H * W), rng, gen.k_min_fraction, k)
        gram = gram[np.ix_(mask.keep, mask.keep)]
        centre = centre[mask.keep]
        mixer, _, _ = gen.mixer_from_similarity(cosine_from_gram(gram))
        ed = ops.clip(apply_mixer(Tensor(centre[None]), mixer), 0.0, 1.0).data[0]
    # round to the stored precision so reports describe the written cube
    ed = ed.astype(np.float32).astype(np.float64)
    return AugmentResult(HyperCube(ed, cube.labels, f"{cube.name}_ed"), mask, mixer)


def realism_report(source: HyperCube, ed: HyperCube) -> dict:
    """SAM over labeled pixels (all pixels when unlabeled); PSNR and SSIM of the gray renderings."""
    sam_mean, sam_std, skipped = sam_stats(source, ed.values)
    g_sd, g_ed = gray(source.values), gray(ed.values)
    return {
        "k": ed.channels,
        "sam_mean": sam_mean,
        "sam_std": sam_std,
        "sam_skipped": skipped,
        "psnr": psnr(g_sd, g_ed),
        "ssim": image_ssim(g_sd, g_ed),
    }
