"""Brute-force reference implementations used to check the package.

Nothing here imports scipy.ndimage or the package's evaluation code:
components come from an explicit BFS flood fill, distances from explicit
all-pairs voxel coordinates, and lesion-wise scores from direct
sum-over-slots arithmetic.
"""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np

OFFSETS = {
    6: [d for d in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, d)) == 1],
    18: [d for d in itertools.product((-1, 0, 1), repeat=3) if 0 < sum(map(abs, d)) <= 2],
    26: [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)],
}


def flood_fill_components(mask: np.ndarray, connectivity: int = 26) -> list[set[tuple[int, int, int]]]:
    """Components as voxel sets, ordered by their first voxel in raster order."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    for start in map(tuple, np.argwhere(mask)):
        if seen[start]:
            continue
        comp, queue = set(), deque([start])
        seen[start] = True
        while queue:
            v = queue.popleft()
            comp.add(v)
            for d in OFFSETS[connectivity]:
                n = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
                if all(0 <= n[i] < mask.shape[i] for i in range(3)) and mask[n] and not seen[n]:
                    seen[n] = True
                    queue.append(n)
        comps.append(comp)
    return comps


def to_mask(voxels, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for v in voxels:
        m[v] = True
    return m


def chebyshev_min(a: set, b: set) -> int:
    pa, pb = np.array(sorted(a)), np.array(sorted(b))
    return int(np.abs(pa[:, None, :] - pb[None, :, :]).max(axis=2).min())


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face neighbour outside the mask (or the array)."""
    out = []
    for v in map(tuple, np.argwhere(mask)):
        for d in OFFSETS[6]:
            n = (v[0] + d[0], v[1] + d[1], v[2] + d[2])
            if not all(0 <= n[i] < mask.shape[i] for i in range(3)) or not mask[n]:
                out.append(v)
                break
    return np.array(out, dtype=float).reshape(-1, 3)


def oracle_hd95(pred: np.ndarray, gt: np.ndarray, spacing=(1.0, 1.0, 1.0), penalty: float = 374.0) -> float:
    if not pred.any() and not gt.any():
        return 0.0
    if pred.any() != gt.any():
        return penalty
    s = np.asarray(spacing, dtype=float)
    bp, bg = boundary_voxels(pred) * s, boundary_voxels(gt) * s
    d = np.sqrt(((bp[:, None, :] - bg[None, :, :]) ** 2).sum(axis=2))
    pooled = np.concatenate([d.min(axis=1), d.min(axis=0)])
    return float(np.percentile(pooled, 95))


def oracle_dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    a, b = int(pred.sum()), int(gt.sum())
    if a + b == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / (a + b)


def oracle_lesionwise(
    pred: np.ndarray,
    gt: np.ndarray,
    connectivity: int = 26,
    dilation: int = 3,
    min_size: int = 2,
    penalty: float = 374.0,
    spacing=(1.0, 1.0, 1.0),
) -> dict:
    """TP/FN/FP counts and lesion-wise DSC/HD95 by direct enumeration.

    A gt lesion corresponds to every pred lesion within Chebyshev distance
    ``dilation`` (that is what ``dilation`` 26-neighbourhood dilations reach).
    """
    gts = [c for c in flood_fill_components(gt, connectivity) if len(c) >= min_size]
    preds = [c for c in flood_fill_components(pred, connectivity) if len(c) >= min_size]
    tp_scores, used = [], set()
    fn = 0
    for g in gts:
        hits = [j for j, p in enumerate(preds) if chebyshev_min(g, p) <= dilation]
        if not hits:
            fn += 1
            continue
        used.update(hits)
        gm = to_mask(g, gt.shape)
        pm = to_mask(set().union(*(preds[j] for j in hits)), gt.shape)
        tp_scores.append((oracle_dsc(pm, gm), oracle_hd95(pm, gm, spacing, penalty)))
    fp = len(preds) - len(used)
    tp = len(tp_scores)
    n = tp + fn + fp
    if n == 0:
        dsc, hd = 1.0, 0.0
    else:
        dsc = sum(s[0] for s in tp_scores) / n
        hd = (sum(s[1] for s in tp_scores) + penalty * (fn + fp)) / n
    return {"tp": tp, "fn": fn, "fp": fp, "dsc": dsc, "hd95": hd}


def random_blob_volume(rng: np.random.Generator, shape=(32, 32, 32), max_blobs=6, radii=(1, 5)) -> np.ndarray:
    """Union of 0..max_blobs random balls."""
    zz, yy, xx = np.indices(shape)
    out = np.zeros(shape, dtype=bool)
    for _ in range(int(rng.integers(0, max_blobs + 1))):
        c = rng.uniform(0, np.array(shape) - 1)
        r = rng.uniform(*radii)
        out |= (zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2 <= r * r
    return out


def perturb(rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    """A prediction-like variant: shifted, with a few voxels flipped."""
    shift = tuple(int(s) for s in rng.integers(-2, 3, size=3))
    out = np.roll(mask, shift, axis=(0, 1, 2))
    flips = rng.random(mask.shape) < 0.002
    return out ^ flips
