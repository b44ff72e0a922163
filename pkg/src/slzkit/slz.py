"""Safe/unsafe mask post-processing and landing-candidate extraction.

Masks are uint8 grids with 0 = safe, 1 = unsafe. Safety decisions stay
conservative throughout: binarization breaks ties toward unsafe, and
regions use 4-connectivity so diagonal-only contact never merges two
landing surfaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics
from .errors import ShapeMismatchError
from .geometry import DEFAULT_NZ_MIN, AreaReport, region_area

SAFE = 0
UNSAFE = 1


@dataclass(frozen=True)
class Region:
    """One 4-connected component of safe pixels."""

    region_id: int
    pixels: np.ndarray  # (N, 2) array of (row, col), row-major order
    bbox: tuple  # (min_row, min_col, max_row, max_col), inclusive


@dataclass(frozen=True)
class LandingCandidate:
    region_id: int
    pixels: np.ndarray
    bbox: tuple
    area: AreaReport


def _check_mask(mask):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeMismatchError(f"mask must be 2-D, got shape {m.shape}")
    if not np.isin(m, (SAFE, UNSAFE)).all():
        raise ValueError("mask values must be 0 (safe) or 1 (unsafe)")
    return m.astype(np.uint8)


def binarize(logits):
    """Argmax over the 2 logit channels; ties go to unsafe."""
    z = np.asarray(logits)
    if z.ndim != 3 or z.shape[2] != 2:
        raise ShapeMismatchError(f"logits must be (H, W, 2), got shape {z.shape}")
    if not np.isfinite(z).all():
        raise ValueError("logits must be finite")
    return (z[..., UNSAFE] >= z[..., SAFE]).astype(np.uint8)


def connected_components(mask):
    """4-connected components of the safe pixels, ids in row-major discovery order."""
    m = _check_mask(mask)
    labels, count = ndimage.label(m == SAFE)
    if count == 0:
        return []
    flat = labels.ravel()
    # rank labels by the flat index of their first pixel (row-major discovery)
    first_index = np.full(count + 1, flat.size, dtype=np.int64)
    idx = np.flatnonzero(flat)
    np.minimum.at(first_index, flat[idx], idx)
    ranked = np.argsort(first_index[1:], kind="stable") + 1
    regions = []
    for new_id, lab in enumerate(ranked, start=1):
        pixels = np.argwhere(labels == lab)
        rmin, cmin = pixels.min(axis=0)
        rmax, cmax = pixels.max(axis=0)
        regions.append(Region(region_id=new_id, pixels=pixels,
                              bbox=(int(rmin), int(cmin), int(rmax), int(cmax))))
    return regions


def top_k_candidates(mask, depth, normals, intr: CameraIntrinsics, k,
                     n_z_min=DEFAULT_NZ_MIN):
    """Safe components ranked by estimated area (descending, id breaks ties)."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    m = _check_mask(mask)
    d = np.asarray(depth)
    if d.shape != m.shape:
        raise ShapeMismatchError(f"depth shape {d.shape} != mask shape {m.shape}")
    candidates = []
    for region in connected_components(m):
        report = region_area(region.pixels, depth, normals, intr, n_z_min=n_z_min)
        candidates.append(LandingCandidate(region.region_id, region.pixels,
                                           region.bbox, report))
    candidates.sort(key=lambda c: (-c.area.total_area, c.region_id))
    return candidates[:k]


def dilate_unsafe(mask, radius):
    """Grow the unsafe set by a square (Chebyshev) element of radius `radius`."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    m = _check_mask(mask)
    if radius == 0:
        return m.copy()
    size = 2 * int(radius) + 1
    return ndimage.maximum_filter(m, size=size, mode="constant", cval=SAFE)
