"""Overlap and yaw-offset estimation between two range images.

Two notions of overlap live here.  ``ground_truth_overlap`` reprojects one
scan into the other using a known relative pose and counts pixels that land
on agreeing ranges — usable only when poses are known.  ``GeometricScorer``
estimates overlap and yaw *without* a pose by exhaustively testing every
circular column shift of the query against the reference; the best shift
gives the overlap score and the yaw offset.  The scorer is deterministic
and stateless, and is the default implementation of the
``ObservationScorer`` seam (a learned model could be plugged in instead).

Sign convention: positive yaw offset means the query frame is rotated
counter-clockwise (seen from +z) relative to the reference scan.  Column
shifts quantize yaw to multiples of 360/W degrees.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .angles import wrap_deg
from .scan import RangeImage, project_points, ray_directions

# the built-in layer is always available and skips noisy TBB probing
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

# guard values replace invalid pixels so a single |diff| <= eps test also
# rejects any pair involving an invalid pixel
_GUARD_QUERY = 1e9
_GUARD_REF = -1e9

try:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _match_counts_numba(q, m, eps):  # pragma: no cover - exercised via wrapper
        H, W = q.shape
        out = np.empty(W, np.int64)
        for k in prange(W):
            c = 0
            for i in range(H):
                for j in range(W):
                    jq = j + k
                    if jq >= W:
                        jq -= W
                    d = q[i, jq] - m[i, j]
                    if d < 0.0:
                        d = -d
                    if d <= eps:
                        c += 1
            out[k] = c
        return out

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _match_counts_numpy(q, m, eps, chunk=64):
    """Count range-agreeing pixel pairs for every circular shift (numpy path)."""
    H, W = q.shape
    ext = np.concatenate([q, q[:, : W - 1]], axis=1)
    win = np.lib.stride_tricks.sliding_window_view(ext, W, axis=1)  # (H, W, W) view
    out = np.empty(W, np.int64)
    for s in range(0, W, chunk):
        blk = win[:, s : s + chunk, :]
        out[s : s + chunk] = (np.abs(blk - m[:, None, :]) <= eps).sum(axis=(0, 2))
    return out


def match_counts_all_shifts(query_guarded, ref_guarded, eps_r):
    """For k = 0..W-1: number of pixels agreeing after shifting the query by k.

    Inputs are float64 (H, W) arrays with invalid pixels replaced by the
    guard values.  Shift semantics: column j of the reference is compared
    against column (j + k) mod W of the query.
    """
    if HAVE_NUMBA:
        return _match_counts_numba(query_guarded, ref_guarded, float(eps_r))
    return _match_counts_numpy(query_guarded, ref_guarded, float(eps_r))


@dataclass(frozen=True)
class OverlapEstimate:
    """Overlap fraction in [0, 1] and yaw offset in degrees in [-180, 180)."""

    overlap: float
    yaw_offset_deg: float


class ObservationScorer(Protocol):
    """Anything that scores a (query, map scan) pair. Must be deterministic."""

    def score(self, query: RangeImage, map_scan: RangeImage) -> OverlapEstimate: ...


def _check_same_intrinsics(a: RangeImage, b: RangeImage):
    if a.intrinsics != b.intrinsics:
        raise ValueError("range images have different intrinsics")


def _guarded(img: RangeImage, guard: float) -> np.ndarray:
    out = img.range.astype(np.float64)
    out[~img.valid] = guard
    return out


def ground_truth_overlap(a: RangeImage, b: RangeImage, rel_pose: np.ndarray,
                         eps_r: float = 1.0) -> float:
    """Fraction of a's valid pixels that reproject onto agreeing pixels of b.

    ``rel_pose`` is the 4x4 transform taking points from a's sensor frame
    into b's.  A pixel of ``a`` succeeds when its reprojected range lands on
    a valid pixel of ``b`` within ``eps_r`` meters.  Returns 0.0 when ``a``
    has no valid pixels.
    """
    if eps_r <= 0.0:
        raise ValueError("eps_r must be positive")
    mask = a.valid
    n_valid = int(mask.sum())
    if n_valid == 0:
        return 0.0
    rel_pose = np.asarray(rel_pose, dtype=np.float64)
    pts = ray_directions(a.intrinsics)[mask] * a.range[mask].astype(np.float64)[:, None]
    pts = pts @ rel_pose[:3, :3].T + rel_pose[:3, 3]
    u, v, r, keep = project_points(pts, b.intrinsics)
    ok = np.zeros(n_valid, dtype=bool)
    if keep.any():
        b_range = b.range.astype(np.float64)[v[keep], u[keep]]
        b_valid = b.valid[v[keep], u[keep]]
        ok[keep] = b_valid & (np.abs(r[keep] - b_range) <= eps_r)
    return float(ok.sum()) / n_valid


def shift_score(query: RangeImage, map_scan: RangeImage, k: int,
                eps_r: float = 1.0) -> float:
    """Overlap score for one circular column shift hypothesis.

    Counts pixel positions where both images are valid and ranges agree
    within ``eps_r`` after aligning the query under the hypothesis that its
    content was shifted by ``k`` columns, normalized by the query's valid
    pixel count.
    """
    _check_same_intrinsics(query, map_scan)
    W = query.intrinsics.width
    if not 0 <= k < W:
        raise ValueError(f"shift must be in [0, {W}), got {k}")
    n_valid = query.num_valid()
    if n_valid == 0:
        return 0.0
    q = _guarded(query, _GUARD_QUERY)
    m = _guarded(map_scan, _GUARD_REF)
    aligned = np.roll(q, -k, axis=1)
    matches = int((np.abs(aligned - m) <= eps_r).sum())
    return matches / n_valid


class GeometricScorer:
    """Exhaustive column-shift overlap/yaw scorer over range images.

    Searches all W circular shifts; the maximum match fraction is the
    overlap and the argmax shift, mapped through 360/W degrees per column,
    is the yaw offset.  Ties are broken toward the smallest |yaw|,
    preferring the positive sign.
    """

    def __init__(self, eps_r: float = 1.0):
        if eps_r <= 0.0:
            raise ValueError("eps_r must be positive")
        self.eps_r = float(eps_r)

    def score(self, query: RangeImage, map_scan: RangeImage) -> OverlapEstimate:
        _check_same_intrinsics(query, map_scan)
        W = query.intrinsics.width
        n_valid = query.num_valid()
        if n_valid == 0:
            return OverlapEstimate(0.0, 0.0)
        q = _guarded(query, _GUARD_QUERY)
        m = _guarded(map_scan, _GUARD_REF)
        counts = match_counts_all_shifts(q, m, self.eps_r)
        best = int(counts.max())
        ties = np.flatnonzero(counts == best)
        yaws = wrap_deg(ties * (360.0 / W))
        pick = min(range(len(ties)), key=lambda i: (abs(yaws[i]), yaws[i] < 0, ties[i]))
        return OverlapEstimate(best / n_valid, float(yaws[pick]))


def estimate(query: RangeImage, map_scan: RangeImage, eps_r: float = 1.0) -> OverlapEstimate:
    """Score a pair with a default GeometricScorer."""
    return GeometricScorer(eps_r).score(query, map_scan)
