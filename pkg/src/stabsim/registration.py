"""Brute-force translation matching, reference capture, and stimulus separation.

:func:`best_translation` scores every candidate translation in a search disk
by the weighted element-product sum between the shifted moving array and a
reference, normalized by the weighted area of the valid-overlap region so
that zero-fill borders cannot bias the argmax toward small shifts.  Scores
are computed exactly (no Fourier shortcut); a support-restricted evaluation
and an optional candidate window keep it fast without changing any value.

:func:`capture_references` snapshots the background and stimulus at fixation
onset; :func:`separate_stimulus` recovers the stimulus region of a later
frame by inhibitive subtraction of the registered background reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arrays import MatchScore, SpatialArray, Translation, shift_values, write_csv_grid
from .scene import BG_ABSENT, RetinalFrame, SceneConfig

__all__ = [
    "NoMatchError",
    "CaptureError",
    "StimulusLost",
    "ReferenceSet",
    "MatchResult",
    "radial_weight",
    "candidate_window",
    "best_translation",
    "capture_references",
    "separate_stimulus",
    "write_score_map_csv",
]

# Activation level that identifies stimulus elements at capture.  The opaque
# stimulus disk is drawn at 1.0 while background texture stays at or below
# its amplitude (default 0.4), so anything this bright is stimulus.
STIMULUS_DETECT_LEVEL = 0.9

DEFAULT_SEPARATION_THRESHOLD = 0.5

# Above this many score evaluations (candidates x support elements) the
# vectorized path would materialize an unreasonable intermediate; fall back
# to the per-candidate loop, which computes the same values.
_VECTOR_PATH_LIMIT = 4_000_000


class NoMatchError(Exception):
    """Reference carries no matchable content; caller falls back to the identity mapping."""


class CaptureError(Exception):
    """The stimulus could not be located in the capture frame."""


class StimulusLost(Exception):
    """Inhibitive subtraction left no stimulus elements this step."""


@dataclass(frozen=True)
class ReferenceSet:
    """Reference snapshots taken at fixation onset, fixed until the next saccade.

    ``stimulus_ref`` holds only stimulus content (zero elsewhere);
    ``background_ref`` is the capture frame with the stimulus region zeroed,
    present unless the scene has no background at all.
    """

    stimulus_ref: SpatialArray
    stimulus_ref_pos: tuple[float, float]
    capture_time: float
    background_ref: SpatialArray | None = None

    def stimulus_support(self) -> np.ndarray:
        """Boolean mask of the captured stimulus region."""
        return self.stimulus_ref.values > 0.0


@dataclass(frozen=True)
class MatchResult:
    """Winning translation plus the full per-candidate score field.

    ``score_map[i, j]`` is the normalized weighted score for translation
    ``(dx_offsets[j], dy_offsets[i])``; entries outside the searched
    candidate set are NaN.
    """

    translation: Translation
    score: MatchScore
    score_map: np.ndarray = field(repr=False)
    dy_offsets: np.ndarray = field(repr=False)
    dx_offsets: np.ndarray = field(repr=False)

    def score_at(self, t: Translation) -> float:
        i = int(np.searchsorted(self.dy_offsets, t.dy))
        j = int(np.searchsorted(self.dx_offsets, t.dx))
        if (
            i >= self.dy_offsets.size
            or j >= self.dx_offsets.size
            or self.dy_offsets[i] != t.dy
            or self.dx_offsets[j] != t.dx
        ):
            raise KeyError(f"translation {t} outside the searched grid")
        return float(self.score_map[i, j])


def radial_weight(
    width: int,
    height: int,
    element_pitch: float = 1.0,
    r_half: float = 120.0,
    center: tuple[float, float] | None = None,
) -> np.ndarray:
    """Radially decreasing match weight w(r) = 1 / (1 + (r / r_half)^2).

    Stands in for the falling receptor density away from the array center;
    ``r_half`` is the arcmin eccentricity where the weight halves.
    """
    if center is None:
        center = ((width - 1) / 2.0 * element_pitch, (height - 1) / 2.0 * element_pitch)
    ys, xs = np.mgrid[0:height, 0:width]
    r = np.hypot(xs * element_pitch - center[0], ys * element_pitch - center[1])
    return 1.0 / (1.0 + (r / r_half) ** 2)


@lru_cache(maxsize=64)
def _candidate_grid(radius: int, dy_lo: int, dy_hi: int, dx_lo: int, dx_hi: int):
    """Offset vectors, in-disk mask, and canonical tie order for a candidate window."""
    dys = np.arange(dy_lo, dy_hi + 1)
    dxs = np.arange(dx_lo, dx_hi + 1)
    gy, gx = np.meshgrid(dys, dxs, indexing="ij")
    in_disk = (gx * gx + gy * gy) <= radius * radius
    r2 = (gx * gx + gy * gy).ravel()
    ang = np.mod(np.arctan2(gy.ravel(), gx.ravel()), 2.0 * math.pi)
    order = np.lexsort((ang, r2))
    for arr in (dys, dxs, in_disk, order):
        arr.setflags(write=False)
    return dys, dxs, in_disk, order


def candidate_window(radius: int, center: Translation | None, window: int | None):
    """Candidate set for a search: offsets, in-disk mask, canonical tie order.

    The canonical order (smallest ``|t|`` first, then smallest angle from the
    +x axis) is shared by every matcher backend so ties resolve identically
    everywhere.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if window is None:
        bounds = (-radius, radius, -radius, radius)
    else:
        if window < 0:
            raise ValueError(f"window must be >= 0, got {window}")
        c = center if center is not None else Translation(0, 0)
        bounds = (
            max(-radius, c.dy - window),
            min(radius, c.dy + window),
            max(-radius, c.dx - window),
            min(radius, c.dx + window),
        )
        if bounds[0] > bounds[1] or bounds[2] > bounds[3]:
            raise ValueError("candidate window lies entirely outside the search disk")
    dys, dxs, in_disk, order = _candidate_grid(radius, *bounds)
    if not in_disk.any():
        raise ValueError("candidate window contains no translation inside the search disk")
    return dys, dxs, in_disk, order


def _score_grid(
    moving: np.ndarray,
    refw: np.ndarray,
    dys: np.ndarray,
    dxs: np.ndarray,
    box: tuple[int, int, int, int],
) -> np.ndarray:
    """Raw weighted-product sums for every candidate in the window grid.

    ``box`` is the (row0, row1, col0, col1) bounding box of the reference
    support; products outside it are zero by construction, so restricting
    the sum there is exact.
    """
    h, w = moving.shape
    r0, r1, c0, c1 = box
    box_h, box_w = r1 - r0, c1 - c0
    refw_box = np.ascontiguousarray(refw[r0:r1, c0:c1])

    if dys.size * dxs.size * box_h * box_w <= _VECTOR_PATH_LIMIT:
        pad_top = max(0, int(dys[-1]) - r0)
        pad_bottom = max(0, (r1 - int(dys[0])) - h)
        pad_left = max(0, int(dxs[-1]) - c0)
        pad_right = max(0, (c1 - int(dxs[0])) - w)
        padded = np.pad(moving, ((pad_top, pad_bottom), (pad_left, pad_right)))
        windows = sliding_window_view(padded, (box_h, box_w))
        rows = slice(r0 - int(dys[-1]) + pad_top, r0 - int(dys[0]) + pad_top + 1)
        cols = slice(c0 - int(dxs[-1]) + pad_left, c0 - int(dxs[0]) + pad_left + 1)
        stack = np.ascontiguousarray(windows[rows, cols][::-1, ::-1])
        return np.einsum("ijyx,yx->ij", stack, refw_box)

    num = np.zeros((dys.size, dxs.size))
    for i, dy in enumerate(dys):
        yo0, yo1 = max(r0, dy), min(r1, h + dy)
        if yo0 >= yo1:
            continue
        for j, dx in enumerate(dxs):
            xo0, xo1 = max(c0, dx), min(c1, w + dx)
            if xo0 >= xo1:
                continue
            num[i, j] = np.einsum(
                "yx,yx->",
                refw[yo0:yo1, xo0:xo1],
                moving[yo0 - dy : yo1 - dy, xo0 - dx : xo1 - dx],
            )
    return num


def _overlap_norm(
    shape: tuple[int, int],
    weight: np.ndarray | None,
    dys: np.ndarray,
    dxs: np.ndarray,
) -> np.ndarray:
    """Weighted area of the valid-overlap region per candidate."""
    h, w = shape
    if weight is None:
        rows = (h - np.abs(dys)).clip(min=0).astype(float)
        cols = (w - np.abs(dxs)).clip(min=0).astype(float)
        return np.outer(rows, cols)
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = weight.cumsum(axis=0).cumsum(axis=1)
    y0 = np.maximum(0, dys)
    y1 = h + np.minimum(0, dys)
    x0 = np.maximum(0, dxs)
    x1 = w + np.minimum(0, dxs)
    norm = (
        integral[np.ix_(y1, x1)]
        - integral[np.ix_(y0, x1)]
        - integral[np.ix_(y1, x0)]
        + integral[np.ix_(y0, x0)]
    )
    return norm


def best_translation(
    moving: SpatialArray,
    reference: SpatialArray,
    radius: int,
    weight: np.ndarray | None = None,
    *,
    center: Translation | None = None,
    window: int | None = None,
) -> MatchResult:
    """Exhaustive argmax of the normalized weighted match over a search disk.

    Every candidate ``t`` with ``|t| <= radius`` (optionally restricted to a
    Chebyshev window of half-width ``window`` around ``center``) is scored as

        sum(shift(moving, t) * reference * weight) / weighted_overlap_area(t)

    Ties break toward the smallest ``|t|``, then the smallest angle from the
    +x axis.  The window is a search-space restriction only: any score it
    produces equals the full-disk score for the same candidate.
    """
    if moving.shape != reference.shape:
        raise ValueError(f"moving {moving.shape} and reference {reference.shape} must share dimensions")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if weight is not None and weight.shape != reference.shape:
        raise ValueError("weight profile must match the array dimensions")

    refw = reference.values if weight is None else reference.values * weight
    nz_rows = np.flatnonzero(refw.any(axis=1))
    if nz_rows.size == 0:
        raise NoMatchError("reference has no matchable content")
    nz_cols = np.flatnonzero(refw.any(axis=0))
    box = (int(nz_rows[0]), int(nz_rows[-1]) + 1, int(nz_cols[0]), int(nz_cols[-1]) + 1)

    dys, dxs, in_disk, order = candidate_window(radius, center, window)

    num = _score_grid(moving.values, refw, dys, dxs, box)
    norm = _overlap_norm(moving.shape, weight, dys, dxs)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(in_disk & (norm > 0.0), num / norm, np.nan)

    flat = scores.ravel()[order]
    valid = np.isfinite(flat)
    if not valid.any():
        raise NoMatchError("no candidate has a finite score")
    flat_valid = np.where(valid, flat, -np.inf)
    pick = order[int(np.argmax(flat_valid))]
    i, j = divmod(pick, dxs.size)
    best = Translation(int(dxs[j]), int(dys[i]))
    return MatchResult(
        translation=best,
        score=MatchScore(max(float(scores[i, j]), 0.0)),
        score_map=scores,
        dy_offsets=dys.copy(),
        dx_offsets=dxs.copy(),
    )


def capture_references(frame0: RetinalFrame, cfg: SceneConfig) -> ReferenceSet:
    """Initialize the reference arrays from the first frame of a fixation.

    The stimulus region is everything at the opaque stimulus level; the
    background reference is the frame with that region zeroed.  Both stay
    fixed until the caller recaptures (saccade or attention shift).
    """
    values = frame0.array.values
    stim_mask = values >= STIMULUS_DETECT_LEVEL
    if not stim_mask.any():
        raise CaptureError("stimulus not detectable in the capture frame")
    pitch = frame0.array.element_pitch
    ys, xs = np.nonzero(stim_mask)
    pos = (float(xs.mean()) * pitch, float(ys.mean()) * pitch)
    stimulus_ref = frame0.array.with_values(np.where(stim_mask, values, 0.0))
    background_ref = None
    if cfg.background_mode != BG_ABSENT:
        background_ref = frame0.array.with_values(np.where(stim_mask, 0.0, values))
    return ReferenceSet(
        stimulus_ref=stimulus_ref,
        stimulus_ref_pos=pos,
        capture_time=frame0.time,
        background_ref=background_ref,
    )


def separate_stimulus(
    frame: RetinalFrame,
    refs: ReferenceSet,
    m_p: Translation,
    threshold: float = DEFAULT_SEPARATION_THRESHOLD,
) -> tuple[SpatialArray, SpatialArray]:
    """Split the current stimulus out of a frame by inhibitive subtraction.

    The background reference, shifted into register with the frame, inhibits
    everything it explains; what survives the threshold is stimulus.  The
    background texture amplitude sits below the threshold, so content
    revealed inside the reference's stimulus hole cannot leak into the mask.
    Returns ``(patch, mask)``; raises :class:`StimulusLost` on an empty mask.
    """
    if refs.background_ref is None:
        raise ValueError("stimulus separation requires a background reference")
    predicted = shift_values(refs.background_ref.values, -m_p.dx, -m_p.dy)
    residual = np.clip(frame.array.values - predicted, 0.0, None)
    mask = residual >= threshold
    if not mask.any():
        raise StimulusLost("no residual stimulus elements this step")
    patch = frame.array.with_values(np.where(mask, frame.array.values, 0.0))
    return patch, frame.array.with_values(mask.astype(float))


def write_score_map_csv(result: MatchResult, path) -> None:
    """Dump the candidate score grid (rows = dy ascending, cols = dx ascending)."""
    write_csv_grid(result.score_map, path)
