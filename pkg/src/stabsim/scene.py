"""Retinal scene rendering: background modes, gain-contingent stimulus, display hold.

The world frame is anchored to the array at the first sample (eye at the
origin): a retinal element at position ``r`` sees the world at ``r + e(t)``,
so a world-fixed pattern slips across the retina by ``-e(t)``.

The stimulus is a small opaque disk whose world position is slaved to the
measured eye position through a gain factor ``g``:

* world position   ``s0 + g * e``
* retinal position ``s0 + (g - 1) * e``

so ``g = 0`` is world-fixed and ``g = 1`` retina-fixed.  The instrument
updates the stimulus command only at the display rate (nominally 60 Hz):
between updates the stimulus is frozen at its commanded world position
(computed from the eye sample at the most recent display instant) while the
background keeps slipping at the full sample rate, so the drawn retinal
position is ``s0 + g * e_held - e_now``.  At gain 0 the hold is inert (the
command never moves) and the stimulus slips exactly with the background; at
display instants the drawn position equals ``stimulus_retinal_pos`` of the
held sample.

Rendering is nearest-element: positions are rounded to the element grid, so
downstream stages must work from array content alone.  Each frame also
carries the drawn stimulus center as ground truth for tests and metrics; the
engine never reads it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .arrays import SpatialArray
from .eye import EyeTrace

__all__ = [
    "BG_FULL",
    "BG_ANNULUS",
    "BG_ABSENT",
    "BG_CROSS",
    "SceneConfig",
    "RetinalFrame",
    "stimulus_world_pos",
    "stimulus_retinal_pos",
    "held_sample_index",
    "held_positions",
    "render_retina",
    "hexagon_outline",
]

BG_FULL = "full"
BG_ANNULUS = "annulus"
BG_ABSENT = "absent"
BG_CROSS = "fixation_cross"

_MODES = (BG_FULL, BG_ANNULUS, BG_ABSENT, BG_CROSS)


@dataclass(frozen=True)
class SceneConfig:
    """Stimulus-delivery geometry for one condition.

    Positions are in arcmin in the array frame (origin at the top-left
    element, x rightward, y downward).  ``stimulus_center`` of ``None`` puts
    the disk at the array center.  The background texture is a dense random
    two-valued pattern; its amplitude stays below the engine's separation
    threshold so that reference holes never masquerade as stimulus content.
    """

    background_mode: str = BG_FULL
    background_texture_seed: int = 0
    stimulus_center: tuple[float, float] | None = None
    stimulus_radius: float = 6.0  # arcmin
    gain: float = 0.0
    display_rate: float = 60.0  # Hz
    array_width: int = 128
    array_height: int = 128
    element_pitch: float = 1.0  # arcmin per element
    background_amplitude: float = 0.4
    background_fill: float = 0.5
    annulus_inner_radius: float = 270.0  # arcmin eccentricity where texture starts
    cross_arm: float = 8.0  # arcmin half-length of the fixation cross arms
    world_margin: int = 64  # texture elements kept beyond each array edge

    def __post_init__(self) -> None:
        if self.background_mode not in _MODES:
            raise ValueError(f"background_mode must be one of {_MODES}, got {self.background_mode!r}")
        if not (self.display_rate > 0.0):
            raise ValueError(f"display_rate must be > 0, got {self.display_rate}")
        if self.array_width < 1 or self.array_height < 1:
            raise ValueError("array dimensions must be >= 1")
        if not (self.element_pitch > 0.0):
            raise ValueError(f"element_pitch must be > 0, got {self.element_pitch}")
        if not (0.0 < self.background_amplitude <= 1.0):
            raise ValueError("background_amplitude must lie in (0, 1]")
        if not (0.0 <= self.background_fill <= 1.0):
            raise ValueError("background_fill must lie in [0, 1]")
        if self.stimulus_radius < 0.0:
            raise ValueError("stimulus_radius must be >= 0")
        cx, cy = self.stimulus_center_arcmin()
        r = self.stimulus_radius
        if (
            cx - r < 0.0
            or cy - r < 0.0
            or cx + r > (self.array_width - 1) * self.element_pitch
            or cy + r > (self.array_height - 1) * self.element_pitch
        ):
            raise ValueError("stimulus disk must lie fully inside the array at its rest position")

    def stimulus_center_arcmin(self) -> tuple[float, float]:
        # Default rest position is a whole element so the drawn disk center
        # tracks eye rounding exactly (a half-element center would dither).
        if self.stimulus_center is not None:
            return self.stimulus_center
        return (
            (self.array_width // 2) * self.element_pitch,
            (self.array_height // 2) * self.element_pitch,
        )

    def array_center_arcmin(self) -> tuple[float, float]:
        return (
            (self.array_width - 1) / 2.0 * self.element_pitch,
            (self.array_height - 1) / 2.0 * self.element_pitch,
        )


@dataclass(frozen=True)
class RetinalFrame:
    """One rendered retinal array plus the drawn stimulus center (test/metric ground truth)."""

    time: float
    array: SpatialArray
    true_stimulus_retinal_pos: tuple[float, float]


def stimulus_world_pos(g: float, e: tuple[float, float], s0: tuple[float, float]) -> tuple[float, float]:
    """World position of the stimulus command: s0 + g*e."""
    return (s0[0] + g * e[0], s0[1] + g * e[1])


def stimulus_retinal_pos(g: float, e: tuple[float, float], s0: tuple[float, float]) -> tuple[float, float]:
    """Retinal position of the stimulus: world position minus eye position, s0 + (g-1)*e."""
    return (s0[0] + (g - 1.0) * e[0], s0[1] + (g - 1.0) * e[1])


def held_sample_index(i: int, sample_rate: float, display_rate: float) -> int:
    """Index of the eye sample at the most recent display update at or before sample ``i``.

    Display updates happen at times k/display_rate; the command issued then
    uses the latest sample available, i.e. the one at or just before that
    instant.  A small epsilon keeps exact boundaries stable against float
    rounding.
    """
    t = i / sample_rate
    k = math.floor(t * display_rate + 1e-9)
    return min(i, math.floor(k / display_rate * sample_rate + 1e-9))


def held_positions(trace: EyeTrace, display_rate: float) -> np.ndarray:
    """Zero-order-held eye positions, one row per trace sample."""
    rate = 1.0 / trace.sample_interval
    idx = np.array([held_sample_index(i, rate, display_rate) for i in range(len(trace))])
    return trace.positions[idx]


# ---------------------------------------------------------------------------
# World texture construction (cached per scene configuration).
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _world_texture(cfg: SceneConfig) -> np.ndarray:
    """World-fixed background pattern covering the array plus the excursion margin.

    Returned array is read-only, indexed [y, x], with the array's element
    (0, 0) at texture index (margin, margin).
    """
    m = cfg.world_margin
    h = cfg.array_height + 2 * m
    w = cfg.array_width + 2 * m
    tex = np.zeros((h, w))
    if cfg.background_mode in (BG_FULL, BG_ANNULUS):
        rng = np.random.default_rng(cfg.background_texture_seed)
        tex = np.where(rng.random((h, w)) < cfg.background_fill, cfg.background_amplitude, 0.0)
        if cfg.background_mode == BG_ANNULUS:
            cx, cy = cfg.array_center_arcmin()
            ys, xs = np.mgrid[0:h, 0:w]
            ecc = np.hypot(
                (xs - m) * cfg.element_pitch - cx,
                (ys - m) * cfg.element_pitch - cy,
            )
            tex[ecc < cfg.annulus_inner_radius] = 0.0
    elif cfg.background_mode == BG_CROSS:
        cx, cy = cfg.array_center_arcmin()
        col = m + int(round(cx / cfg.element_pitch))
        row = m + int(round(cy / cfg.element_pitch))
        arm = int(round(cfg.cross_arm / cfg.element_pitch))
        tex[row, col - arm : col + arm + 1] = cfg.background_amplitude
        tex[row - arm : row + arm + 1, col] = cfg.background_amplitude
    tex.setflags(write=False)
    return tex


@lru_cache(maxsize=32)
def _disk_mask(radius_elements: float) -> np.ndarray:
    """Boolean disk template of half-width ceil(radius)."""
    r = int(math.ceil(radius_elements))
    ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
    mask = (xs * xs + ys * ys) <= radius_elements * radius_elements
    mask.setflags(write=False)
    return mask


def _paste_disk(values: np.ndarray, cx: int, cy: int, radius_elements: float, level: float) -> None:
    """Stamp an opaque disk, clipping at the array border."""
    mask = _disk_mask(radius_elements)
    r = mask.shape[0] // 2
    h, w = values.shape
    y0, y1 = max(0, cy - r), min(h, cy + r + 1)
    x0, x1 = max(0, cx - r), min(w, cx + r + 1)
    if y0 >= y1 or x0 >= x1:
        return
    sub = mask[y0 - (cy - r) : y1 - (cy - r), x0 - (cx - r) : x1 - (cx - r)]
    region = values[y0:y1, x0:x1]
    region[sub] = level


def render_retina(trace: EyeTrace, t: float, cfg: SceneConfig) -> RetinalFrame:
    """Render the retinal array at time ``t``.

    Background is sampled at world coordinates ``r + e(t)``; the stimulus
    disk sits at its held commanded world position minus the current eye
    position and replaces background content (opaque increment-delivered
    spot).
    """
    i = trace.sample_index(t)
    rate = 1.0 / trace.sample_interval
    pitch = cfg.element_pitch

    e = trace.positions[i]
    ox = int(round(e[0] / pitch))
    oy = int(round(e[1] / pitch))
    m = cfg.world_margin
    if abs(ox) > m or abs(oy) > m:
        raise ValueError(
            f"eye excursion {tuple(e)} arcmin exceeds the world texture margin "
            f"({m} elements); enlarge world_margin"
        )
    tex = _world_texture(cfg)
    values = tex[m + oy : m + oy + cfg.array_height, m + ox : m + ox + cfg.array_width].copy()

    e_held = trace.positions[held_sample_index(i, rate, cfg.display_rate)]
    s0 = cfg.stimulus_center_arcmin()
    p_w = stimulus_world_pos(cfg.gain, (float(e_held[0]), float(e_held[1])), s0)
    p_r = (p_w[0] - float(e[0]), p_w[1] - float(e[1]))
    cx = int(round(p_r[0] / pitch))
    cy = int(round(p_r[1] / pitch))
    if cfg.stimulus_radius > 0.0:
        _paste_disk(values, cx, cy, cfg.stimulus_radius / pitch, 1.0)

    return RetinalFrame(
        time=t,
        array=SpatialArray(values, pitch),
        true_stimulus_retinal_pos=(cx * pitch, cy * pitch),
    )


def hexagon_outline(
    width: int,
    height: int,
    radius: float,
    level: float = 0.4,
    element_pitch: float = 1.0,
) -> SpatialArray:
    """Hexagon-outline fixture for illustration-style tests.

    ``radius`` is the circumradius in elements; the outline is one element
    thick, drawn by dense sampling along the six edges.
    """
    values = np.zeros((height, width))
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    corners = [
        (cx + radius * math.cos(math.pi / 3.0 * k), cy + radius * math.sin(math.pi / 3.0 * k))
        for k in range(6)
    ]
    for k in range(6):
        x0, y0 = corners[k]
        x1, y1 = corners[(k + 1) % 6]
        n = max(2, int(4 * math.hypot(x1 - x0, y1 - y0)))
        for s in np.linspace(0.0, 1.0, n):
            col = int(round(x0 + s * (x1 - x0)))
            row = int(round(y0 + s * (y1 - y0)))
            if 0 <= row < height and 0 <= col < width:
                values[row, col] = level
    return SpatialArray(values, element_pitch)
