"""Percept extraction and summary motion statistics.

The canvas activation pattern is the percept; these functions read the
stimulus back off it (template tracking against the stimulus reference),
reduce trajectories to motion magnitudes, evaluate the closed-form per-mode
percept model, and aggregate gain sweeps including the discontinuity
statistic across gain 1.

Motion summaries are sampled at the display-update instants.  The engine
runs at the full sample rate, where sub-element quantization flicker of the
held stimulus against the per-sample registration is unavoidable; the
displayed trajectory only changes at display updates, so path lengths are
accumulated there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arrays import SpatialArray, Translation
from .engine import EfferentConfig, FixationResult, MappingDecision, MappingMode, _efferent_mapping
from .eye import EyeTrace
from .registration import ReferenceSet, _score_grid
from .scene import SceneConfig, held_positions, held_sample_index

__all__ = [
    "UndefinedMetricError",
    "PerceptTrace",
    "RunMetrics",
    "GainSweepRow",
    "track_stimulus",
    "motion_magnitude",
    "path_length",
    "closed_form_percept",
    "display_sample_indices",
    "compute_run_metrics",
    "sweep_rows",
    "sweep_summary",
    "discontinuity_statistic",
    "write_sweep_csv",
]

DEFAULT_TRACK_THRESHOLD = 0.6
DEFAULT_TRACK_RADIUS = 48  # elements

# Below this world path length (arcmin) the ratio of perceived to world
# motion is dominated by quantization and is reported as absent.
_MIN_RATIO_DENOMINATOR = 1e-9


class UndefinedMetricError(Exception):
    """A motion summary was requested from fewer than two valid samples."""


@dataclass(frozen=True)
class PerceptTrace:
    """Per-step canvas stimulus position (arcmin) with a per-step validity flag."""

    positions: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        val = np.asarray(self.valid, dtype=bool)
        if pos.ndim != 2 or pos.shape[1] != 2 or val.shape != (pos.shape[0],):
            raise ValueError("positions must be (n, 2) with a matching valid vector")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "valid", val)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def subsample(self, indices) -> "PerceptTrace":
        idx = np.asarray(indices, dtype=int)
        return PerceptTrace(self.positions[idx], self.valid[idx])


def _track_one(
    values: np.ndarray,
    template: np.ndarray,
    box: tuple[int, int, int, int],
    self_score: float,
    prev: Translation,
    search_radius: int,
    window: int,
) -> tuple[Translation, float]:
    """Best alignment of one canvas against the stimulus template.

    Searches an expanding window around the previous alignment; an argmax on
    the window edge escalates up to the full search square.
    """
    win = window
    while True:
        full = win >= search_radius + max(abs(prev.dx), abs(prev.dy))
        if full:
            dys = np.arange(-search_radius, search_radius + 1)
            dxs = dys
        else:
            dys = np.arange(max(-search_radius, prev.dy - win), min(search_radius, prev.dy + win) + 1)
            dxs = np.arange(max(-search_radius, prev.dx - win), min(search_radius, prev.dx + win) + 1)
        raw = _score_grid(values, template, dys, dxs, box)
        i, j = np.unravel_index(int(np.argmax(raw)), raw.shape)
        t = Translation(int(dxs[j]), int(dys[i]))
        quality = float(raw[i, j]) / self_score
        if full:
            return t, quality
        if max(abs(t.dx - prev.dx), abs(t.dy - prev.dy)) < win:
            return t, quality
        win *= 2


def track_stimulus(
    canvases: list[SpatialArray],
    refs: ReferenceSet,
    search_radius: int = DEFAULT_TRACK_RADIUS,
    threshold: float = DEFAULT_TRACK_THRESHOLD,
) -> PerceptTrace:
    """Locate the stimulus pattern on each canvas by template correlation.

    The reported position is the center of the matched template footprint;
    a step is invalid when the peak correlation falls below ``threshold``
    times the template self-correlation.
    """
    if not canvases:
        raise ValueError("need at least one canvas")
    template = refs.stimulus_ref.values
    pitch = refs.stimulus_ref.element_pitch
    nz_rows = np.flatnonzero(template.any(axis=1))
    nz_cols = np.flatnonzero(template.any(axis=0))
    box = (int(nz_rows[0]), int(nz_rows[-1]) + 1, int(nz_cols[0]), int(nz_cols[-1]) + 1)
    self_score = float((template * template).sum())

    positions = np.full((len(canvases), 2), np.nan)
    valid = np.zeros(len(canvases), dtype=bool)
    prev = Translation(0, 0)
    for k, canvas in enumerate(canvases):
        t, quality = _track_one(canvas.values, template, box, self_score, prev, search_radius, 6)
        if quality >= threshold:
            positions[k, 0] = refs.stimulus_ref_pos[0] - t.dx * pitch
            positions[k, 1] = refs.stimulus_ref_pos[1] - t.dy * pitch
            valid[k] = True
            prev = t
    return PerceptTrace(positions, valid)


def path_length(positions: np.ndarray, valid: np.ndarray | None = None) -> float:
    """Total path length over consecutive valid pairs."""
    pos = np.asarray(positions, dtype=np.float64)
    if valid is None:
        valid = np.ones(pos.shape[0], dtype=bool)
    deltas = np.diff(pos, axis=0)
    pair_ok = valid[:-1] & valid[1:]
    return float(np.hypot(deltas[pair_ok, 0], deltas[pair_ok, 1]).sum())


def motion_magnitude(trace: PerceptTrace) -> float:
    """Path length of the percept over its valid steps."""
    if int(trace.valid.sum()) < 2:
        raise UndefinedMetricError("motion magnitude needs at least 2 valid steps")
    return path_length(trace.positions, trace.valid)


def rms_deviation(positions: np.ndarray, valid: np.ndarray) -> float:
    pos = positions[valid]
    if pos.shape[0] == 0:
        return float("nan")
    centered = pos - pos.mean(axis=0)
    return float(np.sqrt((centered**2).sum(axis=1).mean()))


# ---------------------------------------------------------------------------
# Closed-form percept model
# ---------------------------------------------------------------------------


def closed_form_percept(
    trace: EyeTrace,
    gain: float,
    mode: MappingMode,
    latency_steps: int = 0,
    *,
    s0: tuple[float, float] = (0.0, 0.0),
    display_rate: float | None = None,
    efferent: EfferentConfig | None = None,
    efferent_bias: tuple[float, float] = (0.0, 0.0),
    element_pitch: float = 1.0,
) -> PerceptTrace:
    """Analytic canvas-stimulus position for a fixed mapping mode.

    Per mode, with e(t) the (optionally display-held) eye position:

    * stabilize: ``s0 + (g-1) * (e(t) - e(t - L*dt))``; the first ``L``
      samples are marked invalid (no full latency window exists yet).
    * override:  ``s0 + g * e(t)``
    * identity:  ``s0 + (g-1) * e(t)``
    * efferent:  ``s0 + (g-1) * e(t) + e_hat(t)`` with the same biased,
      quantized estimate the engine applies.

    With ``display_rate`` of None the raw trace drives the model (no hold,
    no latency artifacts beyond the explicit lag term).
    """
    if display_rate is None:
        e = trace.positions.copy()
    else:
        e = held_positions(trace, display_rate)
    n = e.shape[0]
    valid = np.ones(n, dtype=bool)

    if mode is MappingMode.COHERENT_STABILIZE:
        lag = np.zeros_like(e)
        if latency_steps > 0:
            lag[latency_steps:] = e[:-latency_steps]
            valid[:latency_steps] = False
        positions = (gain - 1.0) * (e - lag)
    elif mode is MappingMode.VERIDICAL_OVERRIDE:
        positions = gain * e
    elif mode is MappingMode.IDENTITY:
        positions = (gain - 1.0) * e
    elif mode is MappingMode.EFFERENT:
        if efferent is None:
            raise ValueError("efferent mode needs an EfferentConfig")
        mappings = [
            _efferent_mapping((float(px), float(py)), efferent_bias, efferent, element_pitch)
            for px, py in e
        ]
        mapped = np.array([[t.dx * element_pitch, t.dy * element_pitch] for t in mappings])
        positions = (gain - 1.0) * e + mapped
    else:
        raise ValueError(f"no closed form for mode {mode}")

    positions = positions + np.asarray(s0, dtype=np.float64)
    return PerceptTrace(positions, valid)


# ---------------------------------------------------------------------------
# Gain sweep aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    """Motion summary of one (gain, repeat) cell, sampled at display updates."""

    gain: float
    world_motion: float
    retinal_motion: float
    perceived_motion: float
    perceived_rms: float
    mode_fractions: dict[str, float]


@dataclass(frozen=True)
class GainSweepRow:
    """Per-gain aggregate over repeats (means; stds carried separately)."""

    gain: float
    world_motion: float
    retinal_motion: float
    perceived_motion: float
    motion_ratio_world: float | None
    motion_ratio_retinal: float | None
    mode_fractions: dict[str, float]
    perceived_motion_std: float = 0.0
    perceived_rms: float = 0.0

    def __post_init__(self) -> None:
        total = sum(self.mode_fractions.values())
        if self.mode_fractions and not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"mode fractions must sum to 1, got {total}")


def display_sample_indices(n_steps: int, step_rate: float, display_rate: float) -> np.ndarray:
    """Indices of the samples that were current at each display update."""
    idx = {held_sample_index(i, step_rate, display_rate) for i in range(n_steps)}
    return np.array(sorted(idx), dtype=int)


def mode_fractions(decisions: list[MappingDecision]) -> dict[str, float]:
    """Fractions of the four percept-level modes; single-mapping background
    steps stabilize the stimulus, so they count toward ``stabilize``."""
    n = len(decisions)
    counts = {"stabilize": 0, "override": 0, "identity": 0, "efferent": 0}
    for d in decisions:
        if d.mode in (MappingMode.COHERENT_STABILIZE, MappingMode.BACKGROUND_ONLY):
            counts["stabilize"] += 1
        elif d.mode is MappingMode.VERIDICAL_OVERRIDE:
            counts["override"] += 1
        elif d.mode is MappingMode.IDENTITY:
            counts["identity"] += 1
        else:
            counts["efferent"] += 1
    return {k: v / n for k, v in counts.items()}


def compute_run_metrics(
    result: FixationResult,
    scene: SceneConfig,
    percept: PerceptTrace | None = None,
    track_radius: int = DEFAULT_TRACK_RADIUS,
) -> RunMetrics:
    """Reduce one fixation run to its sweep-row contribution."""
    if percept is None:
        percept = track_stimulus(result.canvases, result.refs, search_radius=track_radius)
    n = len(result.canvases)
    idx = display_sample_indices(n, result.step_rate, scene.display_rate)

    s0 = np.asarray(scene.stimulus_center_arcmin())
    world = s0 + scene.gain * result.held_eye[idx]
    retinal = result.true_retinal_positions[idx]
    sampled = percept.subsample(idx)

    return RunMetrics(
        gain=scene.gain,
        world_motion=path_length(world),
        retinal_motion=path_length(retinal),
        perceived_motion=path_length(sampled.positions, sampled.valid),
        perceived_rms=rms_deviation(sampled.positions, sampled.valid),
        mode_fractions=mode_fractions(result.decisions),
    )


def _ratio(num: float, den: float) -> float | None:
    if den <= _MIN_RATIO_DENOMINATOR:
        return None
    return num / den


def sweep_rows(cells: dict[float, list[RunMetrics]]) -> list[GainSweepRow]:
    """Aggregate repeats into one row per gain, sorted by gain."""
    rows = []
    for gain in sorted(cells):
        reps = cells[gain]
        if not reps:
            raise ValueError(f"gain {gain} has no runs")
        world = float(np.mean([r.world_motion for r in reps]))
        retinal = float(np.mean([r.retinal_motion for r in reps]))
        perceived = float(np.mean([r.perceived_motion for r in reps]))
        fracs = {
            k: float(np.mean([r.mode_fractions[k] for r in reps]))
            for k in ("stabilize", "override", "identity", "efferent")
        }
        rows.append(
            GainSweepRow(
                gain=gain,
                world_motion=world,
                retinal_motion=retinal,
                perceived_motion=perceived,
                motion_ratio_world=_ratio(perceived, world),
                motion_ratio_retinal=_ratio(perceived, retinal),
                mode_fractions=fracs,
                perceived_motion_std=float(np.std([r.perceived_motion for r in reps])),
                perceived_rms=float(np.mean([r.perceived_rms for r in reps])),
            )
        )
    return rows


def discontinuity_statistic(rows: list[GainSweepRow], delta: float = 0.25) -> float:
    """Mean world-motion ratio over gains in (1, 1+delta] minus the mean over [1-delta, 1)."""
    above = [r.motion_ratio_world for r in rows if 1.0 < r.gain <= 1.0 + delta and r.motion_ratio_world is not None]
    below = [r.motion_ratio_world for r in rows if 1.0 - delta <= r.gain < 1.0 and r.motion_ratio_world is not None]
    if len(above) < 2 or len(below) < 2:
        raise ValueError(
            f"discontinuity needs >= 2 gains on each side of 1.0 within delta={delta}, "
            f"got {len(below)} below and {len(above)} above"
        )
    return float(np.mean(above) - np.mean(below))


def sweep_summary(
    cells: dict[float, list[RunMetrics]],
    delta: float = 0.25,
) -> tuple[list[GainSweepRow], float]:
    """Rows per gain plus the discontinuity statistic across gain 1."""
    rows = sweep_rows(cells)
    return rows, discontinuity_statistic(rows, delta)


def _csv_field(value: float | None) -> str:
    if value is None:
        return ""
    return "%.9g" % value


def write_sweep_csv(rows: list[GainSweepRow], path, discontinuity: float | None = None) -> None:
    """Sweep table; the discontinuity statistic goes in a footer row."""
    header = (
        "gain,world_motion,retinal_motion,perceived_motion,ratio_world,ratio_retinal,"
        "frac_stabilize,frac_override,frac_identity,frac_efferent,"
        "perceived_motion_std,perceived_rms"
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for r in rows:
            fields = [
                _csv_field(r.gain),
                _csv_field(r.world_motion),
                _csv_field(r.retinal_motion),
                _csv_field(r.perceived_motion),
                _csv_field(r.motion_ratio_world),
                _csv_field(r.motion_ratio_retinal),
                _csv_field(r.mode_fractions["stabilize"]),
                _csv_field(r.mode_fractions["override"]),
                _csv_field(r.mode_fractions["identity"]),
                _csv_field(r.mode_fractions["efferent"]),
                _csv_field(r.perceived_motion_std),
                _csv_field(r.perceived_rms),
            ]
            fh.write(",".join(fields) + "\n")
        fh.write(f"discontinuity,{_csv_field(discontinuity)}\n")
