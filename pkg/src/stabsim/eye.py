"""Fixational drift traces: synthesis, CSV ingest, and displacement queries.

Drift is modeled as a 2D Brownian random walk sampled at the instrument rate
(nominally 1 kHz).  Two presets bracket the subject range seen in practice:
``STRONG_FIXATION_DIFFUSION`` gives excursions of a few arcmin over a second,
``WEAKER_FIXATION_DIFFUSION`` tens of arcmin.  Both are tunable model knobs,
not measured ground truth.

A trace holds drift only.  Saccades are represented as boundaries between
traces (references are recaptured between fixations), so every trace is
validated against a per-step saccade threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EyeTrace",
    "TraceFormatError",
    "STRONG_FIXATION_DIFFUSION",
    "WEAKER_FIXATION_DIFFUSION",
    "generate_drift",
    "load_trace",
    "save_trace",
    "displacement",
]

# Diffusion presets in arcmin^2/s per axis.
STRONG_FIXATION_DIFFUSION = 5.0
WEAKER_FIXATION_DIFFUSION = 40.0

DEFAULT_SACCADE_THRESHOLD = 3.0  # arcmin per sample; drift steps are far below this


class TraceFormatError(ValueError):
    """Raised when a trace file does not parse or violates the row contract."""


@dataclass(frozen=True)
class EyeTrace:
    """Time-stamped 2D eye positions in arcmin, first sample at the origin.

    ``positions`` has shape (n, 2) with columns (x, y) and n >= 2; consecutive
    samples are ``sample_interval`` seconds apart.
    """

    sample_interval: float
    positions: np.ndarray = field(repr=False)
    saccade_threshold: float = DEFAULT_SACCADE_THRESHOLD

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
            raise ValueError(f"positions must have shape (n >= 2, 2), got {pos.shape}")
        if not (self.sample_interval > 0.0):
            raise ValueError(f"sample_interval must be > 0, got {self.sample_interval}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must all be finite")
        if pos[0, 0] != 0.0 or pos[0, 1] != 0.0:
            raise ValueError(f"first sample must be the origin, got {tuple(pos[0])}")
        steps = np.hypot(*np.diff(pos, axis=0).T)
        if steps.size and steps.max() >= self.saccade_threshold:
            raise ValueError(
                f"per-sample step {steps.max():.3f} arcmin reaches the saccade "
                f"threshold {self.saccade_threshold}; drift traces must stay below it"
            )
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def duration(self) -> float:
        """Time of the last sample in seconds."""
        return (len(self) - 1) * self.sample_interval

    def sample_index(self, t: float) -> int:
        """Index of the sample nearest to time ``t`` (which must lie in range)."""
        if not (0.0 <= t <= self.duration + 0.5 * self.sample_interval):
            raise ValueError(f"t={t} outside trace range [0, {self.duration}]")
        return min(int(round(t / self.sample_interval)), len(self) - 1)

    def position_at(self, t: float) -> tuple[float, float]:
        x, y = self.positions[self.sample_index(t)]
        return float(x), float(y)


def generate_drift(
    seed: int,
    duration: float,
    diffusion: float,
    rate: float = 1000.0,
    saccade_threshold: float = DEFAULT_SACCADE_THRESHOLD,
) -> EyeTrace:
    """Brownian drift trace: independent Gaussian steps of variance diffusion*dt per axis.

    Deterministic for a fixed seed; ``diffusion`` is in arcmin^2/s.
    """
    if not (duration > 0.0):
        raise ValueError(f"duration must be > 0, got {duration}")
    if not (rate > 0.0):
        raise ValueError(f"rate must be > 0, got {rate}")
    if diffusion < 0.0:
        raise ValueError(f"diffusion must be >= 0, got {diffusion}")
    dt = 1.0 / rate
    n_steps = int(round(duration * rate))
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, np.sqrt(diffusion * dt), size=(n_steps, 2))
    positions = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return EyeTrace(dt, positions, saccade_threshold)


def displacement(trace: EyeTrace, t0: float, t1: float) -> tuple[float, float]:
    """Eye displacement e(t1) - e(t0) with nearest-sample lookup."""
    if not (0.0 <= t0 <= t1 <= trace.duration):
        raise ValueError(f"need 0 <= t0 <= t1 <= {trace.duration}, got t0={t0}, t1={t1}")
    p0 = trace.positions[trace.sample_index(t0)]
    p1 = trace.positions[trace.sample_index(t1)]
    return float(p1[0] - p0[0]), float(p1[1] - p0[1])


# ---------------------------------------------------------------------------
# CSV schema: optional header "t,x,y"; rows time(s), x(arcmin), y(arcmin),
# strictly increasing t.  The writer always emits the header.
# ---------------------------------------------------------------------------

_HEADER = "t,x,y"
# 12 significant digits: 9 would cap round-trip accuracy near 1e-7 arcmin for
# positions in the tens of arcmin; 12 keeps reload error below 1e-9.
_FIELD_FMT = "%.12g"


def save_trace(trace: EyeTrace, path) -> None:
    n = len(trace)
    times = np.arange(n) * trace.sample_interval
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_HEADER + "\n")
        for i in range(n):
            fields = (times[i], trace.positions[i, 0], trace.positions[i, 1])
            fh.write(",".join(_FIELD_FMT % v for v in fields) + "\n")


def load_trace(path, saccade_threshold: float = DEFAULT_SACCADE_THRESHOLD) -> EyeTrace:
    """Parse a trace file; positions are re-based so the first sample is the origin."""
    rows: list[tuple[float, float, float]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if lineno == 1 and text.replace(" ", "").lower() == _HEADER:
                continue
            parts = text.split(",")
            if len(parts) != 3:
                raise TraceFormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                t, x, y = (float(p) for p in parts)
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            rows.append((t, x, y))
    if len(rows) < 2:
        raise TraceFormatError(f"{path}: a trace needs at least 2 samples, found {len(rows)}")
    data = np.array(rows)
    times = data[:, 0]
    dts = np.diff(times)
    if np.any(dts <= 0.0):
        bad = int(np.argmax(dts <= 0.0)) + 2  # +2: 1-based, second row of the pair
        raise TraceFormatError(f"{path}: timestamps must strictly increase (violated at data row {bad})")
    positions = data[:, 1:] - data[0, 1:]
    return EyeTrace(float(np.mean(dts)), positions, saccade_threshold)
