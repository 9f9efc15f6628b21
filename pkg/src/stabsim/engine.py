"""Per-step stabilization: mode selection, gated transfers, latency, canvas upkeep.

Each engine step registers the current retinal array against the background
reference (primary mapping), separates the stimulus by inhibitive
subtraction, registers it against the stimulus reference (secondary
mapping), and then routes content onto the canvas in one of five ways:

* ``background``  -- one mapping carries everything: the stimulus has not
  moved relative to the background (the secondary equals the primary), the
  stimulus is undetectable this step, or the primary is zero and no
  direction is defined.
* ``stabilize``   -- secondary agrees in direction with the primary (within
  the sector rule): background transfers under the primary immediately, the
  stimulus patch transfers under the secondary after a latency, so the
  stimulus holds its reference position on the canvas.
* ``override``    -- secondary direction is inconsistent with the primary:
  the whole frame, stimulus included, rides the primary mapping and the
  stimulus is seen moving with its world displacement.
* ``identity``    -- no usable background evidence and no efferent signal:
  the frame transfers unshifted and retinal motion is seen.
* ``efferent``    -- no usable background evidence, but an approximation of
  eye position drives the mapping instead.

The latency queue stores the secondary *mapping* measured at enqueue time;
when an entry falls due, the stimulus patch separated from the *current*
frame is transferred under that stale mapping.  The residual displacement
this produces on the canvas is exactly the stale-mapping error, which is the
observable latency effect.  Due entries are applied after the step's
background transfer (so the fresh paint survives it) and are discarded in
steps that are not stabilizing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .arrays import SpatialArray, Translation, shift, transfer
from .eye import EyeTrace
from .registration import (
    CaptureError,
    MatchResult,
    NoMatchError,
    ReferenceSet,
    StimulusLost,
    best_translation,
    capture_references,
    radial_weight,
    separate_stimulus,
)
from .scene import RetinalFrame, SceneConfig, held_positions, render_retina

__all__ = [
    "MappingMode",
    "MappingDecision",
    "EfferentConfig",
    "EngineConfig",
    "EngineState",
    "FixationResult",
    "mappings_coherent",
    "select_mode",
    "efferent_signal",
    "efferent_estimate",
    "init_state",
    "step",
    "run_fixation",
    "write_decision_log",
]

BACKEND_FUNCTIONAL = "functional"
BACKEND_MSC = "msc"


class MappingMode(str, Enum):
    COHERENT_STABILIZE = "stabilize"
    VERIDICAL_OVERRIDE = "override"
    IDENTITY = "identity"
    EFFERENT = "efferent"
    BACKGROUND_ONLY = "background"


@dataclass(frozen=True)
class MappingDecision:
    """Outcome of one engine step.

    ``m_s`` is present exactly when the step stabilized the stimulus through
    an independent secondary mapping.  ``match_energy`` is the normalized
    weighted score of the primary match (0 when no background was usable).
    """

    mode: MappingMode
    m_p: Translation
    m_s: Translation | None = None
    match_energy: float = 0.0

    def __post_init__(self) -> None:
        has_secondary = self.m_s is not None
        if has_secondary != (self.mode is MappingMode.COHERENT_STABILIZE):
            raise ValueError(f"m_s must be present iff mode is stabilize, got {self.mode} with m_s={self.m_s}")


@dataclass(frozen=True)
class EfferentConfig:
    """Approximate eye-position signal available when no background anchors the mapping.

    The approximation error is a per-fixation bias drawn once per run
    (standard deviation ``noise_sd`` per axis); oculomotor estimates drift on
    fixation timescales rather than flickering sample to sample.
    ``quantization`` coarsens the signal in arcmin before it becomes a
    mapping.
    """

    noise_sd: float = 1.0
    quantization: float = 1.0

    def __post_init__(self) -> None:
        if self.noise_sd < 0.0 or self.quantization < 0.0:
            raise ValueError("noise_sd and quantization must be >= 0")


@dataclass(frozen=True)
class EngineConfig:
    """Engine knobs.

    ``min_override_magnitude`` and ``override_persistence`` debounce the
    mode switch: the direction of a secondary mapping shorter than the
    magnitude floor (in elements) is mostly rasterization noise, and the
    held stimulus goes maximally stale just before each display update, so
    single-step direction flips there are artifacts.  Override therefore
    engages (and releases) only after that many consecutive steps of
    direction-resolvable evidence.  A floor of 0 with persistence 1
    recovers the pure per-step sector rule.
    """

    search_radius: int = 20
    latency_steps: int = 16
    sector_half_angle: float = 45.0
    efferent: EfferentConfig | None = None
    background_energy_threshold: float = 1e-4
    step_rate: float = 1000.0
    separation_threshold: float = 0.5
    weight_r_half: float | None = 120.0  # arcmin; None disables eccentricity weighting
    min_override_magnitude: float = 2.0  # elements
    override_persistence: int = 25  # steps
    track_window: int = 4
    full_primary_search: bool = False
    score_jitter_sd: float = 0.0
    matcher_backend: str = BACKEND_FUNCTIONAL

    def __post_init__(self) -> None:
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if self.latency_steps < 0:
            raise ValueError("latency_steps must be >= 0")
        if not (0.0 <= self.sector_half_angle <= 90.0):
            raise ValueError("sector_half_angle must lie in [0, 90] degrees")
        if not (self.step_rate > 0.0):
            raise ValueError("step_rate must be > 0")
        if self.matcher_backend not in (BACKEND_FUNCTIONAL, BACKEND_MSC):
            raise ValueError(f"unknown matcher backend {self.matcher_backend!r}")
        if self.track_window < 1:
            raise ValueError("track_window must be >= 1")
        if self.min_override_magnitude < 0.0:
            raise ValueError("min_override_magnitude must be >= 0")
        if self.override_persistence < 1:
            raise ValueError("override_persistence must be >= 1")


@dataclass(frozen=True)
class EngineState:
    refs: ReferenceSet
    canvas: SpatialArray
    step_index: int = 0
    pending: tuple[tuple[int, Translation], ...] = ()
    prev_primary: Translation = Translation(0, 0)
    efferent_bias: tuple[float, float] = (0.0, 0.0)
    # Mode debouncing: consecutive steps of direction-resolvable
    # inconsistent / consistent secondary evidence, and the engaged mode.
    inconsistent_streak: int = 0
    consistent_streak: int = 0
    in_override: bool = False


@dataclass(frozen=True)
class FixationResult:
    """Everything one fixation run produces, in step order."""

    canvases: list[SpatialArray]
    decisions: list[MappingDecision]
    true_retinal_positions: np.ndarray = field(repr=False)
    held_eye: np.ndarray = field(repr=False)
    refs: ReferenceSet = field(repr=False)
    step_rate: float = 1000.0
    efferent_bias: tuple[float, float] = (0.0, 0.0)


# ---------------------------------------------------------------------------
# Mode selection
# ---------------------------------------------------------------------------


def mappings_coherent(m_p: Translation, m_s: Translation, sector_half_angle: float) -> bool:
    """True when the secondary direction lies in the stabilization sector of the primary.

    A zero secondary needs no direction and always counts as coherent; the
    magnitudes of the two mappings are free to differ.
    """
    if m_s.is_zero():
        return True
    dot = m_p.dx * m_s.dx + m_p.dy * m_s.dy
    if dot <= 0:
        return False
    cross = m_p.dx * m_s.dy - m_p.dy * m_s.dx
    angle = math.degrees(math.atan2(abs(cross), dot))
    return angle <= sector_half_angle + 1e-9


def select_mode(m_p: Translation, m_s: Translation, sector_half_angle: float) -> MappingMode:
    """Stabilize when the two mappings share a direction sector, otherwise override."""
    if m_p.is_zero():
        raise ValueError("select_mode requires a non-zero primary mapping")
    if mappings_coherent(m_p, m_s, sector_half_angle):
        return MappingMode.COHERENT_STABILIZE
    return MappingMode.VERIDICAL_OVERRIDE


# ---------------------------------------------------------------------------
# Efferent signal
# ---------------------------------------------------------------------------


def efferent_signal(
    e: tuple[float, float],
    noise_sd: float,
    quantization: float,
    seed: int,
) -> tuple[float, float]:
    """One noisy, quantized reading of eye position, in arcmin.

    Deterministic for a fixed seed; callers wanting per-step draws derive a
    per-step seed.  ``quantization`` of 0 leaves the value unquantized, so
    with zero noise the reading is exactly ``e``.
    """
    rng = np.random.default_rng(seed)
    noisy = (e[0] + rng.normal(0.0, noise_sd), e[1] + rng.normal(0.0, noise_sd))
    if quantization <= 0.0:
        return noisy
    return (
        quantization * round(noisy[0] / quantization),
        quantization * round(noisy[1] / quantization),
    )


def efferent_estimate(
    e: tuple[float, float],
    noise_sd: float,
    quantization: float,
    seed: int,
    element_pitch: float = 1.0,
) -> Translation:
    """Efferent reading converted to an integer element mapping."""
    sx, sy = efferent_signal(e, noise_sd, quantization, seed)
    return Translation(round(sx / element_pitch), round(sy / element_pitch))


def _efferent_mapping(
    e_held: tuple[float, float],
    bias: tuple[float, float],
    cfg: EfferentConfig,
    element_pitch: float,
) -> Translation:
    """Engine-side efferent mapping: display-held eye plus the fixation bias."""
    x, y = e_held[0] + bias[0], e_held[1] + bias[1]
    q = cfg.quantization
    if q > 0.0:
        x, y = q * round(x / q), q * round(y / q)
    return Translation(round(x / element_pitch), round(y / element_pitch))


# ---------------------------------------------------------------------------
# Matching helpers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _cached_weight(width: int, height: int, pitch: float, r_half: float) -> np.ndarray:
    w = radial_weight(width, height, pitch, r_half)
    w.setflags(write=False)
    return w


def _weight_for(frame: RetinalFrame, cfg: EngineConfig) -> np.ndarray | None:
    if cfg.weight_r_half is None:
        return None
    arr = frame.array
    return _cached_weight(arr.width, arr.height, arr.element_pitch, cfg.weight_r_half)


def _matcher(cfg: EngineConfig):
    if cfg.matcher_backend == BACKEND_MSC:
        from .msc import msc_best_translation

        return msc_best_translation
    return best_translation


def _rerank_with_jitter(result: MatchResult, rng: np.random.Generator, sd: float) -> MatchResult:
    """Perturb candidate scores and re-pick the argmax (models matcher noise)."""
    noisy = result.score_map + rng.normal(0.0, sd, result.score_map.shape)
    flat = np.where(np.isfinite(noisy), noisy, -np.inf).ravel()
    pick = int(np.argmax(flat))
    i, j = divmod(pick, result.dx_offsets.size)
    chosen = Translation(int(result.dx_offsets[j]), int(result.dy_offsets[i]))
    return replace(result, translation=chosen, score=result.score)


def _primary_match(
    frame: RetinalFrame,
    refs: ReferenceSet,
    cfg: EngineConfig,
    prev: Translation,
    weight: np.ndarray | None,
) -> MatchResult:
    """Full-disk argmax, found through an expanding window around the previous mapping.

    Drift moves the primary by at most an element or two per step, so a
    small window almost always contains the true peak; an argmax landing on
    the window edge forces escalation, ending at the full disk, so the
    returned translation equals the full-search argmax whenever the score
    field has its peak inside the disk.
    """
    ref = refs.background_ref
    assert ref is not None
    matcher = _matcher(cfg)
    radius = cfg.search_radius
    if cfg.full_primary_search:
        return matcher(frame.array, ref, radius, weight)
    win = cfg.track_window
    while True:
        full = win >= radius + max(abs(prev.dx), abs(prev.dy))
        result = matcher(frame.array, ref, radius, weight, center=prev, window=None if full else win)
        if full:
            return result
        t = result.translation
        on_edge = max(abs(t.dx - prev.dx), abs(t.dy - prev.dy)) >= win
        if not on_edge:
            return result
        win *= 2


# ---------------------------------------------------------------------------
# Engine steps
# ---------------------------------------------------------------------------


def init_state(
    frame0: RetinalFrame,
    scene: SceneConfig,
    cfg: EngineConfig,
    rng: np.random.Generator | None = None,
) -> tuple[EngineState, MappingDecision]:
    """Capture references and copy the first frame onto the canvas (identity capture)."""
    refs = capture_references(frame0, scene)
    if cfg.efferent is not None:
        if rng is None:
            rng = np.random.default_rng(0)
        bias = tuple(rng.normal(0.0, cfg.efferent.noise_sd, 2))
    else:
        bias = (0.0, 0.0)
    mode = MappingMode.BACKGROUND_ONLY if refs.background_ref is not None else MappingMode.IDENTITY
    state = EngineState(refs=refs, canvas=frame0.array, step_index=1, efferent_bias=bias)
    return state, MappingDecision(mode=mode, m_p=Translation(0, 0))


def step(
    state: EngineState,
    frame: RetinalFrame,
    cfg: EngineConfig,
    scene: SceneConfig,
    efferent_input: tuple[float, float] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[EngineState, MappingDecision]:
    """Process one retinal frame; returns the advanced state and the step's decision."""
    refs = state.refs
    canvas = state.canvas
    idx = state.step_index
    weight = _weight_for(frame, cfg)
    jitter = cfg.score_jitter_sd > 0.0 and rng is not None

    primary = None
    energy = 0.0
    if refs.background_ref is not None:
        try:
            primary = _primary_match(frame, refs, cfg, state.prev_primary, weight)
            energy = primary.score.value
        except NoMatchError:
            primary = None

    if primary is not None and energy >= cfg.background_energy_threshold:
        if jitter:
            primary = _rerank_with_jitter(primary, rng, cfg.score_jitter_sd)
        m_p = primary.translation
        patch = mask = None
        m_s = None
        try:
            patch, mask = separate_stimulus(frame, refs, m_p, cfg.separation_threshold)
            secondary = _matcher(cfg)(patch, refs.stimulus_ref, cfg.search_radius)
            if jitter:
                secondary = _rerank_with_jitter(secondary, rng, cfg.score_jitter_sd)
            m_s = secondary.translation
        except (StimulusLost, NoMatchError):
            patch = mask = None

        incon = state.inconsistent_streak
        consi = state.consistent_streak
        in_override = state.in_override
        if patch is None or m_p.is_zero() or m_s == m_p:
            # Stimulus undetected, no primary direction, or one mapping
            # registers both: a single mapping carries the whole frame.
            mode = MappingMode.BACKGROUND_ONLY
            incon, consi = 0, consi + 1
        else:
            raw = select_mode(m_p, m_s, cfg.sector_half_angle)
            testifies = m_s.radius >= cfg.min_override_magnitude
            if raw is MappingMode.VERIDICAL_OVERRIDE and testifies:
                incon, consi = incon + 1, 0
            else:
                incon, consi = 0, consi + 1
            if incon >= cfg.override_persistence:
                in_override = True
            elif consi >= cfg.override_persistence:
                in_override = False
            mode = MappingMode.VERIDICAL_OVERRIDE if in_override else MappingMode.COHERENT_STABILIZE

        moved = shift(frame.array, m_p)
        if mode is MappingMode.COHERENT_STABILIZE:
            assert mask is not None and patch is not None and m_s is not None
            background_mask = frame.array.with_values(1.0 - mask.values)
            canvas = transfer(canvas, moved, shift(background_mask, m_p))
            pending = state.pending + ((idx + cfg.latency_steps, m_s),)
            due = [m for (d, m) in pending if d <= idx]
            pending = tuple((d, m) for (d, m) in pending if d > idx)
            for stale in due:
                canvas = transfer(canvas, shift(patch, stale), shift(mask, stale))
            decision = MappingDecision(mode, m_p, m_s, energy)
        else:
            # Override and single-mapping steps move the whole frame together;
            # stale queued stabilizations no longer apply once the mode left
            # the stabilize branch.
            ones = frame.array.with_values(np.ones(frame.array.shape))
            canvas = transfer(canvas, moved, shift(ones, m_p))
            pending = tuple((d, m) for (d, m) in state.pending if d > idx)
            decision = MappingDecision(mode, m_p, None, energy)
        new_state = replace(
            state,
            canvas=canvas,
            step_index=idx + 1,
            pending=pending,
            prev_primary=m_p,
            inconsistent_streak=incon,
            consistent_streak=consi,
            in_override=in_override,
        )
        return new_state, decision

    # Background unavailable (absent, empty, or below the energy threshold).
    if cfg.efferent is not None and efferent_input is not None:
        m_p = _efferent_mapping(efferent_input, state.efferent_bias, cfg.efferent, frame.array.element_pitch)
        mode = MappingMode.EFFERENT
    else:
        m_p = Translation(0, 0)
        mode = MappingMode.IDENTITY
    ones = frame.array.with_values(np.ones(frame.array.shape))
    canvas = transfer(canvas, shift(frame.array, m_p), shift(ones, m_p))
    pending = tuple((d, m) for (d, m) in state.pending if d > idx)
    new_state = replace(state, canvas=canvas, step_index=idx + 1, pending=pending)
    return new_state, MappingDecision(mode, m_p, None, energy)


def run_fixation(
    trace: EyeTrace,
    scene: SceneConfig,
    cfg: EngineConfig,
    seed: int = 0,
) -> FixationResult:
    """Run the engine over a whole fixation trace, one step per eye sample."""
    rate = 1.0 / trace.sample_interval
    if abs(rate - cfg.step_rate) > 1e-6 * cfg.step_rate:
        raise ValueError(
            f"trace sample rate {rate:.3f} Hz must match the engine step rate {cfg.step_rate} Hz"
        )
    rng = np.random.default_rng(seed)
    held = held_positions(trace, scene.display_rate)

    frame0 = render_retina(trace, 0.0, scene)
    state, first_decision = init_state(frame0, scene, cfg, rng)

    canvases = [state.canvas]
    decisions = [first_decision]
    true_positions = [frame0.true_stimulus_retinal_pos]
    n = len(trace)
    for i in range(1, n):
        frame = render_retina(trace, i * trace.sample_interval, scene)
        efferent_input = (float(held[i, 0]), float(held[i, 1])) if cfg.efferent is not None else None
        state, decision = step(state, frame, cfg, scene, efferent_input, rng)
        canvases.append(state.canvas)
        decisions.append(decision)
        true_positions.append(frame.true_stimulus_retinal_pos)

    return FixationResult(
        canvases=canvases,
        decisions=decisions,
        true_retinal_positions=np.array(true_positions),
        held_eye=held.copy(),
        refs=state.refs,
        step_rate=cfg.step_rate,
        efferent_bias=state.efferent_bias,
    )


def write_decision_log(decisions: list[MappingDecision], path) -> None:
    """Per-step decision CSV: step, mode, m_p, m_s (blank unless stabilizing), match energy."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step,mode,m_p.dx,m_p.dy,m_s.dx,m_s.dy,match_energy\n")
        for i, d in enumerate(decisions):
            sdx = str(d.m_s.dx) if d.m_s is not None else ""
            sdy = str(d.m_s.dy) if d.m_s is not None else ""
            fh.write(f"{i},{d.mode.value},{d.m_p.dx},{d.m_p.dy},{sdx},{sdy},{d.match_energy:.9g}\n")
