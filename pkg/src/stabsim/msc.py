"""Neuronal matcher and gated transfer: coincidence synapses, competition, map select.

One match neuron exists per candidate translation in the search disk.  Its
dendrite carries one synapse pair per array element: the pair injects a
signal only when both the shifted retinal element and the reference element
are active together (an approximate AND realized as a thresholded min), and
the injected contributions sum through a saturating nonlinearity.  A
stronger sum produces a stronger, earlier dendritic pulse, and the match
neurons then compete through lateral inhibition until one survives.  The
winner's map-select neuron gates the correspondingly shifted retinal
content onto the canvas; gating only the currently active subset of retinal
elements gives the asynchronous partial-update behavior.

Dendritic sums are normalized by the synaptic capacity of the valid-overlap
region (the weighted number of pairs that can see in-range input) before
the nonlinearity; without this the shrinking overlap at large shifts biases
the competition toward small mappings, and the functional matcher and this
one could not agree candidate for candidate.

The layout of the match neurons is radial: a neuron's angle encodes its
mapping direction and its radius the mapping magnitude, which makes the
mode-selection sector test a pure geometric comparison between the primary
and secondary winners.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arrays import MatchScore, SpatialArray, Translation, shift, transfer
from .engine import mappings_coherent
from .registration import MatchResult, NoMatchError, _overlap_norm, candidate_window

__all__ = [
    "MatchNeuron",
    "MapSelectNeuron",
    "MSCNetwork",
    "coincidence_inject",
    "dendritic_sum",
    "build_network",
    "compete",
    "gate_transfer",
    "msc_best_translation",
    "radial_consistency",
    "random_active_subset",
]

# Must sit below the faintest jointly active content (background texture
# amplitude 0.4 by default) or texture-texture coincidences go dark and the
# primary mapping loses its evidence.
DEFAULT_COINCIDENCE_THRESHOLD = 0.3

DEFAULT_INHIBITION_STRENGTH = 0.5

# Pulse bookkeeping: pulse_time = PULSE_T0 - activation / sigma, so stronger
# summed input fires earlier.  Only the ordering is meaningful.
PULSE_T0 = 1.0

_VECTOR_PATH_LIMIT = 4_000_000
_MAX_COMPETITION_ROUNDS = 500


@dataclass(frozen=True)
class MatchNeuron:
    """Degree-of-match unit for one candidate mapping, at its radial layout position."""

    mapping: Translation
    angle: float
    radius: float
    activation: float
    pulse_time: float


@dataclass(frozen=True)
class MapSelectNeuron:
    """Gate controlling transfer of the shifted retinal array for one mapping."""

    mapping: Translation
    gate_open: bool = False


def coincidence_inject(pre_a: float, pre_b: float, threshold: float = DEFAULT_COINCIDENCE_THRESHOLD) -> float:
    """Signal injected by one synapse pair: thresholded min, exactly 0 if either input is 0."""
    if pre_a == 0.0 or pre_b == 0.0:
        return 0.0
    m = min(pre_a, pre_b)
    return m if m >= threshold else 0.0


def dendritic_sum(contributions, sigma: float = 50.0) -> float:
    """Saturating monotone summation of synapse-pair contributions.

    S(x) = x / (1 + x / sigma): strictly increasing, S(0) = 0, bounded by
    sigma.  Only monotonicity and saturation matter downstream.
    """
    total = float(np.sum(contributions)) if len(contributions) else 0.0
    if total < 0.0:
        raise ValueError("contributions must be >= 0")
    return total / (1.0 + total / sigma)


def _pulse_time(activation: float, sigma: float) -> float:
    return PULSE_T0 - activation / sigma


@dataclass(frozen=True)
class MSCNetwork:
    """All match neurons for one search, stored as grids over the candidate window.

    ``activations[i, j]`` belongs to mapping ``(dx_offsets[j], dy_offsets[i])``;
    entries outside the search disk are NaN.  A full-disk build covers every
    ``|t| <= radius`` exactly once.
    """

    dy_offsets: np.ndarray = field(repr=False)
    dx_offsets: np.ndarray = field(repr=False)
    in_disk: np.ndarray = field(repr=False)
    activations: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)
    sigma: float
    inhibition_strength: float
    coincidence_threshold: float

    def neuron_at(self, i: int, j: int) -> MatchNeuron:
        t = Translation(int(self.dx_offsets[j]), int(self.dy_offsets[i]))
        act = float(self.activations[i, j])
        return MatchNeuron(
            mapping=t,
            angle=t.angle_deg,
            radius=t.radius,
            activation=act,
            pulse_time=_pulse_time(act, self.sigma),
        )

    def match_neurons(self) -> list[MatchNeuron]:
        """Disk neurons in the canonical competition order."""
        n_dx = self.dx_offsets.size
        out = []
        for flat in self.order:
            i, j = divmod(int(flat), n_dx)
            if self.in_disk[i, j]:
                out.append(self.neuron_at(i, j))
        return out

    def map_select_neurons(self, winner: MatchNeuron | None = None) -> list[MapSelectNeuron]:
        """One gate per mapping; at most the winner's gate is open."""
        return [
            MapSelectNeuron(n.mapping, gate_open=(winner is not None and n.mapping == winner.mapping))
            for n in self.match_neurons()
        ]


def _coincidence_grid(
    moving: np.ndarray,
    reference: np.ndarray,
    weight: np.ndarray | None,
    dys: np.ndarray,
    dxs: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Weighted coincidence sums for every candidate in the window grid."""
    h, w = moving.shape
    nz_rows = np.flatnonzero(reference.any(axis=1))
    nz_cols = np.flatnonzero(reference.any(axis=0))
    r0, r1 = int(nz_rows[0]), int(nz_rows[-1]) + 1
    c0, c1 = int(nz_cols[0]), int(nz_cols[-1]) + 1
    box_h, box_w = r1 - r0, c1 - c0
    ref_box = np.ascontiguousarray(reference[r0:r1, c0:c1])
    w_box = None if weight is None else np.ascontiguousarray(weight[r0:r1, c0:c1])

    def pair_sum(mov_block: np.ndarray) -> np.ndarray:
        coincident = np.minimum(mov_block, ref_box)
        coincident = np.where(coincident >= threshold, coincident, 0.0)
        if w_box is not None:
            coincident = coincident * w_box
        return coincident.sum(axis=(-2, -1))

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
        return pair_sum(stack)

    sums = np.zeros((dys.size, dxs.size))
    for i, dy in enumerate(dys):
        yo0, yo1 = max(r0, dy), min(r1, h + dy)
        if yo0 >= yo1:
            continue
        for j, dx in enumerate(dxs):
            xo0, xo1 = max(c0, dx), min(c1, w + dx)
            if xo0 >= xo1:
                continue
            ref_part = reference[yo0:yo1, xo0:xo1]
            mov_part = moving[yo0 - dy : yo1 - dy, xo0 - dx : xo1 - dx]
            coincident = np.minimum(mov_part, ref_part)
            coincident = np.where(coincident >= threshold, coincident, 0.0)
            if weight is not None:
                coincident = coincident * weight[yo0:yo1, xo0:xo1]
            sums[i, j] = coincident.sum()
    return sums


def build_network(
    moving: SpatialArray,
    reference: SpatialArray,
    radius: int,
    weight: np.ndarray | None = None,
    *,
    center: Translation | None = None,
    window: int | None = None,
    coincidence_threshold: float = DEFAULT_COINCIDENCE_THRESHOLD,
    sigma: float = 0.5,
    inhibition_strength: float = DEFAULT_INHIBITION_STRENGTH,
) -> MSCNetwork:
    """Build one match neuron per candidate mapping from coincidence-pair sums.

    ``sigma`` is on the normalized (per synaptic capacity) scale, where a
    perfect full-strength match sums to about 1.
    """
    if moving.shape != reference.shape:
        raise ValueError(f"moving {moving.shape} and reference {reference.shape} must share dimensions")
    if weight is not None and weight.shape != reference.shape:
        raise ValueError("weight profile must match the array dimensions")
    if not reference.values.any():
        raise NoMatchError("reference has no matchable content")

    dys, dxs, in_disk, order = candidate_window(radius, center, window)
    sums = _coincidence_grid(moving.values, reference.values, weight, dys, dxs, coincidence_threshold)
    norm = _overlap_norm(moving.shape, weight, dys, dxs)
    with np.errstate(invalid="ignore", divide="ignore"):
        density = np.where(in_disk & (norm > 0.0), sums / norm, np.nan)
    activations = density / (1.0 + density / sigma)
    return MSCNetwork(
        dy_offsets=dys.copy(),
        dx_offsets=dxs.copy(),
        in_disk=in_disk,
        activations=activations,
        order=order,
        sigma=sigma,
        inhibition_strength=inhibition_strength,
        coincidence_threshold=coincidence_threshold,
    )


def compete(network: MSCNetwork, trace_path=None) -> MatchNeuron:
    """Lateral-inhibition competition among the match neurons.

    Each round every neuron is inhibited in proportion to the strongest
    *other* activation; neurons driven to zero drop out, and the round loop
    ends when at most one survives.  With a unique maximum the winner is the
    argmax of the initial activations; exact ties fall to the canonical
    order (smallest mapping radius, then smallest angle).  All activations
    zero means no winner and the caller falls back to the identity mapping.
    """
    flat = network.activations.ravel()[network.order]
    disk = network.in_disk.ravel()[network.order]
    act0 = np.where(np.isfinite(flat), flat, 0.0)[disk]
    picks = network.order[disk]
    if act0.size == 0 or act0.max() <= 0.0:
        raise NoMatchError("no active match neuron")

    beta = network.inhibition_strength
    act = act0.copy()
    alive = act > 0.0
    rows = []
    winner_flat = None
    for round_no in range(1, _MAX_COMPETITION_ROUNDS + 1):
        idx_alive = np.flatnonzero(alive)
        vals = act[idx_alive]
        leader_local = int(np.argmax(vals))  # first max in canonical order
        leader = int(idx_alive[leader_local])
        if trace_path is not None:
            i, j = divmod(int(picks[leader]), network.dx_offsets.size)
            rows.append((round_no, idx_alive.size, int(network.dx_offsets[j]), int(network.dy_offsets[i])))
        if idx_alive.size == 1:
            winner_flat = leader
            break
        m1 = vals.max()
        below = vals[vals < m1]
        if below.size == 0:
            # Dead heat among survivors; inhibition cannot separate them.
            winner_flat = leader
            break
        m2 = below.max()
        max_other = np.where(vals < m1, m1, m1 if (vals == m1).sum() > 1 else m2)
        vals = vals - beta * max_other
        act[idx_alive] = np.maximum(vals, 0.0)
        alive = act > 0.0
        if not alive.any():
            # Final round extinguished everyone at once: last leader wins.
            winner_flat = leader
            break
    if winner_flat is None:
        winner_flat = int(np.flatnonzero(alive)[np.argmax(act[alive])])

    if trace_path is not None:
        with open(trace_path, "w", encoding="ascii") as fh:
            fh.write("round,surviving,leader_dx,leader_dy\n")
            for r in rows:
                fh.write(",".join(str(v) for v in r) + "\n")

    i, j = divmod(int(picks[winner_flat]), network.dx_offsets.size)
    return network.neuron_at(i, j)


def gate_transfer(
    winner: MatchNeuron,
    retina: SpatialArray,
    canvas: SpatialArray,
    active_subset: SpatialArray,
) -> SpatialArray:
    """Winner-gated canvas update of the currently active retinal elements.

    Only elements active in this moment's subset move; repeated ticks with
    fresh random subsets converge the canvas to the full-transfer result.
    """
    t = winner.mapping
    return transfer(canvas, shift(retina, t), shift(active_subset, t))


def msc_best_translation(
    moving: SpatialArray,
    reference: SpatialArray,
    radius: int,
    weight: np.ndarray | None = None,
    *,
    center: Translation | None = None,
    window: int | None = None,
    coincidence_threshold: float = DEFAULT_COINCIDENCE_THRESHOLD,
    sigma: float = 0.5,
    inhibition_strength: float = DEFAULT_INHIBITION_STRENGTH,
    trace_path=None,
) -> MatchResult:
    """Drop-in matcher backed by the neuronal network; same candidate set and tie order
    as :func:`stabsim.registration.best_translation`."""
    network = build_network(
        moving,
        reference,
        radius,
        weight,
        center=center,
        window=window,
        coincidence_threshold=coincidence_threshold,
        sigma=sigma,
        inhibition_strength=inhibition_strength,
    )
    winner = compete(network, trace_path=trace_path)
    return MatchResult(
        translation=winner.mapping,
        score=MatchScore(max(winner.activation, 0.0)),
        score_map=network.activations,
        dy_offsets=network.dy_offsets,
        dx_offsets=network.dx_offsets,
    )


def radial_consistency(
    primary_winner: MatchNeuron,
    secondary_winner: MatchNeuron,
    sector_half_angle: float,
) -> bool:
    """True when the two winners lie in the same angular sector of the radial layout.

    Radii are free to differ; a zero-radius secondary is always consistent.
    Delegates to the engine's sector rule so the two formulations can never
    disagree.
    """
    return mappings_coherent(primary_winner.mapping, secondary_winner.mapping, sector_half_angle)


def random_active_subset(
    width: int,
    height: int,
    fraction: float,
    rng: np.random.Generator,
    element_pitch: float = 1.0,
) -> SpatialArray:
    """Uniform random element subset (without replacement) as a 0/1 mask."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    n = width * height
    k = int(round(fraction * n))
    mask = np.zeros(n)
    if k:
        mask[rng.choice(n, size=k, replace=False)] = 1.0
    return SpatialArray(mask.reshape(height, width), element_pitch)
