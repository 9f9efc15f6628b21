"""Experiment orchestration: single conditions, gain sweeps, backend comparisons.

Every run is a pure function of its configuration: traces and engine seeds
derive from the master seed, outputs carry no timestamps, and the manifest
records the resolved configuration plus a content hash of every file, so a
rerun from the manifest reproduces each output byte for byte.

Within a repeat the same trace drives every gain (one simulated fixation
observed under each condition), which keeps cross-gain comparisons paired.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .arrays import write_pgm
from .config import RunConfig, TRACE_FILE, config_to_dict
from .engine import (
    BACKEND_FUNCTIONAL,
    BACKEND_MSC,
    FixationResult,
    run_fixation,
    write_decision_log,
)
from .eye import EyeTrace, generate_drift, load_trace
from .metrics import (
    GainSweepRow,
    RunMetrics,
    compute_run_metrics,
    discontinuity_statistic,
    sweep_rows,
    track_stimulus,
)
from .plots import sweep_plot_svg
from .scene import SceneConfig

__all__ = [
    "SweepReport",
    "ComparisonReport",
    "derive_seed",
    "cell_trace",
    "run_cell",
    "run_sweep",
    "compare_backends",
    "simulate_condition",
]

_DOMAIN_TRACE = 0
_DOMAIN_ENGINE = 1


def derive_seed(master_seed: int, *key: int) -> int:
    """Deterministic child seed for one role of one run cell."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def cell_trace(cfg: RunConfig, repeat: int) -> EyeTrace:
    """Eye trace for one repeat; shared by all gains of that repeat."""
    spec = cfg.trace
    if spec.kind == TRACE_FILE:
        return load_trace(spec.path)
    seed = derive_seed(cfg.master_seed, _DOMAIN_TRACE, repeat) ^ spec.seed
    return generate_drift(seed, spec.duration, spec.diffusion, spec.rate)


def scene_for_gain(cfg: RunConfig, gain: float) -> SceneConfig:
    return replace(cfg.scene, gain=gain)


def run_cell(
    cfg: RunConfig,
    gain: float,
    repeat: int,
    trace: EyeTrace | None = None,
    backend: str | None = None,
) -> tuple[FixationResult, RunMetrics]:
    """Run one (gain, repeat) condition and reduce it to metrics."""
    if trace is None:
        trace = cell_trace(cfg, repeat)
    scene = scene_for_gain(cfg, gain)
    engine = cfg.engine if backend is None else replace(cfg.engine, matcher_backend=backend)
    gain_index = cfg.gains.index(gain) if gain in cfg.gains else 0
    seed = derive_seed(cfg.master_seed, _DOMAIN_ENGINE, gain_index, repeat)
    result = run_fixation(trace, scene, engine, seed=seed)
    metrics = compute_run_metrics(result, scene)
    return result, metrics


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out: Path, cfg: RunConfig, files: list[Path]) -> Path:
    manifest = {
        "schema": "stabsim-manifest-1",
        "config": config_to_dict(cfg),
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in sorted(files)},
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass(frozen=True)
class SweepReport:
    rows: list[GainSweepRow]
    discontinuity: float | None
    output_dir: Path
    manifest_path: Path
    sweep_csv: Path
    decision_logs: list[Path] = field(repr=False, default_factory=list)


def run_sweep(cfg: RunConfig) -> SweepReport:
    """Run the full (gain x repeat) grid and write the sweep report files."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    decisions_dir = out / "decisions"
    decisions_dir.mkdir(exist_ok=True)

    from .metrics import write_sweep_csv  # local import keeps module load light

    files: list[Path] = []
    cells: dict[float, list[RunMetrics]] = {g: [] for g in cfg.gains}
    logs: list[Path] = []
    for repeat in range(cfg.repeats):
        trace = cell_trace(cfg, repeat)
        for gain in cfg.gains:
            result, metrics = run_cell(cfg, gain, repeat, trace=trace)
            cells[gain].append(metrics)
            log = decisions_dir / f"decisions_g{gain:g}_r{repeat}.csv"
            write_decision_log(result.decisions, log)
            logs.append(log)
            files.append(log)

    rows = sweep_rows(cells)
    try:
        disc = discontinuity_statistic(rows)
    except ValueError:
        disc = None

    sweep_csv = out / "sweep.csv"
    write_sweep_csv(rows, sweep_csv, disc)
    files.append(sweep_csv)

    if cfg.plots:
        svg = out / "sweep_ratio.svg"
        sweep_plot_svg(rows, svg, title="perceived motion ratios by gain")
        files.append(svg)

    manifest = _write_manifest(out, cfg, files)
    return SweepReport(
        rows=rows,
        discontinuity=disc,
        output_dir=out,
        manifest_path=manifest,
        sweep_csv=sweep_csv,
        decision_logs=logs,
    )


@dataclass(frozen=True)
class ComparisonReport:
    agreement: float
    steps_compared: int
    disagreements: int
    canvases_identical: bool
    table_path: Path
    summary_path: Path


def compare_backends(cfg: RunConfig) -> ComparisonReport:
    """Run every cell under both matcher backends and tabulate step agreement.

    A step agrees when mode, primary, and secondary mapping all coincide;
    the table lists only disagreeing steps.  Canvas identity is checked
    elementwise across the whole run.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    total = 0
    differing = 0
    canvases_ok = True
    lines = ["gain,repeat,step,mode_functional,mode_msc,mp_functional,mp_msc,ms_functional,ms_msc"]
    for repeat in range(cfg.repeats):
        trace = cell_trace(cfg, repeat)
        for gain in cfg.gains:
            res_f, _ = run_cell(cfg, gain, repeat, trace=trace, backend=BACKEND_FUNCTIONAL)
            res_m, _ = run_cell(cfg, gain, repeat, trace=trace, backend=BACKEND_MSC)
            for i, (df, dm) in enumerate(zip(res_f.decisions, res_m.decisions)):
                total += 1
                same = df.mode == dm.mode and df.m_p == dm.m_p and df.m_s == dm.m_s
                if not same:
                    differing += 1
                    ms_f = f"({df.m_s.dx} {df.m_s.dy})" if df.m_s else ""
                    ms_m = f"({dm.m_s.dx} {dm.m_s.dy})" if dm.m_s else ""
                    lines.append(
                        f"{gain:g},{repeat},{i},{df.mode.value},{dm.mode.value},"
                        f"({df.m_p.dx} {df.m_p.dy}),({dm.m_p.dx} {dm.m_p.dy}),{ms_f},{ms_m}"
                    )
            for cf, cm in zip(res_f.canvases, res_m.canvases):
                if not np.array_equal(cf.values, cm.values):
                    canvases_ok = False
                    break

    table_path = out / "comparison.csv"
    table_path.write_text("\n".join(lines) + "\n", encoding="ascii")
    agreement = 1.0 if total == 0 else (total - differing) / total
    summary = {
        "agreement_fraction": agreement,
        "steps_compared": total,
        "disagreements": differing,
        "canvases_identical": canvases_ok,
    }
    summary_path = out / "comparison_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ComparisonReport(
        agreement=agreement,
        steps_compared=total,
        disagreements=differing,
        canvases_identical=canvases_ok,
        table_path=table_path,
        summary_path=summary_path,
    )


def simulate_condition(cfg: RunConfig, gain: float | None = None) -> dict[str, Path]:
    """Run one condition, dumping the decision log, percept track, and canvas snapshots."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.gains[0] if gain is None else gain

    trace = cell_trace(cfg, 0)
    scene = scene_for_gain(cfg, g)
    seed = derive_seed(cfg.master_seed, _DOMAIN_ENGINE, 0, 0)
    result = run_fixation(trace, scene, cfg.engine, seed=seed)

    paths: dict[str, Path] = {}
    decisions_path = out / "decisions.csv"
    write_decision_log(result.decisions, decisions_path)
    paths["decisions"] = decisions_path

    percept = track_stimulus(result.canvases, result.refs)
    percept_path = out / "percept.csv"
    with open(percept_path, "w", encoding="ascii") as fh:
        fh.write("step,x,y,valid\n")
        for i in range(len(percept)):
            x, y = percept.positions[i]
            xs = "%.9g" % x if percept.valid[i] else ""
            ys = "%.9g" % y if percept.valid[i] else ""
            fh.write(f"{i},{xs},{ys},{int(percept.valid[i])}\n")
    paths["percept"] = percept_path

    if cfg.snapshot_every > 0:
        for i in range(0, len(result.canvases), cfg.snapshot_every):
            snap = out / f"canvas_{i:06d}.pgm"
            write_pgm(result.canvases[i], snap)
            paths[f"canvas_{i:06d}"] = snap

    files = list(paths.values())
    paths["manifest"] = _write_manifest(out, cfg, files)
    return paths
