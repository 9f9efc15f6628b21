"""stabsim: a deterministic simulator of gaze-contingent stimulus stabilization.

The package models how a percept stays stable under fixational eye drift:
spatial activation arrays, translation registration against references
captured at fixation onset, direction-contingent selection between
stabilizing and veridical mappings, a neuronal winner-take-all matcher that
computes the same answers, and a sweep harness that maps perceived motion
against gain.
"""

from .arrays import MatchScore, SpatialArray, Translation, dot, shift, transfer
from .engine import (
    EfferentConfig,
    EngineConfig,
    FixationResult,
    MappingDecision,
    MappingMode,
    run_fixation,
    select_mode,
)
from .eye import (
    STRONG_FIXATION_DIFFUSION,
    WEAKER_FIXATION_DIFFUSION,
    EyeTrace,
    generate_drift,
    load_trace,
    save_trace,
)
from .metrics import PerceptTrace, closed_form_percept, motion_magnitude, track_stimulus
from .registration import (
    MatchResult,
    ReferenceSet,
    best_translation,
    capture_references,
    separate_stimulus,
)
from .scene import RetinalFrame, SceneConfig, render_retina, stimulus_retinal_pos, stimulus_world_pos

__version__ = "0.1.0"

__all__ = [
    "SpatialArray",
    "Translation",
    "MatchScore",
    "shift",
    "dot",
    "transfer",
    "EyeTrace",
    "generate_drift",
    "load_trace",
    "save_trace",
    "STRONG_FIXATION_DIFFUSION",
    "WEAKER_FIXATION_DIFFUSION",
    "SceneConfig",
    "RetinalFrame",
    "render_retina",
    "stimulus_world_pos",
    "stimulus_retinal_pos",
    "ReferenceSet",
    "MatchResult",
    "best_translation",
    "capture_references",
    "separate_stimulus",
    "EngineConfig",
    "EfferentConfig",
    "MappingMode",
    "MappingDecision",
    "FixationResult",
    "select_mode",
    "run_fixation",
    "PerceptTrace",
    "track_stimulus",
    "motion_magnitude",
    "closed_form_percept",
    "__version__",
]
