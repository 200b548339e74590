"""Model-agnostic decoding engine for masked diffusion language models."""

from .core import (
    AnyOrderMinEntropy,
    ArMed,
    DecodePolicy,
    DecodeTrace,
    DecodedCell,
    ExitReason,
    FixedK,
    Greedy,
    LeftToRight,
    MaskedSequence,
    Med,
    Sampled,
    StepRecord,
    Template,
    Vocab,
    masked_positions,
    new_canvas,
)
from .engine import Session, decode, decode_posterior, maybe_early_exit, replay
from .errors import (
    CapExceeded,
    ConfigError,
    DecodeError,
    DegenerateConditional,
    EmptyCandidates,
    EmptyData,
    InconsistentTrace,
    LengthError,
    LengthMismatch,
    ModelError,
    NoProgress,
    OverlapError,
    ProtocolError,
    ServerError,
    SupportMismatch,
    Timeout,
)
from .metrics import BehaviorStats, behavior_stats, benchmark
from .models import (
    ExactJointModel,
    PositionReport,
    QuerySpec,
    RemoteModel,
    SampleSpec,
    TabularMDLM,
    train_tabular_mdlm,
)
from .schedulers import (
    Selection,
    SelectionRule,
    block_window,
    select_ar_med,
    select_left_to_right,
    select_med,
    select_min_entropy,
)
from .scoring import (
    ChainScore,
    TraceScore,
    chain_filter_score,
    induced_distribution,
    per_step_kl_bound,
    phi_score,
    schedule_kl_exact,
)

__version__ = "0.1.0"
