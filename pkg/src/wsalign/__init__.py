"""Weakly-supervised WFST forced alignment of disfluent speech."""

from .aligner import (
    ADAPTIVE,
    Alignment,
    AlignmentError,
    Event,
    InfeasibleAlignmentError,
    Mode,
    Segment,
    adaptive_beta,
    compute_oer,
    force_align,
    viterbi_oracle,
)
from .graphs import (
    EventKind,
    LogProbMatrix,
    PhoneTranscript,
    PhoneVocab,
    build_biased_bigram,
    build_ctc_topology,
    build_emission_graph,
    build_linear_fsa,
    build_modified_fsa,
)
from .metrics import (
    BoundarySet,
    Level,
    MetricsReport,
    boundary_metrics,
    frame_overlap,
    relative_reduction,
    severity_report,
)
from .synth import DisfluencySpec, RefAlignment, build_corpus, corrupt, synth_emissions

__version__ = "0.1.0"
