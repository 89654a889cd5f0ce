"""Matrix-entropy analysis and token pruning toolkit.

Profiles layer-wise matrix entropy of transformer query/key states,
detects the entropy collapse layer, scores tokens by head-wise matrix
entropy (accelerated through Gram duality), selects a budgeted keep set,
and models the resulting FLOPs reduction. A deterministic toy transformer
exercises the whole pipeline at desk scale.
"""

__version__ = "0.1.0"

from .benchmark import run_bench
from .ecl_detector import (
    EclReport,
    EntropyProfile,
    detect_ecl,
    layerwise_profile,
    synth_collapse_dump,
)
from .errors import (
    DataError,
    DegenerateInputError,
    EntropruneError,
    ManifestError,
    NoCollapseError,
    NpyFormatError,
    NumericError,
    TruncationError,
    UnsupportedLayoutError,
    ValidationError,
)
from .flops_model import (
    FlopsConfig,
    approx_reduction,
    flops_report,
    layer_flops_exact,
    layer_flops_simplified,
    pruning_overhead,
    reduction_ratio,
    remaining_pct,
)
from .matrix_entropy import (
    eigenvalues_sym,
    renyi_entropy,
    topk_entropy,
    trace_normalized_covariance,
    von_neumann_entropy,
)
from .sim_transformer import (
    CalibrationSample,
    PrunePlan,
    SimConfig,
    sim_forward,
    sim_init,
    sim_run_pipeline,
)
from .spectral_fastpath import (
    CenteredMatrix,
    center_and_row_normalize,
    entropy_fast,
    entropy_naive,
    gram_small_side,
    spectrum_fast,
    speedup_theoretical,
)
from .tensor_io import ActivationDump, SampleStates, load_dump, read_npy, save_dump, write_npy
from .token_scorer import (
    KeepMask,
    apply_mask,
    headwise_reshape,
    parse_budget,
    score_tokens,
    select_keep,
    token_entropy,
)
