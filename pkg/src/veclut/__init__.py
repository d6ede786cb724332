"""Vector-LUT GeMM for ternary weights and INT8 activations.

One packed weight byte indexes a table row holding the partial sums for a
whole tile of tokens, so a single lookup serves every token in the tile.
"""

from .core import (
    GROUP_SIZES,
    ActivationView,
    GroupSchedule,
    KernelConfig,
    KernelStats,
    LutTile,
    OutputMatrix,
    PackedWeights,
    PackingMode,
    TernaryMatrix,
    block_bound,
    zero_index,
)
from .errors import (
    BlockBoundViolation,
    ConfigInfeasible,
    CorruptPayload,
    DivisibilityError,
    IndexOutOfRange,
    InvalidTrit,
    ModeMismatch,
    NonFiniteInput,
    ShapeMismatch,
    UnrepresentableK,
    VecLutError,
)
from .kernel import (
    FeatureMajorActivation,
    GemmProblem,
    apply_scales,
    config_for_schedule,
    full_lut_bytes,
    hierarchical_accumulate,
    mpgemm,
    quantize_activation,
    select_tiles,
    transpose_to_token_major,
)
from .packing import (
    bits_per_weight,
    make_group_schedule,
    pack_group,
    pack_matrix,
    unpack_index,
    unpack_matrix,
)
from .precompute import get_sign, precompute_topological, precompute_vanilla, topo_order
from .reference import mad_gemm, naive_gemm_f32, naive_gemm_int, scalar_lut_gemm

__version__ = "0.1.0"
