"""CPU reference engine for block-filtered sparse prefill attention."""

from .analysis import cost_model, density_stats, error_bound_check
from .blocks import BlockGeometry, partition_and_pool
from .config import BflaConfig
from .core import WorkloadTensors, dense_causal_attention, frobenius_norm, gen_workload, stable_softmax_row
from .errors import ConfigError, ContractViolation, DegenerateRowError, SizeGuardError
from .kernel import reference_masked_attention, sparse_prefill_attention
from .pipeline import run, sweep
from .stage1 import block_scores, block_softmax, causal_block_mask, keep_mass_select
from .stage2 import (
    RescueConfig,
    TileMask,
    apply_band_and_sink,
    expand_to_tiles,
    mix_chi,
    mix_psi,
    speculative_rescue,
)

__version__ = "0.1.0"
