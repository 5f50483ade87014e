"""Noisy leaky integrate-and-fire networks, their exact spike statistics and
finite-range Gibbs approximations."""

from .blocks import Raster, SpikeBlock, Word, decode_word, encode_block, follows, last_firing_time
from .kernel import (
    ConditionalMoments,
    NoFireBounds,
    VariationConstants,
    conditional_moments,
    gauss_tail,
    integrated_spikes,
    log_gauss_tail,
    no_fire_bounds,
    potential,
    transition_prob,
    variation_constants,
)
from .markov import (
    ConvergenceError,
    GibbsChain,
    StateSpaceTooLarge,
    StationaryAnalysis,
    block_probability,
    build_chain,
    gibbs_ratio_bounds,
    kl_divergence,
    membrane_density,
    stationary,
)
from .maxent import (
    FitError,
    FitResult,
    Monomial,
    UpletPotential,
    block_to_uplet,
    chain_from_potential,
    eval_monomial,
    expectations,
    fit,
    model_divergence,
)
from .params import NetworkParams, ParamsError, load_params, validate_params
from .simulator import SimOutput, SimState, run, step
from .stats import (
    EmpiricalMeasure,
    empirical_blocks,
    empirical_kl,
    empirical_pairwise,
    empirical_rates,
    entropy_rate,
)

__version__ = "0.1.0"
