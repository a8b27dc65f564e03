"""Component-wise Metropolis-Hastings samplers with regenerative standard errors.

Modules by role:

- :mod:`vamh.chain`: generic Metropolis-Hastings updates, deterministic and random scans
- :mod:`vamh.bounds`: closed-form total-variation bounds and an exact discrete oracle
- :mod:`vamh.regen`: split-chain regeneration and regenerative confidence intervals
- :mod:`vamh.toy`, :mod:`vamh.glmm`: the two worked models with compiled samplers
- :mod:`vamh.harness`, :mod:`vamh.cli`: replication studies and the ``vamh`` command
"""

from .chain import (ChainState, ComponentProposal, Composition, Mixing, SingleBlock, TargetDensity,
                    composition_sweep, mh_accept_log, mh_step, mixing_step, run_chain)
from .errors import (ConfigurationError, InsufficientRegenerationsError, MinorizationViolationError,
                     VamhError)
from .regen import (MinorizationSpec, Tour, cwis_regen_prob, mty_regen_prob, rs_confidence_interval,
                    rs_point_estimate, rs_variance, run_split_chain, split_sweep)
from .rng import RandomStream

__all__ = [
    "ChainState", "ComponentProposal", "Composition", "Mixing", "SingleBlock", "TargetDensity",
    "composition_sweep", "mh_accept_log", "mh_step", "mixing_step", "run_chain",
    "ConfigurationError", "InsufficientRegenerationsError", "MinorizationViolationError", "VamhError",
    "MinorizationSpec", "Tour", "cwis_regen_prob", "mty_regen_prob", "rs_confidence_interval",
    "rs_point_estimate", "rs_variance", "run_split_chain", "split_sweep", "RandomStream",
]
