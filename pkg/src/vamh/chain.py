"""Generic Metropolis-Hastings machinery and component-wise combinations.

States are flat float arrays; component ``i`` occupies the slice
``target.slice(i)``.  Densities are handled as unnormalized log-densities
throughout, with ``-inf`` encoding zero density.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidStateError
from .rng import RandomStream

LOG_RATIO_CLAMP = 50.0


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized log-density on a product space X_1 x ... x X_d.

    ``log_pi_delta(x, i, value)``, when given, returns
    ``log_pi(x with component i set to value) - log_pi(x)`` and lets sweeps
    update the cached log-density without a full re-evaluation.
    """

    dims: tuple
    log_pi: Callable[[np.ndarray], float]
    support_component: Optional[tuple] = None
    log_pi_delta: Optional[Callable[[np.ndarray, int, np.ndarray], float]] = None
    offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(b) for b in self.dims)
        if not dims or min(dims) < 1:
            raise ConfigurationError("every component needs dimension >= 1")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "offsets", tuple(np.concatenate([[0], np.cumsum(dims)]).tolist()))

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.offsets[-1]

    def slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def in_support(self, x: np.ndarray) -> bool:
        if self.support_component is None:
            return math.isfinite(self.log_pi(x))
        return all(test(x[self.slice(i)]) for i, test in enumerate(self.support_component))


@dataclass(frozen=True)
class ComponentProposal:
    """Proposal kernel for one component, or the whole state when ``index`` is None.

    ``sample(x, rng)`` returns the candidate value for the component (an array
    of length b_i); ``log_density(x, value)`` is log p_i(x, value), possibly
    unnormalized by a state-free constant.
    """

    index: Optional[int]
    sample: Callable[[np.ndarray, RandomStream], np.ndarray]
    log_density: Callable[[np.ndarray, np.ndarray], float]
    state_independent: bool = False


@dataclass
class ChainState:
    x: np.ndarray
    log_pi_cache: float

    @classmethod
    def initial(cls, x, target: TargetDensity) -> "ChainState":
        x = np.array(x, dtype=float).reshape(-1)
        if x.size != target.size:
            raise ConfigurationError(f"state has length {x.size}, target expects {target.size}")
        lp = float(target.log_pi(x))
        if lp == -math.inf:
            raise InvalidStateError("initial state has zero target density")
        return cls(x, lp)

    def copy(self) -> "ChainState":
        return ChainState(self.x.copy(), self.log_pi_cache)


def mh_accept_log(log_pi_x: float, log_pi_y: float, log_p_xy: float, log_p_yx: float) -> float:
    """Metropolis-Hastings acceptance probability from log-densities.

    Returns ``min(1, pi(y) p(y, x) / (pi(x) p(x, y)))``.
    """
    if log_pi_x == -math.inf or math.isnan(log_pi_x):
        raise InvalidStateError("current state has zero target density")
    if log_pi_y == -math.inf:
        return 0.0
    if log_p_yx == -math.inf:
        return 0.0
    log_ratio = (log_pi_y - log_pi_x) + (log_p_yx - log_p_xy)
    if math.isnan(log_ratio):
        raise InvalidStateError("acceptance ratio is undefined")
    return min(1.0, math.exp(min(log_ratio, LOG_RATIO_CLAMP)))


def _candidate(state: ChainState, proposal: ComponentProposal, target: TargetDensity, rng: RandomStream):
    x = state.x
    value = np.asarray(proposal.sample(x, rng), dtype=float).reshape(-1)
    y = x.copy()
    if proposal.index is None:
        y[:] = value
        return y, value, x, float(target.log_pi(y))
    sl = target.slice(proposal.index)
    old = x[sl].copy()
    y[sl] = value
    if target.log_pi_delta is not None:
        log_pi_y = state.log_pi_cache + float(target.log_pi_delta(x, proposal.index, value))
    else:
        log_pi_y = float(target.log_pi(y))
    return y, value, old, log_pi_y


def mh_step(state: ChainState, proposal: ComponentProposal, target: TargetDensity, rng: RandomStream):
    """One Metropolis-Hastings update of one component (or of the whole state).

    Consumes exactly one proposal draw followed by one uniform.  Returns
    ``(new_state, accepted, alpha)``; on rejection ``new_state is state``.
    """
    y, value, old, log_pi_y = _candidate(state, proposal, target, rng)
    log_p_xy = float(proposal.log_density(state.x, value))
    log_p_yx = float(proposal.log_density(y, old))
    alpha = mh_accept_log(state.log_pi_cache, log_pi_y, log_p_xy, log_p_yx)
    u = rng.uniform()
    if u < alpha:
        return ChainState(y, log_pi_y), True, alpha
    return state, False, alpha


def _check_order(proposals: Sequence[ComponentProposal], target: TargetDensity) -> None:
    idx = [p.index for p in proposals]
    if len(idx) != target.d or sorted(i for i in idx if i is not None) != list(range(target.d)):
        raise ConfigurationError(
            f"expected one proposal per component 0..{target.d - 1}, got indices {idx}"
        )


def composition_sweep(state: ChainState, proposals: Sequence[ComponentProposal],
                      target: TargetDensity, rng: RandomStream):
    """Deterministic-scan sweep: update components in the order given.

    Each update conditions on the components already updated in this sweep.
    Returns ``(new_state, [(accepted, alpha), ...])`` in sweep order.
    """
    _check_order(proposals, target)
    out = []
    for prop in proposals:
        state, acc, alpha = mh_step(state, prop, target, rng)
        out.append((acc, alpha))
    return state, out


def _check_weights(weights, d: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (d,) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ConfigurationError("mixing weights must be d positive numbers summing to 1")
    return w


def mixing_step(state: ChainState, proposals: Sequence[ComponentProposal], weights,
                target: TargetDensity, rng: RandomStream):
    """Random-scan step: pick component i with probability r_i and update it.

    Returns ``(new_state, chosen, accepted)``.
    """
    _check_order(proposals, target)
    w = _check_weights(weights, target.d)
    u = rng.uniform()
    chosen = min(int(np.searchsorted(np.cumsum(w), u, side="right")), target.d - 1)
    prop = next(p for p in proposals if p.index == chosen)
    state, acc, _ = mh_step(state, prop, target, rng)
    return state, chosen, acc


class Composition:
    """Kernel object: one deterministic-scan sweep per step."""

    def __init__(self, proposals, target: TargetDensity):
        _check_order(proposals, target)
        self.proposals = list(proposals)
        self.target = target
        self.d = target.d

    def __call__(self, state, rng):
        acc = np.zeros(self.d, dtype=bool)
        tried = np.ones(self.d, dtype=bool)
        for prop in self.proposals:
            state, a, _ = mh_step(state, prop, self.target, rng)
            acc[prop.index] = a
        return state, acc, tried


class Mixing:
    """Kernel object: one random-scan component update per step."""

    def __init__(self, proposals, weights, target: TargetDensity):
        _check_order(proposals, target)
        self.proposals = list(proposals)
        self.weights = _check_weights(weights, target.d)
        self.target = target
        self.d = target.d

    def __call__(self, state, rng):
        acc = np.zeros(self.d, dtype=bool)
        tried = np.zeros(self.d, dtype=bool)
        state, chosen, a = mixing_step(state, self.proposals, self.weights, self.target, rng)
        acc[chosen] = a
        tried[chosen] = True
        return state, acc, tried


class SingleBlock:
    """Kernel object: one whole-state Metropolis-Hastings update per step."""

    d = 1

    def __init__(self, proposal: ComponentProposal, target: TargetDensity):
        if proposal.index is not None:
            raise ConfigurationError("single-block kernels need a whole-state proposal")
        self.proposal = proposal
        self.target = target

    def __call__(self, state, rng):
        state, a, _ = mh_step(state, self.proposal, self.target, rng)
        return state, np.array([a]), np.array([True])


@dataclass
class ChainRun:
    g: np.ndarray
    accepted: np.ndarray  # (n, d) per-component acceptance flags
    acceptance_rates: np.ndarray
    final_state: ChainState

    @property
    def ergodic_average(self) -> float:
        return float(np.mean(self.g))

    @property
    def accepted_any(self) -> np.ndarray:
        return self.accepted.any(axis=1)


def run_chain(initial: ChainState, kernel, n: int, g: Callable[[np.ndarray], float],
              rng: RandomStream) -> ChainRun:
    """Run ``n`` kernel steps, recording g of each post-update state."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    d = kernel.d
    values = np.empty(n)
    accepted = np.zeros((n, d), dtype=bool)
    tries = np.zeros(d)
    state = initial
    for k in range(n):
        state, acc, tried = kernel(state, rng)
        accepted[k] = acc
        tries += tried
        values[k] = g(state.x)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = accepted.sum(axis=0) / tries
    return ChainRun(values, accepted, rates, state)


def write_trace_csv(path, g: np.ndarray, accepted: np.ndarray, header: dict | None = None) -> None:
    """Write ``step,g,accepted_any,acc_1..acc_d`` with a JSON comment header."""
    accepted = np.asarray(accepted, dtype=bool)
    if accepted.ndim == 1:
        accepted = accepted[:, None]
    d = accepted.shape[1]
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["step", "g", "accepted_any"] + [f"acc_{i + 1}" for i in range(d)])
        for k in range(len(g)):
            row = accepted[k]
            w.writerow([k + 1, repr(float(g[k])), int(row.any())] + [int(a) for a in row])
