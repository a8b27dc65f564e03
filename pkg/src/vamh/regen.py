"""Split-chain simulation and regenerative-simulation estimators.

Trace convention used everywhere in this module: entry ``k`` of a split
trace holds ``g(X_{k+1})`` together with ``delta_k``, the regeneration
indicator drawn on the jump ``X_k -> X_{k+1}``.  A row with ``delta = 1``
therefore starts a fresh tour.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .chain import ChainState, ComponentProposal, TargetDensity, composition_sweep, _check_order
from .errors import ConfigurationError, InsufficientRegenerationsError, MinorizationViolationError
from .rng import RandomStream

Z_975 = 1.959964
VIOLATION_TOL = 1e-9


def _zero(_x):
    return 0.0


@dataclass(frozen=True)
class MinorizationSpec:
    """Per-component ingredients of the component-wise minorization.

    Every function maps a full-length state vector to a log value; each one
    must read only the components its role allows.  ``cwis_regen_prob`` calls
    them on the intermediate sweep states ``z_{i-1} = (y_[i-1], x^[i])``
    (for ``log_s``, ``log_h1``, ``log_h2``) and ``z_i = (y_[i], x^[i+1])``
    (for ``log_q``, ``log_g1``, ``log_g2``).

    With ``q_is_proposal`` the q_i / p_i ratio is cancelled analytically, which
    is the state-independent (CWIS) case q_i = p_i.  ``log_w`` is only used by
    the sandwich spot-check.
    """

    log_g1: tuple
    log_g2: tuple
    log_h1: tuple
    log_h2: tuple
    log_c: np.ndarray
    log_s: Optional[tuple] = None
    log_q: Optional[tuple] = None
    q_is_proposal: bool = True
    log_w: Optional[tuple] = None

    def __post_init__(self):
        d = len(self.log_g1)
        if not (len(self.log_g2) == len(self.log_h1) == len(self.log_h2) == d):
            raise ConfigurationError("g/h function lists must all have length d")
        log_c = np.broadcast_to(np.asarray(self.log_c, dtype=float), (d,)).copy()
        object.__setattr__(self, "log_c", log_c)
        if self.log_s is None:
            object.__setattr__(self, "log_s", (_zero,) * d)
        if not self.q_is_proposal and self.log_q is None:
            raise ConfigurationError("log_q is required unless q_is_proposal")

    @property
    def d(self) -> int:
        return len(self.log_g1)


def check_sandwich(spec: MinorizationSpec, target: TargetDensity, x: np.ndarray, tol: float = 1e-9) -> bool:
    """Spot-check g_i1 g_i2 <= pi / w_i <= h_i1 h_i2 at state x (log scale)."""
    if spec.log_w is None:
        raise ConfigurationError("sandwich check needs log_w")
    lp = target.log_pi(x)
    for i in range(spec.d):
        log_r = lp - spec.log_w[i](x)
        lo = spec.log_g1[i](x) + spec.log_g2[i](x)
        hi = spec.log_h1[i](x) + spec.log_h2[i](x)
        if lo > log_r + tol or log_r > hi + tol:
            return False
    return True


def mty_regen_prob(log_r_prev: float, log_r_curr: float, log_c: float) -> float:
    """Regeneration probability for an accepted independence-sampler jump.

    ``log_r`` is log(pi / p) at the previous and current state.  This is
    ``min(1, c/r_prev) min(1, r_curr/c) / min(1, r_curr/r_prev)``, which
    splits into three cases: both ratios below c give max(r)/c, both above
    give max(c/r), otherwise 1.
    """
    a = log_r_prev - log_c
    b = log_r_curr - log_c
    if a < 0 and b < 0:
        return math.exp(max(a, b))
    if a > 0 and b > 0:
        return math.exp(-min(a, b))
    return 1.0


def _intermediate(prev: np.ndarray, curr: np.ndarray, target: TargetDensity, i: int) -> np.ndarray:
    z = prev.copy()
    stop = target.offsets[i + 1]
    z[:stop] = curr[:stop]
    return z


def cwis_regen_prob(prev, curr, spec: MinorizationSpec, target: TargetDensity,
                    proposals: Sequence[ComponentProposal]) -> float:
    """Regeneration probability on a fully accepted sweep ``prev -> curr``.

    Product over components of
    ``s_i min(1, g_i2/(c_i h_i2)) q_i min(1, c_i g_i1/h_i1)`` divided by
    ``p_i alpha_i``, evaluated in log space along the sweep.
    """
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    by_index = {p.index: p for p in proposals}
    z_prev = prev
    lp_prev = target.log_pi(z_prev)
    total = 0.0
    for i in range(spec.d):
        z = _intermediate(prev, curr, target, i)
        lp = target.log_pi(z)
        sl = target.slice(i)
        lc = spec.log_c[i]
        num = spec.log_s[i](z_prev)
        if num == -math.inf:
            return 0.0
        num += min(0.0, spec.log_g2[i](z) - lc - spec.log_h2[i](z_prev))
        num += min(0.0, lc + spec.log_g1[i](z) - spec.log_h1[i](z_prev))
        if num == -math.inf:
            return 0.0
        prop = by_index[i]
        log_p_fwd = prop.log_density(z_prev, curr[sl])
        log_p_bwd = prop.log_density(z, prev[sl])
        den = min(0.0, (lp - lp_prev) + (log_p_bwd - log_p_fwd))
        if not spec.q_is_proposal:
            num += spec.log_q[i](z)
            den += log_p_fwd
        factor = num - den
        if factor > VIOLATION_TOL:
            raise MinorizationViolationError(
                f"component {i} regeneration factor exp({factor:.3g}) exceeds one")
        total += factor
        z_prev, lp_prev = z, lp
    if total > VIOLATION_TOL:
        raise MinorizationViolationError(f"regeneration probability exp({total:.3g}) exceeds one")
    return min(1.0, math.exp(total))


@dataclass
class SplitStep:
    state: ChainState
    delta: int
    all_accepted: bool


def split_sweep(state: ChainState, proposals, target: TargetDensity, spec: MinorizationSpec,
                rng: RandomStream, delta_rng: RandomStream) -> SplitStep:
    """Composition sweep followed by the regeneration draw.

    The indicator uses ``delta_rng`` so the state path is the same as that of
    a plain ``composition_sweep`` driven by ``rng``.  A rejected component
    forces ``delta = 0`` without drawing.
    """
    prev = state.x
    new, per = composition_sweep(state, proposals, target, rng)
    all_acc = all(a for a, _ in per)
    if not all_acc:
        return SplitStep(new, 0, False)
    prob = cwis_regen_prob(prev, new.x, spec, target, proposals)
    delta = int(delta_rng.uniform() < prob)
    return SplitStep(new, delta, True)


@dataclass
class SplitTrace:
    g: np.ndarray
    delta: np.ndarray
    all_accepted: np.ndarray
    final_state: Optional[ChainState] = None

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header is not None:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["step", "g", "delta", "all_accepted"])
            for k in range(len(self.g)):
                w.writerow([k + 1, repr(float(self.g[k])), int(self.delta[k]), int(self.all_accepted[k])])


def run_split_chain(initial: ChainState, proposals, target: TargetDensity, spec: MinorizationSpec,
                    n: int, g: Callable[[np.ndarray], float], rng: RandomStream) -> SplitTrace:
    _check_order(proposals, target)
    delta_rng = rng.substream(1)
    gs = np.empty(n)
    deltas = np.zeros(n, dtype=np.int8)
    accs = np.zeros(n, dtype=bool)
    state = initial
    for k in range(n):
        step = split_sweep(state, proposals, target, spec, rng, delta_rng)
        state = step.state
        gs[k] = g(state.x)
        deltas[k] = step.delta
        accs[k] = step.all_accepted
    return SplitTrace(gs, deltas, accs, state)


# -- tours -------------------------------------------------------------------

@dataclass(frozen=True)
class Tour:
    N: int
    S: float


def tour_arrays(g, delta):
    """Tour lengths and sums from a split trace, dropping both partial tours."""
    g = np.asarray(g, dtype=float)
    starts = np.flatnonzero(np.asarray(delta) == 1)
    if starts.size == 0:
        raise InsufficientRegenerationsError("no regeneration in the trace")
    if starts.size == 1:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    lengths = np.diff(starts).astype(np.int64)
    sums = np.add.reduceat(g[starts[0]:starts[-1]], starts[:-1] - starts[0])
    return lengths, sums


def collect_tours(g, delta) -> list:
    lengths, sums = tour_arrays(g, delta)
    return [Tour(int(n), float(s)) for n, s in zip(lengths, sums)]


class TourAccumulator:
    """Streams trace chunks into tours, carrying the open tour between chunks."""

    def __init__(self):
        self.lengths: list = []
        self.sums: list = []
        self.steps = 0
        self.started = False
        self._n = 0
        self._s = 0.0
        self.first_regeneration: Optional[int] = None

    @property
    def count(self) -> int:
        return len(self.lengths)

    def feed(self, g, delta, max_tours: Optional[int] = None) -> int:
        """Consume a chunk; stop once ``max_tours`` tours are complete.

        Returns the number of chunk entries consumed.
        """
        g = np.asarray(g, dtype=float)
        starts = np.flatnonzero(np.asarray(delta) == 1)
        pos = 0
        for st in starts:
            if self.started:
                self._n += st - pos
                self._s += float(g[pos:st].sum())
                self.lengths.append(self._n)
                self.sums.append(self._s)
                if max_tours is not None and len(self.lengths) >= max_tours:
                    self.steps += st
                    return st
            else:
                self.started = True
                self.first_regeneration = self.steps + st
            self._n, self._s, pos = 0, 0.0, st
        if self.started:
            self._n += len(g) - pos
            self._s += float(g[pos:].sum())
        self.steps += len(g)
        return len(g)

    def arrays(self):
        return np.asarray(self.lengths, dtype=np.int64), np.asarray(self.sums, dtype=float)


def _as_arrays(tours):
    if isinstance(tours, tuple) and len(tours) == 2 and not isinstance(tours[0], Tour):
        return np.asarray(tours[0], dtype=float), np.asarray(tours[1], dtype=float)
    return (np.array([t.N for t in tours], dtype=float), np.array([t.S for t in tours], dtype=float))


def rs_point_estimate(tours) -> float:
    N, S = _as_arrays(tours)
    if N.size == 0:
        raise InsufficientRegenerationsError("no complete tours")
    return float(S.sum() / N.sum())


def rs_variance(tours) -> float:
    N, S = _as_arrays(tours)
    R = N.size
    if R == 0:
        raise InsufficientRegenerationsError("no complete tours")
    if R == 1:
        warnings.warn("a single tour gives a degenerate variance estimate of 0", RuntimeWarning)
        return 0.0
    g_bar = S.sum() / N.sum()
    n_bar = N.mean()
    return float(np.sum((S - N * g_bar) ** 2) / (R * n_bar ** 2))


@dataclass(frozen=True)
class RegenEstimate:
    g_bar: float
    xi2_hat: float
    R: int
    half_width: float
    level: float = 0.95

    @property
    def mcse(self) -> float:
        return math.sqrt(self.xi2_hat / self.R)


def z_value(level: float) -> float:
    if abs(level - 0.95) < 1e-12:
        return Z_975
    if not 0 < level < 1:
        raise ConfigurationError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def rs_confidence_interval(tours, level: float = 0.95) -> RegenEstimate:
    N, S = _as_arrays(tours)
    R = N.size
    if R < 2:
        raise InsufficientRegenerationsError(f"need at least 2 tours, got {R}")
    g_bar = rs_point_estimate((N, S))
    xi2 = rs_variance((N, S))
    hw = z_value(level) * math.sqrt(xi2) / math.sqrt(R)
    return RegenEstimate(g_bar, xi2, R, hw, level)


def write_tours_csv(path, lengths, sums, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["tour", "N", "S"])
        for r, (n, s) in enumerate(zip(lengths, sums), start=1):
            w.writerow([r, int(n), repr(float(s))])
