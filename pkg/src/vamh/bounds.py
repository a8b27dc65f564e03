"""Total-variation bounds and an exact oracle for small discrete chains.

Discrete instances live on a product of finite sets ``{0..K_1-1} x ... x
{0..K_d-1}``; states are enumerated in C order (``np.ravel_multi_index``).
Every kernel here is assembled by exhaustive enumeration, so the matrices are
exact up to floating point and can certify the closed-form bounds.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DomainError, SizeError

MAX_STATES = 10_000


# -- closed-form bounds ------------------------------------------------------

def _check_unit(name, value):
    v = np.asarray(value, dtype=float)
    if np.any(~(v > 0)) or np.any(v > 1):
        raise DomainError(f"{name} must lie in (0, 1], got {value}")


def _check_n(n):
    if int(n) != n or n < 0:
        raise DomainError(f"n must be a non-negative integer, got {n}")


def tv_bound_composition(eps_i: Sequence[float], C: float, n: int) -> float:
    """Deterministic-scan bound ``(1 - C * prod(eps_i))**n``."""
    _check_unit("eps_i", eps_i)
    _check_unit("C", C)
    _check_n(n)
    rho = C * float(np.prod(eps_i))
    return (1.0 - rho) ** n


def tv_bound_mixing(eps: float, r: Sequence[float], n: int) -> float:
    """Random-scan bound ``(1 - eps * prod(r))**n``, valid after ``n * d`` raw steps."""
    _check_unit("eps", eps)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or abs(r.sum() - 1.0) > 1e-12:
        raise DomainError("r must be a strictly positive probability vector")
    _check_n(n)
    return (1.0 - eps * float(np.prod(r))) ** n


def tv_bound_cwis(delta: float, eps: float, d: int, n: int) -> float:
    """Component-wise independence sampler bound ``(1 - delta * eps**floor(d/2))**n``."""
    _check_unit("delta", delta)
    _check_unit("eps", eps)
    if d < 1:
        raise DomainError("d must be >= 1")
    _check_n(n)
    return (1.0 - delta * eps ** (d // 2)) ** n


# -- discrete instances ------------------------------------------------------

@dataclass(frozen=True)
class DiscreteInstance:
    """Finite product-space target with per-component proposal tables.

    ``proposals[i]`` is either a vector of length ``K_i`` (state-independent)
    or an array of shape ``sizes + (K_i,)`` giving p_i(x, .) for every full
    state x.
    """

    sizes: tuple
    pi: np.ndarray
    proposals: tuple
    order: tuple = None
    n_states: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        n_states = int(np.prod(sizes))
        if n_states > MAX_STATES:
            raise SizeError(f"{n_states} states exceeds the dense limit {MAX_STATES}")
        pi = np.asarray(self.pi, dtype=float).reshape(sizes)
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ConfigurationError("pi must be a probability vector (sum within 1e-12)")
        props = []
        for i, p in enumerate(self.proposals):
            p = np.asarray(p, dtype=float)
            if p.shape not in ((sizes[i],), sizes + (sizes[i],)):
                raise ConfigurationError(f"proposal {i} has shape {p.shape}")
            if np.any(p < 0) or np.max(np.abs(p.sum(axis=-1) - 1.0)) > 1e-12:
                raise ConfigurationError(f"proposal {i} rows must sum to 1 within 1e-12")
            props.append(p)
        if len(props) != len(sizes):
            raise ConfigurationError("need one proposal table per component")
        order = tuple(range(len(sizes))) if self.order is None else tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(sizes))):
            raise ConfigurationError(f"order {order} is not a permutation")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "proposals", tuple(props))
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "n_states", n_states)

    @property
    def d(self) -> int:
        return len(self.sizes)

    @property
    def pi_flat(self) -> np.ndarray:
        return self.pi.reshape(-1)

    @property
    def state_independent(self) -> bool:
        return all(p.ndim == 1 for p in self.proposals)

    def states(self) -> np.ndarray:
        """All states as an ``(n_states, d)`` integer array in flat-index order."""
        return np.array(list(itertools.product(*[range(k) for k in self.sizes])), dtype=int)

    def index(self, state) -> int:
        return int(np.ravel_multi_index(tuple(int(v) for v in state), self.sizes))

    def proposal_prob(self, i: int, x, value: int) -> float:
        p = self.proposals[i]
        if p.ndim == 1:
            return float(p[value])
        return float(p[tuple(int(v) for v in x) + (int(value),)])

    def joint_proposal(self) -> np.ndarray:
        """p(x) = prod_i p_i(x_i) over all states (state-independent tables only)."""
        if not self.state_independent:
            raise ConfigurationError("joint proposal needs state-independent tables")
        p = np.ones(self.sizes)
        for i, pi_ in enumerate(self.proposals):
            shape = [1] * self.d
            shape[i] = self.sizes[i]
            p = p * pi_.reshape(shape)
        return p

    def support_condition_holds(self) -> bool:
        return bool(np.all((self.pi > 0) == (self.joint_proposal() > 0)))

    def to_json(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "pi": self.pi_flat.tolist(),
            "proposals": [p.tolist() for p in self.proposals],
            "order": list(self.order),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteInstance":
        try:
            return cls(tuple(obj["sizes"]), np.asarray(obj["pi"], dtype=float),
                       tuple(np.asarray(p, dtype=float) for p in obj["proposals"]),
                       obj.get("order"))
        except KeyError as exc:
            raise ConfigurationError(f"instance is missing key {exc}") from None

    @classmethod
    def load(cls, path) -> "DiscreteInstance":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def random_instance(rng: np.random.Generator, sizes, state_dependent: bool = False,
                    concentration: float = 1.0, floor: float = 0.02) -> DiscreteInstance:
    """Random instance with strictly positive target and proposals."""
    sizes = tuple(sizes)
    n = int(np.prod(sizes))
    pi = rng.dirichlet(np.full(n, concentration)) + floor / n
    pi /= pi.sum()
    props = []
    for k in sizes:
        shape = sizes + (k,) if state_dependent else (k,)
        p = rng.dirichlet(np.full(k, concentration), size=shape[:-1] or None) + floor / k
        p = np.asarray(p).reshape(shape)
        props.append(p / p.sum(axis=-1, keepdims=True))
    return DiscreteInstance(sizes, pi, tuple(props))


# -- exact kernels -----------------------------------------------------------

def _component_matrices(inst: DiscreteInstance, i: int):
    """Full-space update matrix for component i and its accepted-move part."""
    n = inst.n_states
    pi = inst.pi_flat
    states = inst.states()
    M = np.zeros((n, n))
    A = np.zeros((n, n))
    for s, x in enumerate(states):
        for v in range(inst.sizes[i]):
            p_xy = inst.proposal_prob(i, x, v)
            if p_xy == 0.0:
                continue
            y = x.copy()
            y[i] = v
            t = inst.index(y)
            if pi[s] == 0.0:
                alpha = 1.0 if pi[t] > 0 else 0.0
            elif pi[t] == 0.0:
                alpha = 0.0
            else:
                p_yx = inst.proposal_prob(i, y, x[i])
                alpha = min(1.0, pi[t] * p_yx / (pi[s] * p_xy))
            M[s, t] += p_xy * alpha
            A[s, t] += p_xy * alpha
            M[s, s] += p_xy * (1.0 - alpha)
    return M, A


def component_update_matrices(inst: DiscreteInstance):
    return [_component_matrices(inst, i)[0] for i in range(inst.d)]


def _independence_matrices(inst: DiscreteInstance):
    pi = inst.pi_flat
    p = inst.joint_proposal().reshape(-1)
    n = inst.n_states
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(p > 0, pi / p, 0.0)
    A = np.zeros((n, n))
    for s in range(n):
        if pi[s] == 0:
            A[s] = p * (pi > 0)
            continue
        A[s] = p * np.minimum(1.0, w / w[s])
    M = A.copy()
    M[np.diag_indices(n)] += 1.0 - A.sum(axis=1)
    return M, A


def exact_kernel_matrix(inst: DiscreteInstance, kind: str = "composition", weights=None,
                        accepted_only: bool = False) -> np.ndarray:
    """Exact one-step transition matrix.

    ``kind`` is ``composition`` (components in ``inst.order``), ``cwis``
    (composition with state-independent tables), ``mixing`` (random scan with
    ``weights``; uniform if omitted) or ``single-block-independence``.  With
    ``accepted_only`` the matrix holds only the probability of reaching y with
    every proposal accepted (not defined for mixing).
    """
    if kind == "single-block-independence":
        M, A = _independence_matrices(inst)
        return A if accepted_only else M
    if kind == "cwis" and not inst.state_independent:
        raise ConfigurationError("cwis kernels need state-independent proposal tables")
    mats = [_component_matrices(inst, i) for i in range(inst.d)]
    if kind in ("composition", "cwis"):
        P = np.eye(inst.n_states)
        for i in inst.order:
            P = P @ mats[i][1 if accepted_only else 0]
        return P
    if kind == "mixing":
        if accepted_only:
            raise ConfigurationError("accepted-only matrices are not defined for mixing")
        r = np.full(inst.d, 1.0 / inst.d) if weights is None else np.asarray(weights, dtype=float)
        if r.shape != (inst.d,) or np.any(r <= 0) or abs(r.sum() - 1) > 1e-12:
            raise ConfigurationError("mixing weights must be a positive probability vector")
        return sum(r[i] * mats[i][0] for i in range(inst.d))
    raise ConfigurationError(f"unknown kernel kind {kind!r}")


def stationary_distribution(kernel: np.ndarray, tol: float = 1e-13, max_squarings: int = 200) -> np.ndarray:
    """Stationary vector by repeated squaring of the kernel until its rows agree."""
    P = np.array(kernel, dtype=float)
    for _ in range(max_squarings):
        spread = np.max(P.max(axis=0) - P.min(axis=0))
        if spread < tol:
            break
        P = P @ P
        P /= P.sum(axis=1, keepdims=True)
    else:
        raise ConsistencyError("power iteration did not converge")
    v = P.mean(axis=0)
    return v / v.sum()


def exact_tv_curve(inst: DiscreteInstance, kernel: np.ndarray, n_max: int, start) -> np.ndarray:
    """TV distance to pi after n = 1..n_max steps from ``start``.

    ``start`` is a state index, a state tuple, or an initial distribution.
    """
    kernel = np.asarray(kernel, dtype=float)
    if np.max(np.abs(kernel.sum(axis=1) - 1.0)) > 1e-10:
        raise ConsistencyError("kernel rows do not sum to one")
    pi = inst.pi_flat
    stat = stationary_distribution(kernel)
    if np.max(np.abs(stat - pi)) > 1e-8:
        raise ConsistencyError("kernel's stationary vector disagrees with the instance target")
    if np.ndim(start) == 0:
        mu = np.zeros(inst.n_states)
        mu[int(start)] = 1.0
    else:
        start = np.asarray(start)
        if start.shape == (inst.d,) and inst.n_states != inst.d:
            mu = np.zeros(inst.n_states)
            mu[inst.index(start)] = 1.0
        else:
            mu = np.asarray(start, dtype=float).reshape(-1)
    out = np.empty(n_max)
    for k in range(n_max):
        mu = mu @ kernel
        out[k] = 0.5 * np.abs(mu - pi).sum()
    return out


def sup_tv_curve(inst: DiscreteInstance, kernel: np.ndarray, n_max: int) -> np.ndarray:
    """Worst case over point-mass starts of the TV curve."""
    return np.max([exact_tv_curve(inst, kernel, n_max, s) for s in range(inst.n_states)], axis=0)


# -- constants by exhaustive search ------------------------------------------

@dataclass(frozen=True)
class BoundConstants:
    eps_i: tuple = ()
    C: float = 1.0
    delta: float = 1.0
    eps: float = 1.0
    r: tuple = ()


def composition_constants(inst: DiscreteInstance) -> BoundConstants:
    """eps_i and C for the deterministic-scan bound in natural component order.

    m_i(y_[i]) = min over x^[i] of f_i(x_i, y_i | y_[i-1], x^[i+1]) is the
    tightest per-component minorant; it is split as eps_i * q_i with
    eps_i = max over y_[i-1] of sum_{y_i} m_i, which keeps C <= 1.
    """
    d, sizes = inst.d, inst.sizes
    mats = component_update_matrices(inst)
    ms = []
    for i in range(d):
        m = np.full(sizes[: i + 1], np.inf)
        for prefix in itertools.product(*[range(k) for k in sizes[: i + 1]]):
            for suffix in itertools.product(*[range(k) for k in sizes[i:]]):
                src = prefix[:i] + suffix
                dst = prefix + suffix[1:]
                m[prefix] = min(m[prefix], mats[i][inst.index(src), inst.index(dst)])
        ms.append(m)
    eps = [float(np.max(m.sum(axis=-1))) for m in ms]
    q = np.ones(())
    for i, m in enumerate(ms):
        q = q[..., None] * (m / eps[i])
    return BoundConstants(eps_i=tuple(eps), C=float(q.sum()))


def doeblin_constant(kernel: np.ndarray) -> float:
    """Largest eps with P(x, .) >= eps Q(.) for all x: sum_y min_x P(x, y)."""
    return float(np.asarray(kernel).min(axis=0).sum())


def cwis_constants(inst: DiscreteInstance) -> BoundConstants:
    """delta = min p/pi and the four-point ratio constant eps by exhaustive search."""
    pi = inst.pi
    p = inst.joint_proposal()
    pos = pi > 0
    delta = float(np.min(p[pos] / pi[pos]))
    states = inst.states()
    pf = inst.pi_flat
    ok = pf > 0
    X = states[ok]
    eps = 1.0
    idx = lambda arr: np.ravel_multi_index(tuple(arr.T), inst.sizes)  # noqa: E731
    for k in range(1, inst.d):  # k leading components from x, the rest from y
        xa = np.repeat(X, len(X), axis=0)
        yb = np.tile(X, (len(X), 1))
        a = np.concatenate([xa[:, :k], yb[:, k:]], axis=1)
        b = np.concatenate([yb[:, :k], xa[:, k:]], axis=1)
        num = pf[idx(xa)] * pf[idx(yb)]
        den = pf[idx(a)] * pf[idx(b)]
        if np.any(den == 0):
            raise ConfigurationError("four-point condition fails: mixed state has zero mass")
        eps = min(eps, float(np.min(num / den)))
    return BoundConstants(delta=min(delta, 1.0), eps=eps)


# -- split chain identity ----------------------------------------------------

def exact_split_identity_check(inst: DiscreteInstance, s, q, regen: Callable[[int, int], float] | np.ndarray,
                               kind: str = "composition") -> float:
    """Max over (x, y) of |Pr(y, all accepted | x) r_A(x, y) - s(x) q(y)|.

    ``s`` and ``q`` are arrays over flat state indices (unnormalized so that
    their product is the minorizing measure), and ``regen`` gives the
    implemented regeneration probability conditional on every proposal being
    accepted, either as a matrix or a callable on index pairs.
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    A = exact_kernel_matrix(inst, kind, accepted_only=True)
    n = inst.n_states
    if callable(regen):
        R = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                if A[a, b] > 0:
                    R[a, b] = regen(a, b)
    else:
        R = np.asarray(regen, dtype=float)
    return float(np.max(np.abs(A * R - np.outer(s, q))))


# -- bound curves --------------------------------------------------------------

def bound_curve(inst: DiscreteInstance, kind: str, n_max: int, weights=None):
    """Worst-start exact TV curve next to the matching closed-form bound, n = 1..n_max.

    For ``mixing`` the n-th entry refers to n * d raw random-scan steps and
    the bound uses the Doeblin constant of the composition kernel.
    """
    _check_n(n_max)
    ns = np.arange(1, n_max + 1)
    if kind == "composition":
        P = exact_kernel_matrix(inst, "composition")
        c = composition_constants(inst)
        bound = [tv_bound_composition(c.eps_i, c.C, int(n)) for n in ns]
    elif kind == "mixing":
        r = np.full(inst.d, 1.0 / inst.d) if weights is None else np.asarray(weights, dtype=float)
        eps = doeblin_constant(exact_kernel_matrix(inst, "composition"))
        P = np.linalg.matrix_power(exact_kernel_matrix(inst, "mixing", weights=r), inst.d)
        bound = [tv_bound_mixing(eps, r, int(n)) for n in ns]
    elif kind == "cwis":
        P = exact_kernel_matrix(inst, "cwis")
        c = cwis_constants(inst)
        bound = [tv_bound_cwis(c.delta, c.eps, inst.d, int(n)) for n in ns]
    else:
        raise ConfigurationError(f"unknown bound kind {kind!r}")
    return ns, sup_tv_curve(inst, P, n_max), np.asarray(bound)
