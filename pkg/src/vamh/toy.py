"""Normal-model posterior with truncated-support priors.

Target on (mu, theta):
    pi(mu, theta) ∝ theta^{-(m+1)/2} exp{-(s2 + m (mu - ybar)^2) / (2 theta)}
on A x B.  Proposals are the truncated normal N(ybar, s2/m) on A for mu and
the truncated inverse gamma IG((m-1)/2, s2/2) on B for theta, used jointly
(independence sampler, MHIS) or one component at a time (CWIS).

The generic machinery in :mod:`vamh.chain` and :mod:`vamh.regen` runs these
samplers through :func:`toy_target` and friends; the compiled kernels at the
bottom run the same updates with the closed-form acceptance reductions and
are what the studies use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy import integrate, special

from .chain import ComponentProposal, TargetDensity
from .errors import ConfigurationError, OracleError, PathologicalTruncationError
from .regen import MinorizationSpec, mty_regen_prob
from .rng import RandomStream

MAX_CONSECUTIVE_REJECTIONS = 1_000_000
CHUNK = 1 << 16
DEFAULT_START = (10.0, 1.0)


def _interval(v, name):
    lo, hi = v
    lo = float(lo)
    hi = math.inf if hi in ("inf", None) else float(hi)
    if not lo < hi:
        raise ConfigurationError(f"{name} must satisfy lo < hi, got {v}")
    return (lo, hi)


@dataclass(frozen=True)
class ToyModel:
    m: int
    y_bar: float
    s2: float
    A: tuple = (0.0, 100.0)
    B: tuple = (0.01, math.inf)

    def __post_init__(self):
        if self.m < 2:
            raise ConfigurationError("m must be >= 2")
        if not self.s2 > 0:
            raise ConfigurationError("s2 must be positive")
        A = _interval(self.A, "A")
        B = _interval(self.B, "B")
        if not all(map(math.isfinite, A)):
            raise ConfigurationError("A must be bounded")
        if B[0] < 0:
            raise ConfigurationError("B must lie in the positive half-line")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def from_config(cls, cfg: dict) -> "ToyModel":
        try:
            return cls(int(cfg["m"]), float(cfg["y_bar"]), float(cfg["s2"]),
                       tuple(cfg.get("A", (0.0, 100.0))), tuple(cfg.get("B", (0.01, "inf"))))
        except KeyError as exc:
            raise ConfigurationError(f"toy config is missing {exc}") from None

    def with_B(self, B) -> "ToyModel":
        return ToyModel(self.m, self.y_bar, self.s2, self.A, B)

    @property
    def mu_tilde(self) -> float:
        """Endpoint of A farthest from ybar."""
        lo, hi = self.A
        return lo if abs(lo - self.y_bar) >= abs(hi - self.y_bar) else hi

    @property
    def theta_lower(self) -> float:
        return self.B[0]

    def in_A(self, mu) -> bool:
        return self.A[0] < mu < self.A[1]

    def in_B(self, theta) -> bool:
        return self.B[0] < theta < self.B[1]

    def to_dict(self) -> dict:
        return {"m": self.m, "y_bar": self.y_bar, "s2": self.s2, "A": list(self.A),
                "B": [self.B[0], "inf" if math.isinf(self.B[1]) else self.B[1]]}


PAPER_MODEL = ToyModel(10, 10.2, 6.5, (0.0, 100.0), (0.01, math.inf))


# -- densities and reductions -------------------------------------------------

def toy_log_target(mu: float, theta: float, model: ToyModel) -> float:
    if not (model.in_A(mu) and model.in_B(theta)):
        return -math.inf
    m = model.m
    return -0.5 * (m + 1) * math.log(theta) - (model.s2 + m * (mu - model.y_bar) ** 2) / (2.0 * theta)


def log_p_mu(mu: float, model: ToyModel) -> float:
    if not model.in_A(mu):
        return -math.inf
    return -model.m * (mu - model.y_bar) ** 2 / (2.0 * model.s2)


def log_p_theta(theta: float, model: ToyModel) -> float:
    if not model.in_B(theta):
        return -math.inf
    return -0.5 * (model.m + 1) * math.log(theta) - model.s2 / (2.0 * theta)


def log_r(mu, theta, model: ToyModel) -> float:
    """log(pi / p) for the joint proposal."""
    return -0.5 * model.m * (1.0 / theta - 1.0 / model.s2) * (mu - model.y_bar) ** 2


def log_r1(mu, theta, model: ToyModel) -> float:
    """log(pi / p_1)."""
    return (-0.5 * (model.m + 1) * math.log(theta) - model.s2 / (2.0 * theta)
            - 0.5 * model.m * (1.0 / theta - 1.0 / model.s2) * (mu - model.y_bar) ** 2)


def log_r2(mu, theta, model: ToyModel) -> float:
    """log(pi / p_2)."""
    return -model.m * (mu - model.y_bar) ** 2 / (2.0 * theta)


def log_g1(mu, model: ToyModel, theta_tilde: float) -> float:
    return -0.5 * model.m * (1.0 / theta_tilde - 1.0 / model.s2) * (mu - model.y_bar) ** 2


def log_g2(theta, model: ToyModel, theta_tilde: float) -> float:
    if not theta > theta_tilde:
        return -math.inf
    return -0.5 * (model.m + 1) * math.log(theta) - model.s2 / (2.0 * theta)


def toy_mhis_accept(mu, theta, mu_star, theta_star, model: ToyModel) -> float:
    m, s2, yb = model.m, model.s2, model.y_bar
    e = -0.5 * m * ((1 / s2 - 1 / theta) * (mu - yb) ** 2 - (1 / s2 - 1 / theta_star) * (mu_star - yb) ** 2)
    return min(1.0, math.exp(min(e, 50.0)))


def toy_cwis_accept_mu(mu, mu_star, theta, model: ToyModel) -> float:
    m, s2, yb = model.m, model.s2, model.y_bar
    e = -0.5 * m * (1 / s2 - 1 / theta) * ((mu - yb) ** 2 - (mu_star - yb) ** 2)
    return min(1.0, math.exp(min(e, 50.0)))


def toy_cwis_accept_theta(theta, theta_star, mu, model: ToyModel) -> float:
    e = -0.5 * model.m * (1 / theta_star - 1 / theta) * (mu - model.y_bar) ** 2
    return min(1.0, math.exp(min(e, 50.0)))


def toy_mhis_regen_prob(prev, curr, model: ToyModel, log_c: float) -> float:
    return mty_regen_prob(log_r(prev[0], prev[1], model), log_r(curr[0], curr[1], model), log_c)


def toy_cwis_regen_prob(prev, curr, model: ToyModel, theta_tilde: float) -> float:
    """Regeneration probability on a jump (mu', theta') -> (mu, theta) with both moves accepted."""
    mu_p, th_p = float(prev[0]), float(prev[1])
    mu, th = float(curr[0]), float(curr[1])
    if not th_p > theta_tilde:
        return 0.0
    # log space throughout: r_2 underflows far from y_bar
    lr1_prev = log_r1(mu_p, th_p, model)
    lr1_mid = log_r1(mu, th_p, model)
    lg2 = log_g2(th_p, model, theta_tilde)
    lg1 = log_g1(mu, model, theta_tilde)
    lr2_new = log_r2(mu, th, model)
    lr2_mid = log_r2(mu, th_p, model)
    lh1 = lh2 = 0.0
    first = min(0.0, lg2 - lr1_prev) + min(0.0, lg1) - min(0.0, lr1_mid - lr1_prev)
    second = min(0.0, -lh2) + min(0.0, lr2_new - lh1) - min(0.0, lr2_new - lr2_mid)
    return math.exp(first + second)


# -- proposal samplers ----------------------------------------------------------

def _generator(rng):
    return rng.generator if isinstance(rng, RandomStream) else rng


def _truncated(draw, lo, hi, rng, size):
    gen = _generator(rng)
    if size is None:
        for _ in range(MAX_CONSECUTIVE_REJECTIONS):
            v = float(draw(gen, None))
            if lo < v < hi:
                return v
        raise PathologicalTruncationError(f"{MAX_CONSECUTIVE_REJECTIONS} consecutive rejections")
    out = np.empty(size)
    filled = 0
    misses = 0
    batch = int(size)
    while filled < size:
        v = draw(gen, batch)
        v = v[(v > lo) & (v < hi)]
        if v.size == 0:
            misses += batch
            if misses >= MAX_CONSECUTIVE_REJECTIONS:
                raise PathologicalTruncationError(f"{misses} consecutive rejections")
            batch = min(2 * batch, MAX_CONSECUTIVE_REJECTIONS)
            continue
        misses = 0
        take = min(v.size, size - filled)
        out[filled:filled + take] = v[:take]
        filled += take
        batch = max(16, int(1.2 * (size - filled) * batch / max(v.size, 1)) + 16)
    return out


def sample_truncated_normal(mean, variance, A, rng, size=None):
    """Normal(mean, variance) restricted to the open interval A, by rejection."""
    sd = math.sqrt(variance)
    return _truncated(lambda g, n: g.normal(mean, sd, n), A[0], A[1], rng, size)


def sample_truncated_invgamma(shape, rate, B, rng, size=None):
    """Inverse gamma with the given shape and rate restricted to B, by rejection."""
    return _truncated(lambda g, n: 1.0 / g.gamma(shape, 1.0 / rate, n), B[0], B[1], rng, size)


def draw_mu(model: ToyModel, rng, size=None):
    return sample_truncated_normal(model.y_bar, model.s2 / model.m, model.A, rng, size)


def draw_theta(model: ToyModel, rng, size=None):
    return sample_truncated_invgamma(0.5 * (model.m - 1), 0.5 * model.s2, model.B, rng, size)


def truncated_normal_mean(mean, variance, A) -> float:
    """Analytic mean of a normal truncated to A."""
    sd = math.sqrt(variance)
    a, b = (A[0] - mean) / sd, (A[1] - mean) / sd
    Z = special.ndtr(b) - special.ndtr(a)
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)  # noqa: E731
    return mean + sd * (phi(a) - phi(b)) / Z


# -- generic-machinery objects --------------------------------------------------

def toy_target(model: ToyModel) -> TargetDensity:
    return TargetDensity(
        dims=(1, 1),
        log_pi=lambda x: toy_log_target(x[0], x[1], model),
        support_component=(lambda v: model.in_A(v[0]), lambda v: model.in_B(v[0])),
    )


def toy_cwis_proposals(model: ToyModel) -> list:
    return [
        ComponentProposal(0, lambda x, rng: np.array([draw_mu(model, rng)]),
                          lambda x, v: log_p_mu(v[0], model), state_independent=True),
        ComponentProposal(1, lambda x, rng: np.array([draw_theta(model, rng)]),
                          lambda x, v: log_p_theta(v[0], model), state_independent=True),
    ]


def toy_mhis_proposal(model: ToyModel) -> ComponentProposal:
    return ComponentProposal(
        None,
        lambda x, rng: np.array([draw_mu(model, rng), draw_theta(model, rng)]),
        lambda x, v: log_p_mu(v[0], model) + log_p_theta(v[1], model),
        state_independent=True,
    )


def icv(x) -> float:
    """Inverse coefficient of variation mu / sqrt(theta)."""
    return x[0] / math.sqrt(x[1])


def toy_minorization_spec(model: ToyModel, theta_tilde: float) -> MinorizationSpec:
    """Minorization ingredients for the CWIS split chain.

    Component 1 (mu): r_1 >= g1(mu) g2(theta), with the trivial upper bound
    r_1 itself.  Component 2 (theta): r_2 <= h1 h2 = 1, with lower bound r_2
    itself.  All c_i = 1.
    """
    if not model.in_B(theta_tilde):
        raise ConfigurationError(f"theta_tilde={theta_tilde} is not in B={model.B}")
    return MinorizationSpec(
        log_g1=(lambda z: log_g1(z[0], model, theta_tilde), lambda z: log_r2(z[0], z[1], model)),
        log_g2=(lambda z: log_g2(z[1], model, theta_tilde), lambda z: 0.0),
        log_h1=(lambda z: 0.0, lambda z: 0.0),
        log_h2=(lambda z: log_r1(z[0], z[1], model), lambda z: 0.0),
        log_c=np.zeros(2),
        q_is_proposal=True,
        log_w=(lambda z: log_p_mu(z[0], model), lambda z: log_p_theta(z[1], model)),
    )


# -- quadrature oracle -----------------------------------------------------------

def _log_kernel_theta(theta, model):
    return -0.5 * (model.m + 1) * math.log(theta) - model.s2 / (2.0 * theta)


def _theta_mode(model):
    return model.s2 / (model.m + 1)


def _mu_window(theta, model, k=40.0):
    sd = math.sqrt(theta / model.m)
    lo = max(model.A[0], model.y_bar - k * sd)
    hi = min(model.A[1], model.y_bar + k * sd)
    return lo, hi


def _posterior_integral(f, model: ToyModel, rtol=1e-10):
    """Integral of f(mu, theta) pi(mu, theta) over A x B by nested adaptive quadrature.

    theta is integrated on the log scale; for each theta the mu integral runs
    over A intersected with ybar +- 40 posterior sds (the rest is below 1e-300
    relative) with a breakpoint at ybar.
    """
    lm = math.log(_theta_mode(model))
    ref = _log_kernel_theta(_theta_mode(model), model)

    def inner(t):
        theta = math.exp(t)
        lo, hi = _mu_window(theta, model)
        if lo >= hi:
            return 0.0
        w = math.exp(_log_kernel_theta(theta, model) - ref) * theta

        def h(mu):
            return f(mu, theta) * math.exp(-model.m * (mu - model.y_bar) ** 2 / (2 * theta))

        pts = [p for p in (model.y_bar,) if lo < p < hi]
        val, _ = integrate.quad(h, lo, hi, points=pts or None, epsabs=0, epsrel=rtol, limit=200)
        return w * val

    # beyond these the theta kernel is below exp(-300) of its peak
    t_lo = max(math.log(model.B[0]) if model.B[0] > 0 else -math.inf, lm - 8.0)
    t_hi = min(math.log(model.B[1]) if math.isfinite(model.B[1]) else math.inf, lm + 130.0)
    # split around the mode so the adaptive rule sees the peak
    cuts = [c for c in (lm - 3, lm, lm + 3) if t_lo < c < t_hi]
    edges = [t_lo] + cuts + [t_hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(inner, a, b, epsabs=0, epsrel=rtol, limit=200)
        if not math.isfinite(val):
            raise OracleError("quadrature produced a non-finite value")
        total += val
    return total


def posterior_expectation(f, model: ToyModel, rtol: float = 1e-10) -> float:
    num = _posterior_integral(f, model, rtol)
    den = _posterior_integral(lambda mu, th: 1.0, model, rtol)
    if not den > 0:
        raise OracleError("posterior normalizing integral vanished")
    return num / den


def oracle_posterior_mean_icv(model: ToyModel) -> float:
    """E(mu / sqrt(theta) | y) by 2-D adaptive quadrature."""
    return posterior_expectation(lambda mu, th: mu / math.sqrt(th), model)


def oracle_posterior_mean_icv_1d(model: ToyModel) -> float:
    """Same quantity with the mu integral done in closed form; independent check."""
    m, yb = model.m, model.y_bar
    ref = _log_kernel_theta(_theta_mode(model), model)

    def pieces(theta):
        sd = math.sqrt(theta / m)
        a, b = (model.A[0] - yb) / sd, (model.A[1] - yb) / sd
        Z = special.ndtr(b) - special.ndtr(a)
        phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)  # noqa: E731
        mass = sd * math.sqrt(2 * math.pi) * Z
        first = yb * mass + sd * sd * math.sqrt(2 * math.pi) * (phi(a) - phi(b))
        w = math.exp(_log_kernel_theta(theta, model) - ref)
        return w * mass, w * first / math.sqrt(theta)

    lo, hi = model.B
    den, _ = integrate.quad(lambda t: pieces(t)[0], lo, hi, epsabs=0, epsrel=1e-11, limit=400,
                            points=None if math.isinf(hi) else [_theta_mode(model)])
    num, _ = integrate.quad(lambda t: pieces(t)[1], lo, hi, epsabs=0, epsrel=1e-11, limit=400,
                            points=None if math.isinf(hi) else [_theta_mode(model)])
    return num / den


def proposal_log_normalizer(model: ToyModel) -> float:
    """log of the integral of exp(log_p_mu + log_p_theta) over A x B (closed form)."""
    m, yb, s2 = model.m, model.y_bar, model.s2
    sd = math.sqrt(s2 / m)
    z_mu = sd * math.sqrt(2 * math.pi) * (special.ndtr((model.A[1] - yb) / sd) - special.ndtr((model.A[0] - yb) / sd))
    a, b = 0.5 * (m - 1), 0.5 * s2
    # integral of theta^{-a-1} e^{-b/theta} over (lo, hi) = Gamma(a) b^{-a} [Q(a, b/hi) - Q(a, b/lo)]
    lo, hi = model.B
    upper = special.gammaincc(a, b / hi) if math.isfinite(hi) else 1.0
    lower = special.gammaincc(a, b / lo) if lo > 0 else 0.0
    z_th = math.exp(special.gammaln(a) - a * math.log(b)) * (upper - lower)
    return math.log(z_mu) + math.log(z_th)


def target_log_normalizer(model: ToyModel) -> float:
    """log of the integral of exp(toy_log_target) over A x B (quadrature)."""
    ref = _log_kernel_theta(_theta_mode(model), model)
    return math.log(_posterior_integral(lambda mu, th: 1.0, model)) + ref


def mhis_delta(model: ToyModel) -> float:
    """delta with p >= delta pi for the normalized densities."""
    k = math.exp(target_log_normalizer(model) - proposal_log_normalizer(model))
    return k * math.exp(-model.m * (model.mu_tilde - model.y_bar) ** 2 / (2 * model.s2))


def cwis_eps(model: ToyModel) -> float:
    if not model.theta_lower > 0:
        raise ConfigurationError("eps needs B bounded away from zero")
    return math.exp(-model.m * (model.mu_tilde - model.y_bar) ** 2 / (2 * model.theta_lower))


# -- compiled kernels -----------------------------------------------------------

@njit(cache=True, nogil=True)
def _clamped_alpha(log_ratio):
    if log_ratio > 50.0:
        log_ratio = 50.0
    a = math.exp(log_ratio)
    return a if a < 1.0 else 1.0


@njit(cache=True, nogil=True)
def _toy_cwis_chunk(state, mu_prop, th_prop, u_acc, u_del, m, yb, s2, theta_tilde,
                    track, g_out, delta_out, acc_out):
    mu = state[0]
    th = state[1]
    for k in range(mu_prop.size):
        mu_p = mu
        th_p = th
        ms = mu_prop[k]
        e1 = -0.5 * m * (1.0 / s2 - 1.0 / th) * ((mu - yb) ** 2 - (ms - yb) ** 2)
        a1 = u_acc[k, 0] < _clamped_alpha(e1)
        if a1:
            mu = ms
        ts = th_prop[k]
        e2 = -0.5 * m * (1.0 / ts - 1.0 / th) * (mu - yb) ** 2
        a2 = u_acc[k, 1] < _clamped_alpha(e2)
        if a2:
            th = ts
        acc_out[k, 0] = a1
        acc_out[k, 1] = a2
        d = 0
        if track and a1 and a2 and th_p > theta_tilde:
            lk = -0.5 * (m + 1) * math.log(th_p) - s2 / (2.0 * th_p)
            lr1_prev = lk - 0.5 * m * (1.0 / th_p - 1.0 / s2) * (mu_p - yb) ** 2
            lr1_mid = lk - 0.5 * m * (1.0 / th_p - 1.0 / s2) * (mu - yb) ** 2
            lg1 = -0.5 * m * (1.0 / theta_tilde - 1.0 / s2) * (mu - yb) ** 2
            f1 = min(0.0, lk - lr1_prev) + min(0.0, lg1) - min(0.0, lr1_mid - lr1_prev)
            lr2_new = -m * (mu - yb) ** 2 / (2.0 * th)
            lr2_mid = -m * (mu - yb) ** 2 / (2.0 * th_p)
            f2 = min(0.0, lr2_new) - min(0.0, lr2_new - lr2_mid)
            if u_del[k] < math.exp(f1 + f2):
                d = 1
        delta_out[k] = d
        g_out[k] = mu / math.sqrt(th)
    state[0] = mu
    state[1] = th


@njit(cache=True, nogil=True)
def _toy_mhis_chunk(state, mu_prop, th_prop, u_acc, u_del, m, yb, s2, log_c,
                    track, g_out, delta_out, acc_out):
    mu = state[0]
    th = state[1]
    lr = -0.5 * m * (1.0 / th - 1.0 / s2) * (mu - yb) ** 2
    for k in range(mu_prop.size):
        ms = mu_prop[k]
        ts = th_prop[k]
        lr_s = -0.5 * m * (1.0 / ts - 1.0 / s2) * (ms - yb) ** 2
        a = u_acc[k, 0] < _clamped_alpha(lr_s - lr)
        acc_out[k, 0] = a
        d = 0
        if a:
            if track:
                x = lr - log_c
                y = lr_s - log_c
                if x < 0.0 and y < 0.0:
                    p = math.exp(max(x, y))
                elif x > 0.0 and y > 0.0:
                    p = math.exp(-min(x, y))
                else:
                    p = 1.0
                if u_del[k] < p:
                    d = 1
            mu = ms
            th = ts
            lr = lr_s
        delta_out[k] = d
        g_out[k] = mu / math.sqrt(th)
    state[0] = mu
    state[1] = th


@dataclass
class ChunkOutput:
    g: np.ndarray
    delta: np.ndarray
    accepted: np.ndarray

    @property
    def all_accepted(self) -> np.ndarray:
        return self.accepted.all(axis=1)


def toy_chunks(model: ToyModel, sampler: str, rng: RandomStream, *, start=DEFAULT_START,
               theta_tilde: Optional[float] = None, log_c: Optional[float] = None,
               chunk: int = CHUNK):
    """Endless generator of compiled-kernel chunks for the MHIS or CWIS chain.

    Proposals and acceptance uniforms come from ``rng``; regeneration
    uniforms from ``rng.substream(1)``.  Regeneration is tracked only if the
    relevant constant (theta_tilde for CWIS, log_c for MHIS) is given.
    """
    if sampler not in ("cwis", "mhis"):
        raise ConfigurationError(f"toy model has no {sampler!r} sampler")
    if not (model.in_A(start[0]) and model.in_B(start[1])):
        raise ConfigurationError(f"start {start} is outside A x B")
    delta_rng = rng.substream(1)
    state = np.array(start, dtype=float)
    m, yb, s2 = float(model.m), model.y_bar, model.s2
    while True:
        mu_prop = draw_mu(model, rng, chunk)
        th_prop = draw_theta(model, rng, chunk)
        width = 2 if sampler == "cwis" else 1
        u_acc = rng.uniforms((chunk, width))
        u_del = delta_rng.uniforms(chunk)
        g = np.empty(chunk)
        delta = np.zeros(chunk, dtype=np.int8)
        acc = np.zeros((chunk, width), dtype=np.bool_)
        if sampler == "cwis":
            track = theta_tilde is not None
            _toy_cwis_chunk(state, mu_prop, th_prop, u_acc, u_del, m, yb, s2,
                            float(theta_tilde) if track else 0.0, track, g, delta, acc)
        else:
            track = log_c is not None
            _toy_mhis_chunk(state, mu_prop, th_prop, u_acc, u_del, m, yb, s2,
                            float(log_c) if track else 0.0, track, g, delta, acc)
        yield ChunkOutput(g, delta, acc)


def toy_run(model: ToyModel, sampler: str, n: int, rng: RandomStream, **kw) -> ChunkOutput:
    """Fixed-length compiled run; returns the concatenated chunk outputs."""
    parts = []
    left = n
    for out in toy_chunks(model, sampler, rng, chunk=min(CHUNK, n), **kw):
        take = min(left, out.g.size)
        parts.append(ChunkOutput(out.g[:take], out.delta[:take], out.accepted[:take]))
        left -= take
        if left == 0:
            break
    return ChunkOutput(np.concatenate([p.g for p in parts]), np.concatenate([p.delta for p in parts]),
                       np.concatenate([p.accepted for p in parts]))


def toy_states_run(model, sampler, n, rng, start=DEFAULT_START):
    """Short compiled run returning the visited states (for preliminary constants)."""
    mu = np.empty(n)
    th = np.empty(n)
    # g = mu / sqrt(theta) alone cannot recover the state, so run a second
    # kernel pass on the same draws keyed to record states.
    state = np.array(start, dtype=float)
    mu_prop = draw_mu(model, rng, n)
    th_prop = draw_theta(model, rng, n)
    width = 2 if sampler == "cwis" else 1
    u_acc = rng.uniforms((n, width))
    acc = np.zeros((n, width), dtype=np.bool_)
    g = np.empty(n)
    delta = np.zeros(n, dtype=np.int8)
    u_del = np.ones(n)
    if sampler == "cwis":
        _toy_cwis_chunk(state, mu_prop, th_prop, u_acc, u_del, float(model.m), model.y_bar, model.s2,
                        0.0, False, g, delta, acc)
        cur_mu, cur_th = start
        for k in range(n):
            if acc[k, 0]:
                cur_mu = mu_prop[k]
            if acc[k, 1]:
                cur_th = th_prop[k]
            mu[k], th[k] = cur_mu, cur_th
    else:
        _toy_mhis_chunk(state, mu_prop, th_prop, u_acc, u_del, float(model.m), model.y_bar, model.s2,
                        0.0, False, g, delta, acc)
        cur_mu, cur_th = start
        for k in range(n):
            if acc[k, 0]:
                cur_mu, cur_th = mu_prop[k], th_prop[k]
            mu[k], th[k] = cur_mu, cur_th
    return mu, th


def cwis_regen_rate(mu, th, model: ToyModel, theta_tilde: float) -> float:
    """Mean regeneration probability per step along a recorded CWIS path."""
    m, yb, s2 = model.m, model.y_bar, model.s2
    mu_p, th_p, mu_n, th_n = mu[:-1], th[:-1], mu[1:], th[1:]
    both = (mu_n != mu_p) & (th_n != th_p) & (th_p > theta_tilde)
    lk = -0.5 * (m + 1) * np.log(th_p) - s2 / (2.0 * th_p)
    lr1_prev = lk - 0.5 * m * (1.0 / th_p - 1.0 / s2) * (mu_p - yb) ** 2
    lr1_mid = lk - 0.5 * m * (1.0 / th_p - 1.0 / s2) * (mu_n - yb) ** 2
    lg1 = -0.5 * m * (1.0 / theta_tilde - 1.0 / s2) * (mu_n - yb) ** 2
    lr2_new = -m * (mu_n - yb) ** 2 / (2.0 * th_n)
    lr2_mid = -m * (mu_n - yb) ** 2 / (2.0 * th_p)
    log_p = (np.minimum(0.0, lk - lr1_prev) + np.minimum(0.0, lg1) - np.minimum(0.0, lr1_mid - lr1_prev)
             + np.minimum(0.0, lr2_new) - np.minimum(0.0, lr2_new - lr2_mid))
    return float(np.mean(np.where(both, np.exp(log_p), 0.0)))


def default_theta_tilde(model: ToyModel, rng: RandomStream, n: int = 10_000) -> float:
    """Cutoff maximizing the regeneration rate along a preliminary CWIS run.

    Candidates are the 2%, 4%, ..., 98% quantiles of theta on the run.
    """
    mu, th = toy_states_run(model, "cwis", n, rng)
    grid = np.quantile(th, np.linspace(0.02, 0.98, 49))
    grid = grid[grid > model.theta_lower]
    rates = [cwis_regen_rate(mu, th, model, t) for t in grid]
    return float(grid[int(np.argmax(rates))])


def default_log_c(model: ToyModel, rng: RandomStream, n: int = 10_000) -> float:
    """log of the median of pi / p over a preliminary MHIS run."""
    mu, th = toy_states_run(model, "mhis", n, rng)
    lr = -0.5 * model.m * (1.0 / th - 1.0 / model.s2) * (mu - model.y_bar) ** 2
    return float(np.median(lr))
