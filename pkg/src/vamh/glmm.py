"""Logit-normal random-intercept model: conditional law of the random effects.

Given binary y_ij with logit P(y_ij = 1) = beta x_ij + u_i and u_i ~ N(0, sigma2),
the target is the conditional density of u given y,

    log pi(u) = sum_i [u_i y_i+ - sum_j softplus(beta x_ij + u_i) - u_i^2 / (2 sigma2)],

which factorizes over i.  With r_i(u_i) = exp{u_i y_i+ - sum_j softplus(beta x_ij + u_i)}
the independence proposals N(0, sigma2) accept with min(1, r(u*) / r(u)).

Three samplers are provided as compiled kernels: a Gaussian random walk (RW),
a whole-vector independence sampler (MHIS) and the component-wise independence
sampler (CWIS) with regeneration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .chain import ComponentProposal, TargetDensity
from .errors import ConfigurationError, MinorizationViolationError
from .regen import VIOLATION_TOL, MinorizationSpec
from .rng import RandomStream

CHUNK = 1 << 15
DATA_SEED = 20_070_101
FEASIBILITY_MULTIPLIERS = (0.3, 0.5, 1.0, 1.5, 2.0, 2.5)


def softplus(z):
    """Stable log(1 + e^z)."""
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(np.minimum(z, 0.0))))


@dataclass(frozen=True)
class GlmmModel:
    x: tuple  # per-group covariate arrays
    y: tuple  # per-group 0/1 arrays
    beta: float
    sigma2: float
    x_flat: np.ndarray = field(init=False, repr=False, compare=False)
    y_flat: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)
    y_plus: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = tuple(np.asarray(v, dtype=float).reshape(-1) for v in self.x)
        y = tuple(np.asarray(v, dtype=float).reshape(-1) for v in self.y)
        if len(x) != len(y) or not x:
            raise ConfigurationError("x and y need the same positive number of groups")
        for xi, yi in zip(x, y):
            if xi.shape != yi.shape or xi.size == 0:
                raise ConfigurationError("each group needs matching non-empty x and y")
            if not np.all((yi == 0) | (yi == 1)):
                raise ConfigurationError("responses must be 0 or 1")
        if not self.sigma2 > 0:
            raise ConfigurationError("sigma2 must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_flat", np.concatenate(x))
        object.__setattr__(self, "y_flat", np.concatenate(y))
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum([v.size for v in x])]).astype(np.int64))
        object.__setattr__(self, "y_plus", np.array([v.sum() for v in y]))

    @property
    def q(self) -> int:
        return len(self.x)

    @property
    def m(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def at(self, beta: float, sigma2: float) -> "GlmmModel":
        """Same data, different parameter value."""
        return replace(self, beta=float(beta), sigma2=float(sigma2))

    @property
    def xy_sum(self) -> float:
        return float(np.dot(self.x_flat, self.y_flat))

    def log_r_bound(self) -> float:
        """log of the uniform upper bound exp{-beta sum x_ij y_ij} on r(u)."""
        return -self.beta * self.xy_sum

    def to_dict(self) -> dict:
        return {"q": self.q, "m": self.m.tolist(), "beta": self.beta, "sigma2": self.sigma2,
                "y_plus": self.y_plus.tolist()}


def paper_covariates(q: int = 10, m: int = 15) -> list:
    return [np.arange(1, m + 1) / m for _ in range(q)]


def glmm_simulate_data(q: int, m, x, beta: float, sigma2: float, rng) -> GlmmModel:
    """Draw u_i ~ N(0, sigma2) then y_ij ~ Bernoulli(logistic(beta x_ij + u_i))."""
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    m = np.broadcast_to(np.asarray(m, dtype=int), (q,))
    if x is None:
        x = [np.arange(1, mi + 1) / mi for mi in m]
    x = [np.asarray(v, dtype=float) for v in x]
    if len(x) != q or any(v.size != mi for v, mi in zip(x, m)):
        raise ConfigurationError("covariates do not match q and m")
    u = gen.normal(0.0, math.sqrt(sigma2), q)
    y = []
    for i in range(q):
        p = 1.0 / (1.0 + np.exp(-(beta * x[i] + u[i])))
        y.append((gen.random(x[i].size) < p).astype(float))
    return GlmmModel(tuple(x), tuple(y), float(beta), float(sigma2))


def synthetic_dataset(data_seed: int = DATA_SEED, q: int = 10, m: int = 15,
                      beta: float = 5.0, sigma2: float = 0.5) -> GlmmModel:
    """Seeded data set on x_ij = j/m generated at (beta, sigma2)."""
    return glmm_simulate_data(q, m, paper_covariates(q, m), beta, sigma2, RandomStream(data_seed))


def model_from_config(cfg: dict) -> GlmmModel:
    """Data from ``data_seed``/``data_beta``/``data_sigma2``; chain at ``beta``/``sigma2``."""
    q = int(cfg.get("q", 10))
    m = cfg.get("m", 15)
    if not np.isscalar(m):
        m = list(m)
        if len(set(m)) != 1:
            data = glmm_simulate_data(q, m, None, float(cfg.get("data_beta", 5.0)),
                                      float(cfg.get("data_sigma2", 0.5)),
                                      RandomStream(int(cfg.get("data_seed", DATA_SEED))))
            return data.at(float(cfg.get("beta", 4.0)), float(cfg.get("sigma2", 1.5)))
        m = m[0]
    data = synthetic_dataset(int(cfg.get("data_seed", DATA_SEED)), q, int(m),
                             float(cfg.get("data_beta", 5.0)), float(cfg.get("data_sigma2", 0.5)))
    return data.at(float(cfg.get("beta", 4.0)), float(cfg.get("sigma2", 1.5)))


def rw_tau2(model: GlmmModel, tau2="auto") -> float:
    if tau2 in (None, "auto"):
        return model.sigma2 / 10.0
    tau2 = float(tau2)
    if not tau2 > 0:
        raise ConfigurationError("tau2 must be positive")
    return tau2


# -- densities --------------------------------------------------------------------

def glmm_log_r_i(u, model: GlmmModel) -> np.ndarray:
    """Per-component log r_i(u_i), vectorized over the q components."""
    u = np.asarray(u, dtype=float).reshape(-1)
    eta = model.beta * model.x_flat + np.repeat(u, model.m)
    sp = np.add.reduceat(softplus(eta), model.offsets[:-1])
    return u * model.y_plus - sp


def glmm_log_r_one(u_i: float, i: int, model: GlmmModel) -> float:
    return float(u_i * model.y_plus[i] - softplus(model.beta * model.x[i] + u_i).sum())


def glmm_log_r(u, model: GlmmModel) -> float:
    return float(glmm_log_r_i(u, model).sum())


def glmm_log_target(u, model: GlmmModel) -> float:
    u = np.asarray(u, dtype=float).reshape(-1)
    return glmm_log_r(u, model) - float(u @ u) / (2.0 * model.sigma2)


def glmm_gradient(u, model: GlmmModel) -> np.ndarray:
    """y_i+ - p_i+ - u_i / sigma2."""
    u = np.asarray(u, dtype=float).reshape(-1)
    eta = model.beta * model.x_flat + np.repeat(u, model.m)
    p_plus = np.add.reduceat(1.0 / (1.0 + np.exp(-eta)), model.offsets[:-1])
    return model.y_plus - p_plus - u / model.sigma2


def glmm_complete_loglik(u, model: GlmmModel, at_theta: Optional[tuple] = None) -> float:
    """Complete-data log-likelihood l_c(theta; y, u); theta defaults to the model's own."""
    beta, sigma2 = (model.beta, model.sigma2) if at_theta is None else map(float, at_theta)
    if not sigma2 > 0:
        raise ConfigurationError("sigma2 must be positive")
    u = np.asarray(u, dtype=float).reshape(-1)
    eta = beta * model.x_flat + np.repeat(u, model.m)
    ll = float(np.dot(model.y_flat, eta) - softplus(eta).sum())
    return ll - 0.5 * model.q * math.log(sigma2) - float(u @ u) / (2.0 * sigma2)


def glmm_rw_propose(u, tau2: float, rng: RandomStream) -> np.ndarray:
    if not tau2 > 0:
        raise ConfigurationError("tau2 must be positive")
    u = np.asarray(u, dtype=float)
    return u + rng.normal(0.0, math.sqrt(tau2), u.shape)


def glmm_mhis_propose(model: GlmmModel, rng: RandomStream) -> np.ndarray:
    return rng.normal(0.0, model.sigma, model.q)


def glmm_mhis_accept(u, u_star, model: GlmmModel) -> float:
    return min(1.0, math.exp(min(glmm_log_r(u_star, model) - glmm_log_r(u, model), 50.0)))


def glmm_rw_accept(u, u_star, model: GlmmModel) -> float:
    return min(1.0, math.exp(min(glmm_log_target(u_star, model) - glmm_log_target(u, model), 50.0)))


# -- regeneration -------------------------------------------------------------------

def _mty_log(a, b):
    """log of min(1, 1/e^a) min(1, e^b) / min(1, e^{b-a}), elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where((a < 0) & (b < 0), np.maximum(a, b),
                    np.where((a > 0) & (b > 0), -np.minimum(a, b), 0.0))


def glmm_cwis_regen_prob(u_prev, u_curr, log_c, model: GlmmModel) -> float:
    """Regeneration probability on a CWIS sweep u' -> u with every component accepted.

    Product over i of min(c_i/r_i(u_i'), 1) min(r_i(u_i)/c_i, 1) / min(r_i(u_i)/r_i(u_i'), 1).
    """
    log_c = np.broadcast_to(np.asarray(log_c, dtype=float), (model.q,))
    a = glmm_log_r_i(u_prev, model) - log_c
    b = glmm_log_r_i(u_curr, model) - log_c
    total = float(_mty_log(a, b).sum())
    if total > VIOLATION_TOL:
        raise MinorizationViolationError(f"regeneration probability exp({total:.3g}) exceeds one")
    return math.exp(total)


def glmm_rw_log_factor(u_prev, u_curr, u_tilde, b, tau2: float) -> float:
    """log of s(u') q(u) / p(u', u) for the hypercube D = {|u_i - u~_i| < b_i}."""
    u_prev, u_curr, u_tilde, b = (np.asarray(v, dtype=float) for v in (u_prev, u_curr, u_tilde, b))
    if np.any(np.abs(u_curr - u_tilde) >= b):
        return -math.inf
    dp = u_prev - u_tilde
    return float(-np.sum(dp * (u_curr - u_tilde + b * np.sign(dp))) / tau2)


def glmm_rw_regen_prob(u_prev, u_curr, u_tilde, b, tau2: float, log_c: float, model: GlmmModel) -> float:
    """Random-walk regeneration probability on an accepted jump u' -> u.

    The hypercube factor times the three-case factor on pi with constant c.
    """
    lf = glmm_rw_log_factor(u_prev, u_curr, u_tilde, b, tau2)
    if lf == -math.inf:
        return 0.0
    a = glmm_log_target(u_prev, model) - log_c
    bb = glmm_log_target(u_curr, model) - log_c
    return math.exp(lf + float(_mty_log(a, bb)))


# -- generic-machinery objects ----------------------------------------------------

def glmm_target(model: GlmmModel) -> TargetDensity:
    def delta(x, i, value):
        v = float(value[0])
        return (glmm_log_r_one(v, i, model) - glmm_log_r_one(x[i], i, model)
                - (v * v - x[i] * x[i]) / (2.0 * model.sigma2))

    return TargetDensity(dims=(1,) * model.q, log_pi=lambda x: glmm_log_target(x, model), log_pi_delta=delta)


def glmm_cwis_proposals(model: GlmmModel) -> list:
    s = model.sigma

    def make(i):
        return ComponentProposal(i, lambda x, rng: np.array([rng.normal(0.0, s)]),
                                 lambda x, v: -float(v[0]) ** 2 / (2.0 * model.sigma2), state_independent=True)

    return [make(i) for i in range(model.q)]


def glmm_mhis_proposal(model: GlmmModel) -> ComponentProposal:
    return ComponentProposal(None, lambda x, rng: glmm_mhis_propose(model, rng),
                             lambda x, v: -float(v @ v) / (2.0 * model.sigma2), state_independent=True)


def glmm_rw_proposal(model: GlmmModel, tau2: float) -> ComponentProposal:
    return ComponentProposal(None, lambda x, rng: glmm_rw_propose(x, tau2, rng), lambda x, v: 0.0)


def glmm_minorization_spec(model: GlmmModel, log_c) -> MinorizationSpec:
    """Generic minorization with g_i1 = h_i2 = r_i and g_i2 = h_i1 = 1.

    The generic constant multiplies g_i1, so it is the reciprocal of the
    median-ratio constant c_i used in :func:`glmm_cwis_regen_prob`.
    """
    log_c = np.broadcast_to(np.asarray(log_c, dtype=float), (model.q,))

    def lr(i):
        return lambda z: glmm_log_r_one(z[i], i, model)

    zero = tuple(lambda z: 0.0 for _ in range(model.q))
    return MinorizationSpec(
        log_g1=tuple(lr(i) for i in range(model.q)),
        log_g2=zero,
        log_h1=zero,
        log_h2=tuple(lr(i) for i in range(model.q)),
        log_c=-log_c,
        q_is_proposal=True,
        log_w=tuple((lambda z, i=i: -float(z[i]) ** 2 / (2.0 * model.sigma2)) for i in range(model.q)),
    )


# -- compiled kernels ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _log_r_one(u, i, beta, x_flat, offsets, y_plus):
    # sum_j softplus(z_j) = sum_j max(z_j, 0) + log prod_j (1 + e^{-|z_j|}); each
    # factor is at most 2, and the product is folded into the sum before it can overflow
    pos = 0.0
    prod = 1.0
    for j in range(offsets[i], offsets[i + 1]):
        z = beta * x_flat[j] + u
        if z > 0.0:
            pos += z
            prod *= 1.0 + math.exp(-z)
        else:
            prod *= 1.0 + math.exp(z)
        if prod > 1e300:
            pos += math.log(prod)
            prod = 1.0
    return u * y_plus[i] - pos - math.log(prod)


@njit(cache=True, nogil=True)
def _alpha(log_ratio):
    if log_ratio > 50.0:
        log_ratio = 50.0
    a = math.exp(log_ratio)
    return a if a < 1.0 else 1.0


@njit(cache=True, nogil=True)
def _mty_one(a, b):
    if a < 0.0 and b < 0.0:
        return a if a > b else b
    if a > 0.0 and b > 0.0:
        return -(a if a < b else b)
    return 0.0


@njit(cache=True, nogil=True)
def _lc_from_cache(u, lr, const, sigma2):
    s = const
    for i in range(u.size):
        s += lr[i] - u[i] * u[i] / (2.0 * sigma2)
    return s


@njit(cache=True, nogil=True)
def _cwis_chunk(u, lr, props, u_acc, u_del, log_c, track, beta, sigma2, x_flat, offsets, y_plus,
                g_const, g_out, delta_out, acc_out):
    q = u.size
    lr_prev = np.empty(q)
    for k in range(props.shape[0]):
        for i in range(q):
            lr_prev[i] = lr[i]
        nacc = 0
        for i in range(q):
            v = props[k, i]
            lv = _log_r_one(v, i, beta, x_flat, offsets, y_plus)
            a = u_acc[k, i] < _alpha(lv - lr[i])
            if a:
                u[i] = v
                lr[i] = lv
                nacc += 1
            acc_out[k, i] = a
        d = 0
        if track and nacc == q:
            lp = 0.0
            for i in range(q):
                lp += _mty_one(lr_prev[i] - log_c[i], lr[i] - log_c[i])
            if u_del[k] < math.exp(lp):
                d = 1
        delta_out[k] = d
        g_out[k] = _lc_from_cache(u, lr, g_const, sigma2)


@njit(cache=True, nogil=True)
def _mhis_chunk(u, lr, props, u_acc, beta, sigma2, x_flat, offsets, y_plus, g_const, g_out, acc_out):
    q = u.size
    lr_new = np.empty(q)
    for k in range(props.shape[0]):
        tot_old = 0.0
        tot_new = 0.0
        for i in range(q):
            lr_new[i] = _log_r_one(props[k, i], i, beta, x_flat, offsets, y_plus)
            tot_new += lr_new[i]
            tot_old += lr[i]
        a = u_acc[k] < _alpha(tot_new - tot_old)
        if a:
            for i in range(q):
                u[i] = props[k, i]
                lr[i] = lr_new[i]
        acc_out[k] = a
        g_out[k] = _lc_from_cache(u, lr, g_const, sigma2)


@njit(cache=True, nogil=True)
def _rw_chunk(u, lr, incs, u_acc, beta, sigma2, tau2, x_flat, offsets, y_plus, g_const,
              u_tilde, b, log_c_pi, g_out, acc_out, feas_inside, feas_factor_sum, feas_log_factor_max,
              feas_regen_sum):
    q = u.size
    nb = b.shape[0]
    cand = np.empty(q)
    lr_new = np.empty(q)
    for k in range(incs.shape[0]):
        lp_old = 0.0
        lp_new = 0.0
        for i in range(q):
            cand[i] = u[i] + incs[k, i]
            lr_new[i] = _log_r_one(cand[i], i, beta, x_flat, offsets, y_plus)
            lp_new += lr_new[i] - cand[i] * cand[i] / (2.0 * sigma2)
            lp_old += lr[i] - u[i] * u[i] / (2.0 * sigma2)
        a = u_acc[k] < _alpha(lp_new - lp_old)
        if a:
            mty = _mty_one(lp_old - log_c_pi, lp_new - log_c_pi)
            for j in range(nb):
                inside = True
                s = 0.0
                for i in range(q):
                    dc = cand[i] - u_tilde[i]
                    if abs(dc) >= b[j, i]:
                        inside = False
                        break
                    dp = u[i] - u_tilde[i]
                    sg = 1.0 if dp > 0.0 else (-1.0 if dp < 0.0 else 0.0)
                    s += dp * (dc + b[j, i] * sg)
                if inside:
                    lf = -s / tau2
                    feas_inside[j] += 1
                    feas_factor_sum[j] += math.exp(lf)
                    if lf > feas_log_factor_max[j]:
                        feas_log_factor_max[j] = lf
                    feas_regen_sum[j] += math.exp(lf + mty)
            for i in range(q):
                u[i] = cand[i]
                lr[i] = lr_new[i]
        acc_out[k] = a
        g_out[k] = _lc_from_cache(u, lr, g_const, sigma2)


# -- drivers ------------------------------------------------------------------------

@dataclass
class GlmmChunk:
    g: np.ndarray
    delta: np.ndarray  # zeros unless regeneration is tracked
    accepted: np.ndarray  # whole-step flags for RW/MHIS, (steps, q) per-component flags for CWIS


@dataclass
class Feasibility:
    multipliers: np.ndarray
    accepted: int = 0
    inside: np.ndarray = None
    factor_sum: np.ndarray = None
    log_factor_max: np.ndarray = None
    regen_sum: np.ndarray = None

    def __post_init__(self):
        k = len(self.multipliers)
        self.inside = np.zeros(k, dtype=np.int64) if self.inside is None else self.inside
        self.factor_sum = np.zeros(k) if self.factor_sum is None else self.factor_sum
        self.log_factor_max = np.full(k, -np.inf) if self.log_factor_max is None else self.log_factor_max
        self.regen_sum = np.zeros(k) if self.regen_sum is None else self.regen_sum

    @property
    def fraction_inside(self) -> np.ndarray:
        return self.inside / max(self.accepted, 1)

    @property
    def mean_nonzero_factor(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.inside > 0, self.factor_sum / np.maximum(self.inside, 1), np.nan)


def _g_const(model: GlmmModel) -> float:
    return model.beta * model.xy_sum - 0.5 * model.q * math.log(model.sigma2)


def initial_state(model: GlmmModel, rng: RandomStream) -> np.ndarray:
    """U0 ~ N(0, sigma2 I), drawn from a dedicated substream."""
    return rng.substream(2).normal(0.0, model.sigma, model.q)


def glmm_chunks(model: GlmmModel, sampler: str, rng: RandomStream, *, start=None, log_c=None,
                tau2="auto", feasibility: Optional[Feasibility] = None, u_tilde=None, sd=None,
                log_c_pi: float = 0.0, chunk: int = CHUNK, state_out: Optional[list] = None):
    """Endless generator of compiled-kernel chunks for the RW, MHIS or CWIS chain.

    g is the complete-data log-likelihood at the model's own parameter.  CWIS
    tracks regeneration when ``log_c`` (per-component log medians of r_i) is
    given; RW accumulates hypercube statistics into ``feasibility`` when given
    (with ``u_tilde``, ``sd`` and ``log_c_pi``).  ``state_out``, if a list,
    receives the live state array.
    """
    if sampler not in ("rw", "mhis", "cwis"):
        raise ConfigurationError(f"glmm model has no {sampler!r} sampler")
    u = initial_state(model, rng) if start is None else np.array(start, dtype=float).reshape(-1)
    if u.size != model.q:
        raise ConfigurationError(f"start has length {u.size}, expected {model.q}")
    if state_out is not None:
        state_out.append(u)
    lr = glmm_log_r_i(u, model)
    gc = _g_const(model)
    args = (model.beta, model.sigma2)
    data = (model.x_flat, model.offsets, model.y_plus.astype(float))
    delta_rng = rng.substream(1)
    q = model.q
    if sampler == "cwis":
        track = log_c is not None
        lc = np.broadcast_to(np.asarray(log_c if track else 0.0, dtype=float), (q,)).copy()
        while True:
            props = rng.normal(0.0, model.sigma, (chunk, q))
            u_acc = rng.uniforms((chunk, q))
            u_del = delta_rng.uniforms(chunk) if track else np.ones(chunk)
            g = np.empty(chunk)
            delta = np.zeros(chunk, dtype=np.int8)
            acc = np.zeros((chunk, q), dtype=np.bool_)
            _cwis_chunk(u, lr, props, u_acc, u_del, lc, track, *args, *data, gc, g, delta, acc)
            yield GlmmChunk(g, delta, acc)
    elif sampler == "mhis":
        while True:
            props = rng.normal(0.0, model.sigma, (chunk, q))
            u_acc = rng.uniforms(chunk)
            g = np.empty(chunk)
            acc = np.zeros(chunk, dtype=np.bool_)
            _mhis_chunk(u, lr, props, u_acc, *args, *data, gc, g, acc)
            yield GlmmChunk(g, np.zeros(chunk, dtype=np.int8), acc)
    else:
        t2 = rw_tau2(model, tau2)
        if feasibility is not None:
            if u_tilde is None or sd is None:
                raise ConfigurationError("feasibility tracking needs u_tilde and sd")
            ut = np.asarray(u_tilde, dtype=float)
            b = np.outer(np.asarray(feasibility.multipliers, dtype=float), np.asarray(sd, dtype=float))
        else:
            ut = np.zeros(q)
            b = np.zeros((0, q))
        while True:
            incs = rng.normal(0.0, math.sqrt(t2), (chunk, q))
            u_acc = rng.uniforms(chunk)
            g = np.empty(chunk)
            acc = np.zeros(chunk, dtype=np.bool_)
            if feasibility is not None:
                _rw_chunk(u, lr, incs, u_acc, model.beta, model.sigma2, t2, *data, gc, ut, b, log_c_pi, g, acc,
                          feasibility.inside, feasibility.factor_sum, feasibility.log_factor_max,
                          feasibility.regen_sum)
                feasibility.accepted += int(acc.sum())
            else:
                _rw_chunk(u, lr, incs, u_acc, model.beta, model.sigma2, t2, *data, gc, ut, b, 0.0, g, acc,
                          np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), np.zeros(0))
            yield GlmmChunk(g, np.zeros(chunk, dtype=np.int8), acc)


def glmm_run(model: GlmmModel, sampler: str, n: int, rng: RandomStream, **kw) -> GlmmChunk:
    """Fixed-length compiled run."""
    parts = []
    left = n
    for out in glmm_chunks(model, sampler, rng, chunk=min(CHUNK, n), **kw):
        take = min(left, out.g.size)
        parts.append(GlmmChunk(out.g[:take], out.delta[:take], out.accepted[:take]))
        left -= take
        if left == 0:
            break
    return GlmmChunk(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("g", "delta", "accepted")))


@dataclass(frozen=True)
class PreliminaryConstants:
    """Constants estimated once from a preliminary CWIS run and shared read-only."""

    log_c: np.ndarray  # per-component log medians of r_i
    u_tilde: np.ndarray  # per-component means
    sd: np.ndarray  # per-component standard deviations
    log_c_pi: float  # log median of pi (unnormalized)
    n: int

    def to_dict(self) -> dict:
        return {"log_c": self.log_c.tolist(), "u_tilde": self.u_tilde.tolist(), "sd": self.sd.tolist(),
                "log_c_pi": self.log_c_pi, "n": self.n}


@njit(cache=True, nogil=True)
def _cwis_states(u, lr, props, u_acc, beta, x_flat, offsets, y_plus, u_out, lr_out):
    q = u.size
    for k in range(props.shape[0]):
        for i in range(q):
            v = props[k, i]
            lv = _log_r_one(v, i, beta, x_flat, offsets, y_plus)
            if u_acc[k, i] < _alpha(lv - lr[i]):
                u[i] = v
                lr[i] = lv
            u_out[k, i] = u[i]
            lr_out[k, i] = lr[i]


def preliminary_constants(model: GlmmModel, rng: RandomStream, n: int = 100_000) -> PreliminaryConstants:
    u = initial_state(model, rng)
    lr = glmm_log_r_i(u, model)
    props = rng.normal(0.0, model.sigma, (n, model.q))
    u_acc = rng.uniforms((n, model.q))
    us = np.empty((n, model.q))
    lrs = np.empty((n, model.q))
    _cwis_states(u, lr, props, u_acc, model.beta, model.x_flat, model.offsets, model.y_plus.astype(float), us, lrs)
    log_pi = lrs.sum(axis=1) - (us ** 2).sum(axis=1) / (2.0 * model.sigma2)
    return PreliminaryConstants(np.median(lrs, axis=0), us.mean(axis=0), us.std(axis=0, ddof=1),
                                float(np.median(log_pi)), n)


def run_feasibility(model: GlmmModel, consts: PreliminaryConstants, n: int, rng: RandomStream,
                    multipliers: Sequence[float] = FEASIBILITY_MULTIPLIERS, tau2="auto") -> Feasibility:
    """RW chain of n steps accumulating hypercube-regeneration statistics."""
    feas = Feasibility(np.asarray(multipliers, dtype=float))
    glmm_run(model, "rw", n, rng, tau2=tau2, feasibility=feas, u_tilde=consts.u_tilde, sd=consts.sd,
             log_c_pi=consts.log_c_pi)
    return feas
