import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vamh import glmm
from vamh.errors import ConfigurationError
from vamh.regen import cwis_regen_prob
from vamh.rng import RandomStream

DATA = glmm.synthetic_dataset()
MODEL = DATA.at(4.0, 1.5)
us = st.lists(st.floats(-4.0, 4.0), min_size=10, max_size=10).map(np.array)


class TestData:
    def test_covariates(self):
        assert MODEL.q == 10 and np.all(MODEL.m == 15)
        for x in MODEL.x:
            assert np.allclose(x, np.arange(1, 16) / 15)

    def test_frozen_dataset(self):
        assert MODEL.y_plus.tolist() == [11, 9, 13, 14, 15, 10, 15, 12, 13, 13]

    def test_deterministic(self):
        a = glmm.synthetic_dataset()
        b = glmm.synthetic_dataset()
        assert all(np.array_equal(x, y) for x, y in zip(a.y, b.y))
        c = glmm.synthetic_dataset(data_seed=1)
        assert not all(np.array_equal(x, y) for x, y in zip(a.y, c.y))

    def test_symmetric_logistic(self):
        rng = RandomStream(1)
        x = glmm.paper_covariates()
        totals = np.array([glmm.glmm_simulate_data(10, 15, x, 0.0, 1e-14, rng).y_plus.sum() for _ in range(10_000)])
        se = math.sqrt(150 * 0.25 / 10_000)
        assert abs(totals.mean() - 75.0) < 3 * se

    def test_model_from_config(self):
        m = glmm.model_from_config({})
        assert m.beta == 4.0 and m.sigma2 == 1.5
        assert m.y_plus.tolist() == MODEL.y_plus.tolist()
        ragged = glmm.model_from_config({"q": 3, "m": [4, 5, 6]})
        assert ragged.m.tolist() == [4, 5, 6]

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            glmm.GlmmModel((np.ones(3),), (np.array([0, 2, 1]),), 1.0, 1.0)
        with pytest.raises(ConfigurationError):
            glmm.GlmmModel((np.ones(3),), (np.ones(3),), 1.0, 0.0)
        with pytest.raises(ConfigurationError):
            glmm.rw_tau2(MODEL, -1.0)


class TestDensities:
    def test_log_r_at_zero(self):
        expected = -sum(np.log1p(np.exp(MODEL.beta * x)).sum() for x in MODEL.x)
        assert glmm.glmm_log_r(np.zeros(10), MODEL) == pytest.approx(expected, rel=1e-13)
        assert glmm.glmm_log_target(np.zeros(10), MODEL) == pytest.approx(expected, rel=1e-13)

    @given(us)
    def test_components_sum(self, u):
        li = glmm.glmm_log_r_i(u, MODEL)
        assert li.sum() == pytest.approx(glmm.glmm_log_r(u, MODEL), abs=1e-12 * max(1, abs(li.sum())))
        for i in range(10):
            assert glmm.glmm_log_r_one(u[i], i, MODEL) == pytest.approx(li[i], rel=1e-12, abs=1e-12)

    @given(us, st.permutations(list(range(10))))
    def test_permutation_invariance(self, u, perm):
        permuted = glmm.GlmmModel(tuple(MODEL.x[i] for i in perm), tuple(MODEL.y[i] for i in perm),
                                  MODEL.beta, MODEL.sigma2)
        assert glmm.glmm_log_target(u[perm], permuted) == pytest.approx(glmm.glmm_log_target(u, MODEL), rel=1e-12)

    @settings(max_examples=50)
    @given(us)
    def test_gradient(self, u):
        h = 1e-5
        g = glmm.glmm_gradient(u, MODEL)
        for i in range(10):
            e = np.zeros(10)
            e[i] = h
            fd = (glmm.glmm_log_target(u + e, MODEL) - glmm.glmm_log_target(u - e, MODEL)) / (2 * h)
            assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-7)

    def test_complete_loglik_at_zero(self):
        m = MODEL.at(0.0, 2.0)
        expected = -150 * math.log(2) - 5 * math.log(2.0)
        assert glmm.glmm_complete_loglik(np.zeros(10), m) == pytest.approx(expected, rel=1e-13)

    def test_complete_loglik_relation(self):
        rng = np.random.default_rng(2)
        u1, u2 = rng.normal(size=10), rng.normal(size=10)
        d_target = glmm.glmm_log_target(u1, MODEL) - glmm.glmm_log_target(u2, MODEL)
        d_lc = glmm.glmm_complete_loglik(u1, MODEL) - glmm.glmm_complete_loglik(u2, MODEL)
        assert d_lc == pytest.approx(d_target, rel=1e-12)

    def test_complete_loglik_frozen(self):
        # independent 40-digit evaluation on the regenerated data set
        u = np.arange(10) / 7 - 0.6
        assert glmm.glmm_complete_loglik(u, MODEL) == pytest.approx(-58.862128372068229, rel=1e-13)

    def test_complete_loglik_other_theta(self):
        u = np.arange(10) / 7 - 0.6
        assert glmm.glmm_complete_loglik(u, DATA, at_theta=(4.0, 1.5)) == pytest.approx(
            glmm.glmm_complete_loglik(u, MODEL), rel=1e-14)

    def test_r_bound(self):
        bound = MODEL.log_r_bound()
        rng = np.random.default_rng(3)
        xb = MODEL.beta * MODEL.x_flat
        for _ in range(10):
            u = rng.normal(0.0, 3.0, (100_000, 10))
            eta = xb[None, :] + np.repeat(u, MODEL.m, axis=1)
            lr = (u * MODEL.y_plus).sum(axis=1) - glmm.softplus(eta).sum(axis=1)
            assert np.all(lr <= bound + 1e-9)

    def test_softplus_stable(self):
        z = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
        assert np.allclose(glmm.softplus(z), [0.0, math.log1p(math.exp(-30)), math.log(2), 30 + math.log1p(math.exp(-30)),
                                              800.0], rtol=1e-15, atol=1e-300)

    def test_extreme_u_finite(self):
        for v in (-500.0, 500.0):
            assert math.isfinite(glmm.glmm_log_target(np.full(10, v), MODEL))


class TestAcceptance:
    def test_rw_small_tau(self):
        u = np.random.default_rng(4).normal(size=10)
        cand = glmm.glmm_rw_propose(u, 1e-300, RandomStream(0))
        assert np.array_equal(cand, u)
        assert glmm.glmm_rw_accept(u, cand, MODEL) == 1.0

    def test_mhis_same_state(self):
        u = np.random.default_rng(5).normal(size=10)
        assert glmm.glmm_mhis_accept(u, u, MODEL) == 1.0

    @settings(max_examples=100)
    @given(us, us)
    def test_mhis_equals_generic(self, u, v):
        prop = glmm.glmm_mhis_proposal(MODEL)
        num = glmm.glmm_log_target(v, MODEL) + prop.log_density(None, u)
        den = glmm.glmm_log_target(u, MODEL) + prop.log_density(None, v)
        assert glmm.glmm_mhis_accept(u, v, MODEL) == pytest.approx(min(1.0, math.exp(min(num - den, 50))),
                                                                   rel=1e-10, abs=1e-300)

    def test_rw_acceptance_rate(self):
        out = glmm.glmm_run(MODEL, "rw", 200_000, RandomStream(6))
        assert 0.30 < out.accepted.mean() < 0.48


class TestRegeneration:
    def test_at_constants_is_one(self):
        u = np.random.default_rng(7).normal(size=10)
        log_c = glmm.glmm_log_r_i(u, MODEL)
        assert glmm.glmm_cwis_regen_prob(u, u, log_c, MODEL) == 1.0

    def test_three_case_example(self):
        # q = 1, r(u') = 2c, r(u) = c/2: min(1/2,1) min(1/2,1) / min(1/4,1) = 1
        one = glmm.GlmmModel((MODEL.x[0],), (MODEL.y[0],), MODEL.beta, MODEL.sigma2)
        u_prev, u_curr = np.array([0.3]), np.array([-0.4])
        lp, lc = glmm.glmm_log_r_i(u_prev, one)[0], glmm.glmm_log_r_i(u_curr, one)[0]
        # choose c so that r(u') = 2c; then check the ratio r(u) / c
        log_c = lp - math.log(2)
        p = glmm.glmm_cwis_regen_prob(u_prev, u_curr, [log_c], one)
        a, b = lp - log_c, lc - log_c
        ref = min(1, math.exp(-a)) * min(1, math.exp(b)) / min(1, math.exp(b - a))
        assert p == pytest.approx(ref, rel=1e-12)
        assert float(glmm._mty_log(math.log(2), -math.log(2))) == pytest.approx(0.0, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(us, us, st.lists(st.floats(-15, -5), min_size=10, max_size=10))
    def test_reduced_equals_generic(self, u_prev, u_curr, log_c):
        spec = glmm.glmm_minorization_spec(MODEL, log_c)
        generic = cwis_regen_prob(u_prev, u_curr, spec, glmm.glmm_target(MODEL), glmm.glmm_cwis_proposals(MODEL))
        assert glmm.glmm_cwis_regen_prob(u_prev, u_curr, log_c, MODEL) == pytest.approx(generic, rel=1e-9,
                                                                                          abs=1e-300)

    def test_in_unit_interval_along_chain(self):
        pre = glmm.preliminary_constants(MODEL, RandomStream(8, 0, 5), 20_000)
        rng = RandomStream(9)
        u = glmm.initial_state(MODEL, rng)
        lr = glmm.glmm_log_r_i(u, MODEL)
        us_ = np.empty((100_000, 10))
        lrs = np.empty((100_000, 10))
        glmm._cwis_states(u, lr, rng.normal(0, MODEL.sigma, (100_000, 10)), rng.uniforms((100_000, 10)),
                          MODEL.beta, MODEL.x_flat, MODEL.offsets, MODEL.y_plus.astype(float), us_, lrs)
        a = lrs[:-1] - pre.log_c
        b = lrs[1:] - pre.log_c
        lp = glmm._mty_log(a, b).sum(axis=1)
        assert np.all(lp <= 1e-12)

    def test_rw_factor(self):
        ut = np.zeros(10)
        b = np.ones(10)
        assert glmm.glmm_rw_log_factor(np.full(10, 0.3), np.full(10, 1.5), ut, b, 0.15) == -math.inf
        assert glmm.glmm_rw_log_factor(ut, np.full(10, 0.5), ut, b, 0.15) == 0.0
        assert glmm.glmm_rw_regen_prob(np.full(10, 0.3), np.full(10, 1.5), ut, b, 0.15, 0.0, MODEL) == 0.0

    @settings(max_examples=200)
    @given(st.lists(st.floats(-1.0, 1.0), min_size=10, max_size=10), st.lists(st.floats(-0.99, 0.99), min_size=10,
                                                                              max_size=10))
    def test_rw_factor_at_most_one(self, up, uc):
        lf = glmm.glmm_rw_log_factor(np.array(up), np.array(uc), np.zeros(10), np.ones(10), 0.15)
        assert lf <= 1e-12


def _replay_cwis(model, n, seed, log_c):
    rng = RandomStream(seed)
    drng = rng.substream(1)
    u = glmm.initial_state(model, rng)
    props = rng.normal(0.0, model.sigma, (n, model.q))
    u_acc = rng.uniforms((n, model.q))
    u_del = drng.uniforms(n)
    g, d, acc = np.empty(n), np.zeros(n, dtype=int), np.zeros((n, model.q), dtype=bool)
    for k in range(n):
        prev = u.copy()
        for i in range(model.q):
            a = glmm.glmm_log_r_one(props[k, i], i, model) - glmm.glmm_log_r_one(u[i], i, model)
            if u_acc[k, i] < min(1.0, math.exp(min(a, 50.0))):
                u[i] = props[k, i]
                acc[k, i] = True
        if acc[k].all():
            d[k] = int(u_del[k] < glmm.glmm_cwis_regen_prob(prev, u, log_c, model))
        g[k] = glmm.glmm_complete_loglik(u, model)
    return g, d, acc


class TestCompiledKernels:
    def test_cwis_replay(self):
        log_c = glmm.preliminary_constants(MODEL, RandomStream(10, 0, 5), 20_000).log_c
        out = glmm.glmm_run(MODEL, "cwis", 3000, RandomStream(11), log_c=log_c)
        g, d, acc = _replay_cwis(MODEL, 3000, 11, log_c)
        assert np.array_equal(out.accepted, acc)
        assert np.array_equal(out.delta, d)
        assert np.allclose(out.g, g, rtol=1e-11)

    def test_rejected_component_never_regenerates(self):
        out = glmm.glmm_run(MODEL, "cwis", 2000, RandomStream(12), log_c=np.zeros(10))
        assert not np.any(out.delta[~out.accepted.all(axis=1)])

    def test_mhis_replay(self):
        n = 3000
        out = glmm.glmm_run(MODEL, "mhis", n, RandomStream(13))
        rng = RandomStream(13)
        u = glmm.initial_state(MODEL, rng)
        props = rng.normal(0.0, MODEL.sigma, (n, 10))
        u_acc = rng.uniforms(n)
        for k in range(n):
            a = u_acc[k] < glmm.glmm_mhis_accept(u, props[k], MODEL)
            assert a == out.accepted[k]
            if a:
                u = props[k].copy()
            assert out.g[k] == pytest.approx(glmm.glmm_complete_loglik(u, MODEL), rel=1e-11)

    def test_rw_replay_with_feasibility(self):
        n = 3000
        pre = glmm.preliminary_constants(MODEL, RandomStream(14, 0, 5), 20_000)
        feas = glmm.run_feasibility(MODEL, pre, n, RandomStream(15))
        rng = RandomStream(15)
        u = glmm.initial_state(MODEL, rng)
        tau2 = glmm.rw_tau2(MODEL)
        incs = rng.normal(0.0, math.sqrt(tau2), (n, 10))
        u_acc = rng.uniforms(n)
        mults = np.asarray(glmm.FEASIBILITY_MULTIPLIERS)
        inside = np.zeros(len(mults), dtype=int)
        fsum = np.zeros(len(mults))
        rsum = np.zeros(len(mults))
        accepted = 0
        for k in range(n):
            cand = u + incs[k]
            if u_acc[k] < glmm.glmm_rw_accept(u, cand, MODEL):
                accepted += 1
                for j, mlt in enumerate(mults):
                    b = mlt * pre.sd
                    lf = glmm.glmm_rw_log_factor(u, cand, pre.u_tilde, b, tau2)
                    if lf > -math.inf:
                        inside[j] += 1
                        fsum[j] += math.exp(lf)
                        rsum[j] += glmm.glmm_rw_regen_prob(u, cand, pre.u_tilde, b, tau2, pre.log_c_pi, MODEL)
                u = cand
        assert feas.accepted == accepted
        assert np.array_equal(feas.inside, inside)
        assert np.allclose(feas.factor_sum, fsum, rtol=1e-10, atol=1e-300)
        assert np.allclose(feas.regen_sum, rsum, rtol=1e-10, atol=1e-300)

    def test_product_form_matches_softplus(self):
        rng = np.random.default_rng(16)
        yp = MODEL.y_plus.astype(float)
        for v in np.concatenate([rng.normal(0, 5, 200), [-700.0, 700.0, 0.0]]):
            for i in range(10):
                ref = glmm.glmm_log_r_one(v, i, MODEL)
                got = glmm._log_r_one(v, i, MODEL.beta, MODEL.x_flat, MODEL.offsets, yp)
                assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_bad_sampler_and_start(self):
        with pytest.raises(ConfigurationError):
            next(glmm.glmm_chunks(MODEL, "mix", RandomStream(0)))
        with pytest.raises(ConfigurationError):
            next(glmm.glmm_chunks(MODEL, "cwis", RandomStream(0), start=np.zeros(3)))
        with pytest.raises(ConfigurationError):
            next(glmm.glmm_chunks(MODEL, "rw", RandomStream(0), feasibility=glmm.Feasibility(np.ones(1))))


class TestPreliminary:
    def test_constants_shape_and_determinism(self):
        a = glmm.preliminary_constants(MODEL, RandomStream(17, 0, 5), 10_000)
        b = glmm.preliminary_constants(MODEL, RandomStream(17, 0, 5), 10_000)
        assert a.log_c.shape == (10,) and np.array_equal(a.log_c, b.log_c)
        assert np.all(a.sd > 0)
        d = a.to_dict()
        assert set(d) == {"log_c", "u_tilde", "sd", "log_c_pi", "n"}

    def test_feasibility_monotone(self):
        pre = glmm.preliminary_constants(MODEL, RandomStream(18, 0, 5), 50_000)
        feas = glmm.run_feasibility(MODEL, pre, 200_000, RandomStream(19))
        frac = feas.fraction_inside
        assert np.all(np.diff(frac) >= 0)
        nz = feas.mean_nonzero_factor[feas.inside > 0]
        assert np.all(np.diff(nz) <= 0)
        assert frac[0] < 0.01
