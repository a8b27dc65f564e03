import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import discrete_proposal, discrete_target
from vamh import bounds
from vamh.chain import (ChainState, Composition, SingleBlock, TargetDensity, ComponentProposal,
                        composition_sweep, mh_accept_log, mh_step, mixing_step, run_chain, write_trace_csv)
from vamh.errors import ConfigurationError, InvalidStateError
from vamh.rng import RandomStream

finite = st.floats(-50, 50, allow_nan=False)


class TestAcceptLog:
    def test_frozen_values(self):
        assert mh_accept_log(-2.0, -1.0, -3.0, -2.5) == 1.0
        # e^{-1.5} from an independent evaluation of the closed form
        assert mh_accept_log(-1.0, -2.0, -2.5, -3.0) == pytest.approx(0.22313016014842982, rel=1e-14)

    @given(finite, finite)
    def test_equal_ratio_is_one(self, a, b):
        assert mh_accept_log(a, a, b, b) == 1.0

    def test_zero_density_candidate(self):
        assert mh_accept_log(0.0, -math.inf, -1.0, -1.0) == 0.0

    def test_null_current_state_raises(self):
        with pytest.raises(InvalidStateError):
            mh_accept_log(-math.inf, 0.0, 0.0, 0.0)

    def test_no_overflow(self):
        assert mh_accept_log(-1e6, 1e6, 0.0, 0.0) == 1.0
        assert mh_accept_log(1e6, -1e6, 0.0, 0.0) == 0.0


def _three_point():
    pi = np.array([0.2, 0.3, 0.5])
    p = np.array([0.5, 0.3, 0.2])
    target = discrete_target(pi)
    prop = ComponentProposal(None, discrete_proposal(0, p).sample, discrete_proposal(0, p).log_density, True)
    return pi, p, target, prop


class TestMhStep:
    def test_consumes_one_proposal_and_one_uniform(self):
        pi, p, target, prop = _three_point()
        a, b = RandomStream(5), RandomStream(5)
        mh_step(ChainState.initial([2.0], target), prop, target, a)
        prop.sample(np.array([2.0]), b)
        b.uniform()
        assert a.uniform() == b.uniform()

    def test_empirical_acceptance_matches_alpha(self):
        pi, p, target, prop = _three_point()
        x = 2
        expected = sum(p[y] * min(1.0, pi[y] * p[x] / (pi[x] * p[y])) for y in range(3))
        rng = RandomStream(11)
        start = ChainState.initial([float(x)], target)
        n = 100_000
        hits = sum(mh_step(start, prop, target, rng)[1] for _ in range(n))
        se = math.sqrt(expected * (1 - expected) / n)
        assert abs(hits / n - expected) < 3 * se

    def test_rejection_returns_input_state(self):
        target = discrete_target([[0.5, 0.5]])
        never = ComponentProposal(1, lambda x, rng: np.array([5.0]), lambda x, v: 0.0)
        s = ChainState.initial([0.0, 0.0], target)
        new, acc, alpha = mh_step(s, never, target, RandomStream(0))
        assert new is s and not acc and alpha == 0.0

    def test_full_conditional_proposal_always_accepts(self):
        pi = np.array([[0.1, 0.2], [0.3, 0.4]])
        target = discrete_target(pi)
        rng = RandomStream(3)
        for x0 in range(2):
            cond = pi[x0] / pi[x0].sum()
            prop = discrete_proposal(1, cond)
            for _ in range(20):
                _, acc, alpha = mh_step(ChainState.initial([x0, 0.0], target), prop, target, rng)
                assert alpha == pytest.approx(1.0) and acc


class TestSweeps:
    def test_single_component_composition_equals_mh_step(self):
        pi, p, target, _ = _three_point()
        prop = discrete_proposal(0, p)
        s1 = s2 = ChainState.initial([1.0], target)
        r1, r2 = RandomStream(9), RandomStream(9)
        for _ in range(200):
            s1, _ = composition_sweep(s1, [prop], target, r1)
            s2, _, _ = mh_step(s2, prop, target, r2)
            assert s1.x[0] == s2.x[0]

    def test_gibbs_sweep_alphas_are_one(self):
        pi = np.array([[0.1, 0.2, 0.05], [0.3, 0.15, 0.2]])
        target = discrete_target(pi)
        rng = RandomStream(1)
        state = ChainState.initial([0.0, 0.0], target)
        for _ in range(50):
            x0 = int(state.x[0])
            x1 = int(state.x[1])
            # the first update conditions on the current x1, the second on the new x0
            props0 = discrete_proposal(0, pi[:, x1] / pi[:, x1].sum())
            new, per = composition_sweep(state, [props0, discrete_proposal(1, np.ones(3) / 3)], target, rng)
            assert per[0][1] == pytest.approx(1.0)
            y0 = int(new.x[0])
            props1 = discrete_proposal(1, pi[y0] / pi[y0].sum())
            mid = ChainState.initial([y0, x1], target)
            _, acc, alpha = mh_step(mid, props1, target, rng)
            assert alpha == pytest.approx(1.0)
            state = new
            del x0

    def test_order_mismatch_raises(self):
        target = discrete_target(np.ones((2, 2)) / 4)
        with pytest.raises(ConfigurationError):
            composition_sweep(ChainState.initial([0, 0], target), [discrete_proposal(0, [0.5, 0.5])], target,
                              RandomStream(0))

    @pytest.mark.slow
    def test_simulated_transition_matrix_matches_exact(self):
        pi = np.array([[0.1, 0.2], [0.3, 0.4]])
        p0, p1 = np.array([0.6, 0.4]), np.array([0.3, 0.7])
        inst = bounds.DiscreteInstance((2, 2), pi, (p0, p1))
        P = bounds.exact_kernel_matrix(inst, "composition")
        target = discrete_target(pi)
        props = [discrete_proposal(0, p0), discrete_proposal(1, p1)]
        rng = RandomStream(17)
        per_start = 250_000
        for s, x in enumerate(inst.states()):
            counts = np.zeros(4)
            start = ChainState.initial(x.astype(float), target)
            for _ in range(per_start):
                new, _ = composition_sweep(start, props, target, rng)
                counts[inst.index(new.x.astype(int))] += 1
            freq = counts / per_start
            se = np.sqrt(np.maximum(P[s] * (1 - P[s]), 1e-12) / per_start)
            assert np.all(np.abs(freq - P[s]) <= 4 * se + 1e-12)


class TestMixing:
    def test_selection_frequencies(self):
        target = discrete_target(np.ones((2, 2, 2)) / 8)
        props = [discrete_proposal(i, [0.5, 0.5]) for i in range(3)]
        rng = RandomStream(2)
        state = ChainState.initial([0, 0, 0], target)
        n = 100_000
        counts = np.zeros(3)
        for _ in range(n):
            state, chosen, _ = mixing_step(state, props, np.ones(3) / 3, target, rng)
            counts[chosen] += 1
        se = math.sqrt((1 / 3) * (2 / 3) / n)
        assert np.all(np.abs(counts / n - 1 / 3) < 3 * se)

    def test_single_component_always_selected(self):
        pi, p, target, _ = _three_point()
        state = ChainState.initial([0.0], target)
        _, chosen, _ = mixing_step(state, [discrete_proposal(0, p)], [1.0], target, RandomStream(0))
        assert chosen == 0

    def test_other_components_untouched(self):
        target = discrete_target(np.full((3, 3, 3), 1 / 27))
        props = [discrete_proposal(i, np.ones(3) / 3) for i in range(3)]
        rng = RandomStream(4)
        state = ChainState.initial([1, 2, 0], target)
        for _ in range(500):
            new, chosen, _ = mixing_step(state, props, [0.2, 0.3, 0.5], target, rng)
            others = [i for i in range(3) if i != chosen]
            assert np.array_equal(new.x[others], state.x[others])
            state = new

    @pytest.mark.parametrize("w", [[0.5, 0.6], [1.0, 0.0], [0.5, 0.5 + 1e-10]])
    def test_bad_weights(self, w):
        target = discrete_target(np.ones((2, 2)) / 4)
        props = [discrete_proposal(i, [0.5, 0.5]) for i in range(2)]
        with pytest.raises(ConfigurationError):
            mixing_step(ChainState.initial([0, 0], target), props, w, target, RandomStream(0))


class TestRunChain:
    def test_length_one(self):
        pi, p, target, prop = _three_point()
        run = run_chain(ChainState.initial([0.0], target), SingleBlock(prop, target), 1, lambda x: x[0],
                        RandomStream(0))
        assert run.g.shape == (1,) and run.g[0] == run.final_state.x[0]

    def test_constant_functional(self):
        pi, p, target, prop = _three_point()
        run = run_chain(ChainState.initial([0.0], target), SingleBlock(prop, target), 100, lambda x: 1.0,
                        RandomStream(0))
        assert run.ergodic_average == 1.0

    def test_reproducible(self):
        target = discrete_target(np.array([[0.1, 0.2], [0.3, 0.4]]))
        props = [discrete_proposal(0, [0.6, 0.4]), discrete_proposal(1, [0.3, 0.7])]
        runs = [run_chain(ChainState.initial([0, 0], target), Composition(props, target), 300,
                          lambda x: x[0] + 2 * x[1], RandomStream(8, 3)) for _ in range(2)]
        assert np.array_equal(runs[0].g, runs[1].g)
        assert np.array_equal(runs[0].accepted, runs[1].accepted)

    def test_log_pi_cache_consistent(self):
        from vamh import glmm
        model = glmm.synthetic_dataset().at(4.0, 1.5)
        target = glmm.glmm_target(model)
        state = ChainState.initial(np.zeros(model.q), target)
        rng = RandomStream(6)
        props = glmm.glmm_cwis_proposals(model)
        for _ in range(50):
            state, _ = composition_sweep(state, props, target, rng)
            assert state.log_pi_cache == pytest.approx(target.log_pi(state.x), abs=1e-9)

    @pytest.mark.slow
    def test_toy_generic_run_matches_quadrature(self):
        from vamh import toy
        from vamh.diagnostics import integrated_autocorr_time
        model = toy.PAPER_MODEL
        target = toy.toy_target(model)
        run = run_chain(ChainState.initial([10.0, 1.0], target), Composition(toy.toy_cwis_proposals(model), target),
                        1_000_000, toy.icv, RandomStream(21))
        mcse = run.g.std() * math.sqrt(integrated_autocorr_time(run.g) / run.g.size)
        assert abs(run.ergodic_average - toy.oracle_posterior_mean_icv(model)) < 3 * mcse

    def test_trace_csv(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace_csv(path, np.array([1.5, 2.5]), np.array([[True, False], [False, False]]), {"seed": 1})
        lines = path.read_text().splitlines()
        assert lines[0] == '# {"seed": 1}'
        rows = list(csv.reader(lines[1:]))
        assert rows[0] == ["step", "g", "accepted_any", "acc_1", "acc_2"]
        assert rows[1] == ["1", "1.5", "1", "1", "0"]
        assert rows[2] == ["2", "2.5", "0", "0", "0"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2), st.integers(0, 2))
def test_factorized_cwis_alpha_ignores_other_components(seed, a, b):
    rng = np.random.default_rng(seed)
    f0, f1 = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    target = discrete_target(np.outer(f0, f1))
    p0 = rng.dirichlet(np.ones(3))
    prop = ComponentProposal(0, lambda x, r: np.array([float(a)]), discrete_proposal(0, p0).log_density, True)
    alphas = [mh_step(ChainState.initial([b, other], target), prop, target, RandomStream(0))[2] for other in range(3)]
    assert np.allclose(alphas, alphas[0], rtol=1e-12)


def test_target_density_validation():
    with pytest.raises(ConfigurationError):
        TargetDensity(dims=(1, 0), log_pi=lambda x: 0.0)
    t = TargetDensity(dims=(2, 1), log_pi=lambda x: 0.0)
    assert t.d == 2 and t.size == 3 and t.slice(1) == slice(2, 3)
    with pytest.raises(InvalidStateError):
        ChainState.initial([0.0], discrete_target([0.0, 1.0]))
