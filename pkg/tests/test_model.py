import math

import numpy as np
import pytest

from conftest import hyper_tuples, make_panel, uniform_hypers
from oracles import (
    canonical_partition,
    canonical_sequences,
    exact_crp_log_mass,
    naive_group_loglik,
    naive_log_joint,
    total_variation,
)
from trcrp.conjugate import NigHyper, predictive_logpdf, NigStats
from trcrp.model import (
    ChainState,
    GroupModel,
    crp_log_weights,
    forward_sample_sequence,
    group_sequence_loglik,
    log_joint,
    sequence_loglik,
    simulate,
)
from trcrp.util import logsumexp


def build_group(panel, hypers, z, members=None, alpha=1.0):
    members = members if members is not None else list(range(panel.num_series))
    hyper_map = {n: hypers[n] for n in range(panel.num_series)}
    group = GroupModel(members, alpha, panel.num_steps, panel.window, hyper_map)
    for _ in range(max(z)):
        group.add_regime()
    for t, k in enumerate(z, start=1):
        group.assign(t, k, panel.values, panel.observed)
    return group


def build_state(panel, hypers, z_by_group, assignments, alpha0=1.0, alphas=None, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    alphas = alphas if alphas is not None else [1.0] * len(z_by_group)
    state = ChainState.create(panel, alpha0, assignments, alphas, hypers, rng)
    for group, z in zip(state.groups, z_by_group):
        for _ in range(max(z)):
            group.add_regime()
        for t, k in enumerate(z, start=1):
            group.assign(t, k, panel.values, panel.observed)
    return state


# -- CRP weights ------------------------------------------------------------


def test_crp_weights_first_customer():
    assert crp_log_weights([], 1.0) == [0.0]


def test_crp_weights_counts():
    w = np.exp(crp_log_weights([2, 1], 1.0))
    assert np.allclose(w / w.sum(), [0.5, 0.25, 0.25])


def test_crp_weights_large_alpha_prefers_new_table():
    w = np.exp(crp_log_weights([2, 1], 1e9))
    assert w[-1] / w.sum() > 0.9999


# -- reweighted weights -------------------------------------------------------


def test_reweighted_equals_crp_at_p0(rng):
    panel = make_panel([list(rng.normal(size=8)), list(rng.normal(size=8))], window=0)
    hypers = uniform_hypers(2, 0)
    group = build_group(panel, hypers, [1, 2, 1, 1, 2, 3, 1, 2], alpha=0.7)
    scratch = group.empty_clone()
    for t in range(1, 6):
        want = crp_log_weights(scratch.regimes.counts, 0.7)
        got = scratch.reweighted_log_weights(t, panel.values, panel.observed)
        assert got == want
        k = group.regimes.z[t - 1]
        while scratch.regimes.num_regimes < k:
            scratch.add_regime()
        scratch.assign(t, k, panel.values, panel.observed)


def test_reweighted_symmetric_regimes_get_equal_weight():
    # two regimes with identical lag histories and counts
    panel = make_panel([[0.5, 1.0, 1.0, 1.0, 1.0, 2.0]], window=1)
    hypers = uniform_hypers(1, 1)
    group = build_group(panel, hypers, [1, 2, 1, 2], alpha=1.0)
    # lag histories per regime: regime 1 saw lags {0.5, 1.0}, regime 2 saw {1.0, 1.0}
    # build instead with identical histories:
    panel2 = make_panel([[1.0, 1.0, 1.0, 1.0, 1.0, 2.0]], window=1)
    group2 = build_group(panel2, uniform_hypers(1, 1), [1, 2, 1, 2], alpha=1.0)
    w = group2.reweighted_log_weights(5, panel2.values, panel2.observed)
    assert w[0] == pytest.approx(w[1], abs=1e-12)


def test_reweighted_weights_normalize(rng):
    panel = make_panel([list(rng.normal(size=10))], window=2)
    hypers = uniform_hypers(1, 2)
    group = build_group(panel, hypers, [1, 1, 2, 1, 2, 3, 1, 1], alpha=1.3)
    scratch = group.empty_clone()
    for t, k in enumerate(group.regimes.z, start=1):
        w = scratch.reweighted_log_weights(t, panel.values, panel.observed)
        log_b = scratch.log_step_normalizer(t, panel.values, panel.observed)
        assert sum(math.exp(x + log_b) for x in w) == pytest.approx(1.0, abs=1e-12)
        while scratch.regimes.num_regimes < k:
            scratch.add_regime()
        scratch.assign(t, k, panel.values, panel.observed)


# -- step normalizer -----------------------------------------------------------


def test_normalizer_p0_is_crp_normalizer(rng):
    panel = make_panel([list(rng.normal(size=6))], window=0)
    group = build_group(panel, uniform_hypers(1, 0), [1, 1, 2, 1, 2, 1], alpha=0.9)
    scratch = group.empty_clone()
    for t, k in enumerate(group.regimes.z, start=1):
        log_b = scratch.log_step_normalizer(t, panel.values, panel.observed)
        assert log_b == pytest.approx(-math.log(t - 1 + 0.9), abs=1e-12)
        while scratch.regimes.num_regimes < k:
            scratch.add_regime()
        scratch.assign(t, k, panel.values, panel.observed)


def test_normalizer_single_regime_tiny_alpha_inverts_cohesion():
    panel = make_panel([[0.2, 0.4, 0.6, 0.8, 1.0]], window=1)
    hypers = uniform_hypers(1, 1)
    group = build_group(panel, hypers, [1, 1, 1], alpha=1e-300)
    scratch = group.empty_clone()
    for t in (1, 2, 3):
        if t > 1:
            log_b = scratch.log_step_normalizer(t, panel.values, panel.observed)
            coh = scratch.cohesion_logweight(0, 1, t, panel.values, panel.observed)
            count_term = math.log(scratch.regimes.counts[0])
            assert log_b == pytest.approx(-(coh + count_term), abs=1e-10)
        while scratch.regimes.num_regimes < 1:
            scratch.add_regime()
        scratch.assign(t, 1, panel.values, panel.observed)


# -- step predictive ------------------------------------------------------------


def test_predictive_vacuous_when_nothing_observed():
    panel = make_panel([[0.0, 1.0, None, 2.0]], window=1)
    group = build_group(panel, uniform_hypers(1, 1), [1, 1, 1])
    scratch = group.empty_clone()
    scratch.add_regime()
    scratch.assign(1, 1, panel.values, panel.observed)
    assert scratch.log_step_predictive(2, panel.values, panel.observed) == pytest.approx(
        0.0, abs=1e-12
    )


def test_predictive_collapses_to_emission_with_one_regime():
    panel = make_panel([[0.3, 1.0, 1.2, 0.9]], window=1)
    hypers = uniform_hypers(1, 1)
    group = build_group(panel, hypers, [1, 1, 1], alpha=1e-300)
    scratch = group.empty_clone()
    scratch.add_regime()
    scratch.assign(1, 1, panel.values, panel.observed)
    scratch.assign(2, 1, panel.values, panel.observed)
    got = scratch.log_step_predictive(3, panel.values, panel.observed)
    s = scratch.emission[0][0]
    want = predictive_logpdf(hypers[0].emission, s, panel.value(0, 3))
    assert got == pytest.approx(want, abs=1e-10)


def test_predictive_first_step_is_prior_student_t():
    panel = make_panel([[1.7]], window=0)
    hypers = uniform_hypers(1, 0, m=0.0, V=1.0, a=1.0, b=1.0)
    group = GroupModel([0], 1.0, 1, 0, {0: hypers[0]})
    got = group.log_step_predictive(1, panel.values, panel.observed)
    want = predictive_logpdf(hypers[0].emission, NigStats(), 1.7)
    assert got == pytest.approx(want, abs=1e-12)


# -- sequence loglik vs oracle ---------------------------------------------------


def test_sequence_loglik_matches_naive_oracle(rng):
    values = [list(rng.normal(size=7)), list(rng.normal(size=7))]
    values[0][3] = None
    values[1][5] = None
    panel = make_panel(values, window=2)
    hypers = uniform_hypers(2, 2, m=0.3, V=1.5, a=2.0, b=1.2)
    for z in ((1, 1, 2, 1, 2), (1, 2, 3, 1, 2), (1, 1, 1, 1, 1)):
        got = sequence_loglik(
            z, [0, 1], 0.8, {n: hypers[n] for n in (0, 1)},
            panel.values, panel.observed, panel.num_steps, panel.window,
        )
        want = naive_group_loglik(z, [0, 1], 0.8, hyper_tuples(hypers), panel)
        assert got == pytest.approx(want, abs=1e-9)


def test_log_joint_smallest_instance():
    panel = make_panel([[2.5]], window=0)
    hypers = uniform_hypers(1, 0, m=0.0, V=1.0, a=1.0, b=1.0)
    state = build_state(panel, hypers, [[1]], [1], alpha0=1.0, alphas=[1.0])
    got = log_joint(state)
    # Gamma(1,1) priors on both concentrations, trivial partition mass (0),
    # trivial assignment mass (0), prior emission predictive at x_1.
    want = -1.0 - 1.0 + predictive_logpdf(hypers[0].emission, NigStats(), 2.5)
    assert got == pytest.approx(want, abs=1e-12)


def test_log_joint_invariant_under_regime_relabeling(rng):
    panel = make_panel([list(rng.normal(size=9))], window=1)
    hypers = uniform_hypers(1, 1)
    z_a = [1, 2, 1, 2, 1, 1, 2, 2]
    z_b = [2, 1, 2, 1, 2, 2, 1, 1]
    state_a = build_state(panel, hypers, [z_a], [1])
    state_b = build_state(panel, hypers, [z_b], [1])
    assert log_joint(state_a) == pytest.approx(log_joint(state_b), abs=1e-12)


def test_log_joint_matches_naive(rng):
    values = [list(rng.normal(size=8)) for _ in range(3)]
    values[1][4] = None
    panel = make_panel(values, window=1)
    hypers = uniform_hypers(3, 1, m=0.2, V=2.0, a=1.5, b=0.7)
    z1, z2 = [1, 1, 2, 1, 2, 1, 1], [1, 2, 2, 1, 1, 2, 3]
    state = build_state(
        panel, hypers, [z1, z2], [1, 2, 1], alpha0=0.8, alphas=[1.1, 0.6]
    )
    got = log_joint(state)
    want = naive_log_joint(
        (0.8, [1, 2, 1], [(1.1, z1), (0.6, z2)]), panel, hyper_tuples(hypers)
    )
    assert got == pytest.approx(want, abs=1e-8)


def test_log_joint_sequential_decomposition(rng):
    """log_joint = priors + sum_t [log q_t + log posterior-weight of z_t].

    The one-step predictive marginalizes the step's regime; adding back the
    normalized weight of the regime the state actually holds recovers the
    joint exactly.
    """
    values = [list(rng.normal(size=7)), list(rng.normal(size=7))]
    values[0][4] = None
    panel = make_panel(values, window=1)
    hypers = uniform_hypers(2, 1)
    z = [1, 1, 2, 1, 2, 2]
    state = build_state(panel, hypers, [z], [1, 1], alpha0=1.0, alphas=[0.9])
    group = state.groups[0]

    scratch = group.empty_clone()
    label_map = {}
    total = -state.alpha0 - group.alpha  # Gamma(1,1) priors
    total += math.log(state.alpha0) + math.lgamma(2) - (
        math.lgamma(state.alpha0 + 2) - math.lgamma(state.alpha0)
    )
    for t, zt in enumerate(z, start=1):
        base, emis = scratch.regime_log_weights_split(t, panel.values, panel.observed)
        full = [b + e for b, e in zip(base, emis)]
        q_t = logsumexp(full) - logsumexp(base)
        k = label_map.get(zt)
        idx = (k - 1) if k is not None else len(base) - 1
        r_t = full[idx] - logsumexp(full)
        total += q_t + r_t
        if k is None:
            k = scratch.add_regime()
            label_map[zt] = k
        scratch.assign(t, k, panel.values, panel.observed)
    assert log_joint(state) == pytest.approx(total, abs=1e-8)


def test_log_joint_finite_on_random_states(rng):
    for _ in range(10):
        values = [list(rng.normal(size=9)) for _ in range(2)]
        panel = make_panel(values, window=1)
        hypers = uniform_hypers(2, 1)
        z = [int(k) for k in rng.integers(1, 3, size=8)]
        z = list(canonical_partition(z))
        state = build_state(panel, hypers, [z], [1, 1])
        assert math.isfinite(log_joint(state))


# -- forward sampling --------------------------------------------------------------


def test_forward_sample_density_matches_sequence_loglik(rng):
    panel = make_panel([list(rng.normal(size=8))], window=1)
    hypers = {0: uniform_hypers(1, 1)[0]}
    z, logq = forward_sample_sequence(
        [0], 1.0, hypers, panel.values, panel.observed, panel.num_steps, panel.window, rng
    )
    want = sequence_loglik(
        z, [0], 1.0, hypers, panel.values, panel.observed,
        panel.num_steps, panel.window, include_emission=False,
    )
    assert logq == pytest.approx(want, abs=1e-10)


# -- simulate -------------------------------------------------------------------


def test_simulate_degenerate_alpha_single_regime(rng):
    hypers = uniform_hypers(1, 0)
    res = simulate(12, 0, np.zeros((1, 0)), hypers, rng, alpha=1e-300, assignments=[1])
    assert res.group_z[0] == [1] * 12


def test_simulate_deterministic_given_seed():
    hypers = uniform_hypers(2, 1)
    a = simulate(10, 1, np.zeros((2, 1)), hypers, np.random.default_rng(42), alpha=1.0,
                 assignments=[1, 1])
    b = simulate(10, 1, np.zeros((2, 1)), hypers, np.random.default_rng(42), alpha=1.0,
                 assignments=[1, 1])
    assert np.array_equal(a.panel.values, b.panel.values)
    assert a.group_z == b.group_z


def test_simulate_matches_crp_partition_size_law_at_p0():
    hypers = uniform_hypers(1, 0)
    alpha = 1.0
    exact = {}
    for z in canonical_sequences(4):
        exact[max(z)] = exact.get(max(z), 0.0) + math.exp(exact_crp_log_mass(z, alpha))
    rng = np.random.default_rng(7)
    counts = {k: 0 for k in exact}
    reps = 10_000
    for _ in range(reps):
        res = simulate(4, 0, np.zeros((1, 0)), hypers, rng, alpha=alpha, assignments=[1])
        counts[max(res.group_z[0])] += 1
    empirical = {k: c / reps for k, c in counts.items()}
    assert total_variation(exact, empirical) < 0.02


# -- bookkeeping ------------------------------------------------------------------


def test_stats_deviation_after_manual_churn(rng):
    values = [list(rng.normal(size=10))]
    values[0][6] = None
    panel = make_panel(values, window=2)
    group = build_group(panel, uniform_hypers(1, 2), [1, 1, 2, 1, 2, 1, 2, 2])
    for t in (3, 5, 2, 8):
        k, removed = group.unassign(t, panel.values, panel.observed)
        if removed:
            group.add_regime()
            group.assign(t, group.regimes.num_regimes, panel.values, panel.observed)
        else:
            group.assign(t, k, panel.values, panel.observed)
    assert group.stats_deviation(panel.values, panel.observed) < 1e-10
    group.regimes.check()
