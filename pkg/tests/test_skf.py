import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchskf.lds import (
    GaussianBelief,
    LinearEvolution,
    MeasurementModel,
    kf_step,
    measurement_update,
    time_update,
)
from patchskf.skf import (
    ModeDegeneracyError,
    ModeLibrary,
    ModeTransition,
    SwitchingBelief,
    collapse,
    mode_posterior,
    skf_step,
)

from .helpers import random_lds, random_spd


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_mode_posterior_uniform_stays_uniform():
    w = mode_posterior([0.5, 0.5], ModeTransition.sticky(2, 0.9), [-1.3, -1.3])
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-15)


def test_mode_posterior_transition_only():
    T = ModeTransition([[0.9, 0.1], [0.1, 0.9]])
    np.testing.assert_allclose(mode_posterior([1.0, 0.0], T, [0.0, 0.0]), [0.9, 0.1], atol=1e-15)


def test_mode_posterior_log_domain_tail():
    w = mode_posterior([0.5, 0.5], ModeTransition.uniform(2), [0.0, -50.0])
    expected_tail = np.exp(-50.0) / (1.0 + np.exp(-50.0))
    assert w[1] == pytest.approx(expected_tail, rel=1e-12)
    assert w[1] > 0.0
    assert w.sum() == pytest.approx(1.0, abs=1e-15)


def test_mode_posterior_all_impossible_names_step():
    with pytest.raises(ModeDegeneracyError, match="frame 4"):
        mode_posterior([0.5, 0.5], ModeTransition.uniform(2), [-np.inf, -np.inf], step=4)


def test_mode_posterior_checks_lengths():
    with pytest.raises(ValueError):
        mode_posterior([1.0], ModeTransition.uniform(2), [0.0, 0.0])


def test_collapse_by_hand():
    out = collapse([0.5, 0.5], [GaussianBelief(0.0, 1.0), GaussianBelief(2.0, 1.0)])
    assert out.mean[0] == pytest.approx(1.0)
    assert out.cov[0, 0] == pytest.approx(2.0)


def test_transition_validation():
    with pytest.raises(ValueError):
        ModeTransition([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        ModeTransition([[1.2, -0.2], [0.5, 0.5]])
    T = ModeTransition.sticky(3, 0.8)
    np.testing.assert_allclose(T.matrix.sum(axis=1), 1.0)
    assert T.matrix[0, 0] == 0.8 and T.matrix[0, 1] == pytest.approx(0.1)


def test_library_requires_shared_dimension():
    with pytest.raises(ValueError):
        ModeLibrary((LinearEvolution(np.eye(2), np.eye(2)), LinearEvolution(1.0, 1.0)))
    with pytest.raises(ValueError):
        ModeLibrary(())


def test_single_mode_equals_kf():
    rng = np.random.default_rng(0)
    x0, ev, meas, ys = random_lds(rng, d=5, m=4, T=8)
    state = SwitchingBelief.initial(x0, 1)
    belief = x0
    lib, T = ModeLibrary((ev,)), ModeTransition.sticky(1)
    for y in ys:
        state = skf_step(state, lib, T, meas, y)
        belief, ll = kf_step(belief, ev, meas, y)
        assert state.weights.tolist() == [1.0]
        assert rel(state.belief.mean, belief.mean) <= 1e-12
        assert rel(state.belief.cov, belief.cov) <= 1e-12
        assert state.log_likelihood == pytest.approx(ll, rel=1e-12)


def test_identical_modes_keep_equal_weights():
    rng = np.random.default_rng(1)
    x0, ev, meas, ys = random_lds(rng, d=3, m=3, T=20)
    state = SwitchingBelief.initial(x0, 2)
    lib = ModeLibrary((ev, ev))
    for y in ys:
        state = skf_step(state, lib, ModeTransition.uniform(2), meas, y)
        np.testing.assert_allclose(state.weights, [0.5, 0.5], atol=1e-10)


def test_shared_and_per_mode_inputs():
    rng = np.random.default_rng(2)
    x0, ev, meas, ys = random_lds(rng, d=3, m=2, T=1)
    u = rng.normal(size=3)
    pred = time_update(x0, ev)
    manual, _ = measurement_update(GaussianBelief(pred.mean + u, pred.cov), meas, ys[0])
    lib = ModeLibrary((ev,))
    out = skf_step(SwitchingBelief.initial(x0, 1), lib, ModeTransition.sticky(1), meas, ys[0], u)
    np.testing.assert_allclose(out.belief.mean, manual.mean, rtol=1e-13)

    lib2 = ModeLibrary((ev, ev))
    shared = skf_step(SwitchingBelief.initial(x0, 2), lib2, ModeTransition.uniform(2), meas, ys[0], u)
    stacked = skf_step(
        SwitchingBelief.initial(x0, 2), lib2, ModeTransition.uniform(2), meas, ys[0], np.stack([u, u])
    )
    np.testing.assert_allclose(shared.belief.mean, stacked.belief.mean, rtol=1e-14)
    with pytest.raises(ValueError):
        skf_step(SwitchingBelief.initial(x0, 2), lib2, ModeTransition.uniform(2), meas, ys[0], np.ones(4))


def _two_mode_setup(rng, d=3):
    x0, ev, meas, ys = random_lds(rng, d=d, m=d, T=15)
    ev2 = LinearEvolution(0.5 * ev.A, 4.0 * ev.Q)
    return x0, ModeLibrary((ev, ev2)), meas, ys


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_permuting_modes_permutes_weights_only(seed):
    rng = np.random.default_rng(seed)
    x0, lib, meas, ys = _two_mode_setup(rng)
    T = ModeTransition([[0.8, 0.2], [0.3, 0.7]])
    order = [1, 0]
    a = SwitchingBelief.initial(x0, 2, [0.6, 0.4])
    b = SwitchingBelief.initial(x0, 2, [0.4, 0.6])
    for y in ys:
        a = skf_step(a, lib, T, meas, y)
        b = skf_step(b, lib.permuted(order), T.permuted(order), meas, y)
        np.testing.assert_allclose(b.weights, a.weights[order], rtol=1e-12, atol=1e-300)
        assert rel(b.belief.mean, a.belief.mean) <= 1e-12
        assert rel(b.belief.cov, a.belief.cov) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6), l=st.integers(2, 4))
def test_collapse_spread_is_psd(seed, d, l):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(l))
    beliefs = [GaussianBelief(rng.normal(size=d) * 3, random_spd(rng, d)) for _ in range(l)]
    out = collapse(w, beliefs)
    avg = sum(wj * b.cov for wj, b in zip(w, beliefs))
    assert np.linalg.eigvalsh(out.cov - avg)[0] >= -1e-10
    out.check()


def test_weight_simplex_over_many_steps():
    rng = np.random.default_rng(3)
    d = 2
    lib = ModeLibrary((LinearEvolution(np.eye(d), 0.01 * np.eye(d)), LinearEvolution(np.eye(d), 5.0 * np.eye(d))))
    meas = MeasurementModel(np.eye(d), 0.1 * np.eye(d))
    state = SwitchingBelief.initial(GaussianBelief(np.zeros(d), 10 * np.eye(d)), 2)
    T = ModeTransition.sticky(2, 0.95)
    x = np.zeros(d)
    for n in range(1000):
        x = x + rng.normal(size=d) * (0.1 if (n // 50) % 2 else 2.0)
        state = skf_step(state, lib, T, meas, x + rng.normal(size=d) * 0.3)
        assert (state.weights >= 0).all()
        assert abs(state.weights.sum() - 1.0) <= 1e-10
    state.belief.check()


def test_argmax_mode_tracks_true_mode():
    d, q = 4, (0.01, 1.0)  # variance ratio 100
    lib = ModeLibrary.random_walks(d, q)
    meas = MeasurementModel(np.eye(d), 0.05 * np.eye(d))
    T = ModeTransition.sticky(2, 0.95)
    for j in (0, 1):
        rng = np.random.default_rng(10 + j)
        state = SwitchingBelief.initial(GaussianBelief(np.zeros(d), 10 * np.eye(d)), 2)
        x = np.zeros(d)
        hits = []
        for n in range(100):
            x = x + rng.normal(size=d) * np.sqrt(q[j])
            state = skf_step(state, lib, T, meas, x + rng.normal(size=d) * np.sqrt(0.05))
            if n >= 5:
                hits.append(state.last_mode_map == j)
        assert np.mean(hits) >= 0.8
