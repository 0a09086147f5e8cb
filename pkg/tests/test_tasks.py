"""Episode-generation tests: ranges, formulas, noise behaviour, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metakg import tasks
from metakg.errors import ContractError, DomainError


def test_line_coefficient_ranges():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = tasks.sample_family_params(rng, "Line")
        assert -3.0 <= p.coeffs["a_l"] <= 3.0
        assert -3.0 <= p.coeffs["b_l"] <= 3.0


def test_sinusoid_frequency_range():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = tasks.sample_family_params(rng, "Sinusoid")
        assert 0.8 <= p.coeffs["w_s"] <= 1.2


def test_all_coefficients_inside_ranges_bulk():
    # statistical check over 10^4 draws: empirical min/max inside the ranges
    rng = np.random.default_rng(2)
    seen = {fam: {name: [] for name, _, _ in spec} for fam, spec in tasks.COEFF_RANGES.items()}
    for _ in range(10_000):
        p = tasks.sample_family_params(rng)
        for name, value in p.coeffs.items():
            seen[p.family][name].append(value)
    for fam, spec in tasks.COEFF_RANGES.items():
        for name, lo, hi in spec:
            values = np.asarray(seen[fam][name])
            assert values.min() >= lo and values.max() <= hi
            # with ~1500 draws/family the empirical range should nearly fill
            assert values.max() - values.min() >= 0.8 * (hi - lo)


def test_unknown_family_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(DomainError):
        tasks.sample_family_params(rng, "Spiral")


def test_truth_line():
    p = tasks.FamilyParams("Line", {"a_l": 1.0, "b_l": 0.0})
    assert tasks.evaluate_truth(p, 2.0, 1.0) == 2.0


def test_truth_quad_surface():
    p = tasks.FamilyParams("QuadSurface", {"a_qs": 1.0, "b_qs": 1.0})
    assert tasks.evaluate_truth(p, 1.0, 2.0) == 5.0


def test_truth_ripple_constant_when_flat():
    p = tasks.FamilyParams("Ripple", {"a_r": 0.0, "b_r": 1.0})
    for x, y in [(0.0, 0.0), (3.0, 4.0), (5.0, 5.0)]:
        assert tasks.evaluate_truth(p, x, y) == 1.0


def test_noiseless_targets_equal_truth():
    rng = np.random.default_rng(3)
    p = tasks.sample_family_params(rng, "Cubic")
    ep = tasks.make_episode(rng, p, 10, 20, noise_std=0.0)
    truth = tasks.evaluate_truth(p, ep.train_inputs[:, 0], ep.train_inputs[:, 1])
    assert np.array_equal(ep.train_targets[:, 0], truth)


def test_ten_shot_shapes():
    rng = np.random.default_rng(4)
    ep = tasks.sample_episode(rng, 10, 100, 0.3)
    assert ep.train_inputs.shape == (10, 2)
    assert ep.train_targets.shape == (10, 1)
    assert ep.test_inputs.shape == (100, 2)
    assert ep.test_targets.shape == (100, 1)


def test_noise_std_statistics():
    # residual std over 10^5 samples should sit in [0.29, 0.31]
    rng = np.random.default_rng(5)
    residuals = []
    for _ in range(1000):
        p = tasks.sample_family_params(rng)
        ep = tasks.make_episode(rng, p, 100, 1, noise_std=0.3)
        truth = tasks.evaluate_truth(p, ep.train_inputs[:, 0], ep.train_inputs[:, 1])
        residuals.append(ep.train_targets[:, 0] - truth)
    std = np.concatenate(residuals).std()
    assert 0.29 <= std <= 0.31


def test_determinism_same_seed_same_episode():
    def build():
        rng = np.random.default_rng(123)
        return tasks.sample_episode(rng, 10, 50, 0.3)

    a, b = build(), build()
    assert a.params == b.params
    assert np.array_equal(a.train_inputs, b.train_inputs)
    assert np.array_equal(a.train_targets, b.train_targets)
    assert np.array_equal(a.test_inputs, b.test_inputs)
    assert np.array_equal(a.test_targets, b.test_targets)


@given(st.sampled_from(["Sinusoid", "Line", "Quadratic", "Cubic"]), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_subspace_families_ignore_second_coordinate(fam, seed):
    rng = np.random.default_rng(seed)
    p = tasks.sample_family_params(rng, fam)
    x = rng.uniform(0, 5, 8)
    za = tasks.evaluate_truth(p, x, np.full(8, 1.0))
    zb = tasks.evaluate_truth(p, x, rng.uniform(0, 5, 8))
    assert np.array_equal(za, zb)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_inputs_inside_unit_box(seed):
    rng = np.random.default_rng(seed)
    ep = tasks.sample_episode(rng, 10, 30, 0.3)
    for arr in (ep.train_inputs, ep.test_inputs):
        assert arr.min() >= 0.0 and arr.max() <= 5.0
    if ep.params.family not in tasks.PLANAR_FAMILIES:
        assert np.array_equal(ep.train_inputs[:, 1], np.ones(10))


def test_episode_preconditions():
    rng = np.random.default_rng(0)
    p = tasks.sample_family_params(rng, "Line")
    with pytest.raises(ContractError):
        tasks.make_episode(rng, p, 0, 10, 0.3)
    with pytest.raises(ContractError):
        tasks.make_episode(rng, p, 10, 10, -0.1)


def test_episode_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    ep = tasks.sample_episode(rng, 10, 20, 0.3)
    path = tmp_path / "episode.json"
    tasks.dump_episode(ep, path)
    back = tasks.load_episode(path)
    assert back.params == ep.params
    assert np.array_equal(back.train_inputs, ep.train_inputs)
    assert np.array_equal(back.train_targets, ep.train_targets)
    assert np.array_equal(back.test_inputs, ep.test_inputs)
    assert np.array_equal(back.test_targets, ep.test_targets)

    raw = (tmp_path / "episode.json").read_text()
    assert '"family"' in raw and '"params"' in raw and '"train"' in raw and '"test"' in raw
