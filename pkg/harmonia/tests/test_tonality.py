"""Stationary root distributions and learned tonics."""

import csv

import numpy as np
import pytest

from harmonia.distributions import init_parameters
from harmonia.exceptions import ContractError, ConvergenceError, ReducibleChainError
from harmonia.model import HarmonicModel
from harmonia.store import ParameterStore, checkpoint_from_store
from harmonia.tonality import (
    analyze_mode,
    average_duration,
    build_markov_matrix,
    pitch_class_profile,
    report_tonality,
    stationary_distribution,
    tonic_table,
    write_tonality_csv,
)


def random_chain(rng, n=13):
    trans = rng.random((n, n))
    np.fill_diagonal(trans, 0.0)
    return trans / trans.sum(axis=1, keepdims=True)


def test_average_duration():
    duration = np.zeros(16)
    duration[[0, 3]] = 0.5
    assert average_duration(duration) == pytest.approx(2.5)
    assert average_duration(np.full(16, 1 / 16)) == pytest.approx(8.5)


def test_markov_matrix_slows_the_chain_down():
    duration = np.zeros(16)
    duration[3] = 1.0
    trans = random_chain(np.random.default_rng(0))
    matrix = build_markov_matrix(duration, trans)
    np.testing.assert_allclose(np.diagonal(matrix), 0.75)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    np.testing.assert_allclose(matrix[0, 1:], trans[0, 1:] / 4)


@pytest.mark.parametrize(
    "matrix, expected",
    [
        ([[0.9, 0.1], [0.2, 0.8]], [2 / 3, 1 / 3]),
        ([[0.5, 0.5], [1.0, 0.0]], [2 / 3, 1 / 3]),
    ],
)
def test_two_state_chain(matrix, expected):
    pi, residual, _ = stationary_distribution(np.array(matrix))
    np.testing.assert_allclose(pi, expected, atol=1e-12)
    assert residual <= 1e-12


def test_doubly_stochastic_chain_is_uniform():
    matrix = np.full((5, 5), 0.25)
    np.fill_diagonal(matrix, 0.0)
    pi, _, _ = stationary_distribution(matrix)
    np.testing.assert_allclose(pi, 0.2, atol=1e-12)


def linear_solve(matrix):
    n = matrix.shape[0]
    system = np.vstack([matrix.T - np.eye(n), np.ones(n)])
    target = np.append(np.zeros(n), 1.0)
    expected, *_ = np.linalg.lstsq(system, target, rcond=None)
    return expected


@pytest.mark.parametrize("seed", range(8))
def test_matches_the_linear_solve(seed):
    rng = np.random.default_rng(seed)
    matrix = rng.random((13, 13))
    matrix /= matrix.sum(axis=1, keepdims=True)
    pi, _, _ = stationary_distribution(matrix)
    np.testing.assert_allclose(pi, linear_solve(matrix), atol=1e-9)

    duration = rng.random(16)
    markov = build_markov_matrix(duration / duration.sum(), random_chain(rng))
    pi, _, _ = stationary_distribution(markov)
    np.testing.assert_allclose(pi, linear_solve(markov), atol=1e-9)


def test_rejected_matrices():
    with pytest.raises(ReducibleChainError):
        stationary_distribution(np.eye(3))
    with pytest.raises(ReducibleChainError):
        stationary_distribution(np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float))
    with pytest.raises(ContractError):
        stationary_distribution(np.array([[0.5, 0.6], [1.0, 0.0]]))
    with pytest.raises(ContractError):
        stationary_distribution(np.ones((2, 3)) / 3)


def test_iteration_budget():
    matrix = build_markov_matrix(np.full(16, 1 / 16), random_chain(np.random.default_rng(2)))
    with pytest.raises(ConvergenceError) as info:
        stationary_distribution(matrix, max_iterations=3)
    assert info.value.residual > 1e-12


def test_pitch_class_profile_weights_rows():
    logits = np.full((13, 12), -50.0)
    logits[0, [0, 4, 7]] = 50.0
    logits[7, [7, 11, 2]] = 50.0
    pi = np.zeros(13)
    pi[[0, 7]] = [0.75, 0.25]
    profile = pitch_class_profile(0, logits, pi)
    assert profile.p_pc[0] == pytest.approx(0.75)
    assert profile.p_pc[7] == pytest.approx(1.0)
    assert profile.p_pc[11] == pytest.approx(0.25)
    assert profile.p_pc[1] == pytest.approx(0.0)


def test_planted_tonic_is_found():
    # every root returns to G half of the time
    rng = np.random.default_rng(4)
    trans = random_chain(rng) * 0.5
    trans[:, 7] += 0.5
    trans[7] = random_chain(rng)[7]
    duration = np.zeros(16)
    duration[1] = 1.0
    logits = np.full((13, 12), -5.0)
    for root in range(12):
        logits[root, [root, (root + 4) % 12, (root + 7) % 12]] = 5.0
    report = analyze_mode(1, duration, trans, logits)
    assert report.tonic_pc == 7
    assert not report.low_confidence
    assert report.mode_class == "major"
    assert report.stationary.pi.sum() == pytest.approx(1.0)
    assert report.to_dict()["tonic_name"] == "G"


def zero_model():
    store = init_parameters(0)
    flat = ParameterStore()
    for name, value in store.items():
        flat.add(name, np.zeros_like(value.data))
    return HarmonicModel(flat, phase=1)


def test_featureless_model_is_low_confidence():
    reports = report_tonality(zero_model())
    assert [r.mode for r in reports] == [0, 1]
    for report in reports:
        np.testing.assert_allclose(report.stationary.pi, 1 / 13, atol=1e-10)
        assert report.low_confidence
        np.testing.assert_allclose(report.stationary.pi_no_rest.sum(), 1.0)


def test_tonic_table_from_a_checkpoint():
    model = HarmonicModel.initialize(3)
    checkpoint = checkpoint_from_store(model.store, 3, 1, {"template_weight": 5.0, "beta_cap": 0.0})
    table = tonic_table(checkpoint)
    assert set(table) == {0, 1}
    assert table == tonic_table(report_tonality(model))
    for tonic, mode_class in table.values():
        assert 0 <= tonic < 12
        assert mode_class in ("major", "minor")


def test_csv_rows(tmp_path):
    reports = report_tonality(HarmonicModel.initialize(3))
    with open(write_tonality_csv(reports, tmp_path / "tonality.csv")) as infile:
        rows = list(csv.reader(infile))
    assert rows[0] == ["mode", "index", "label", "stationary", "stationary_no_rest", "pitch_class_profile"]
    assert len(rows) == 1 + 2 * 13
    assert rows[13][2] == "Rest" and rows[13][4] == ""
    assert sum(float(r[3]) for r in rows[1:14]) == pytest.approx(1.0)
