import math

import numpy as np
import pytest

from adaptgauge.features import (build_feature_sequence, feature_names,
                                 global_diversity, individual_uncertainty,
                                 mutual_info_estimate, prediction_distribution)

FLOOR = 1e-12


def loop_gd(p):
    n, k = p.shape
    mean = [sum(p[i][y] for i in range(n)) / n for y in range(k)]
    return -sum(mean[y] * math.log(max(mean[y], FLOOR)) for y in range(k))


def loop_iu(p):
    n, k = p.shape
    total = 0.0
    for i in range(n):
        total += -sum(p[i][y] * math.log(max(p[i][y], FLOOR)) for y in range(k))
    return total / n


def loop_pd(p):
    n, k = p.shape
    return np.array([sum(p[i][y] for i in range(n)) / n for y in range(k)])


def random_matrix(rng, n, k):
    raw = rng.gamma(0.6, size=(n, k))
    return raw / raw.sum(axis=1, keepdims=True)


def test_gd_degenerate_one_hot():
    p = np.zeros((8, 4))
    p[:, 0] = 1.0
    assert global_diversity(p) == 0.0


def test_gd_uniform_coverage():
    k = 5
    p = np.eye(k)
    assert abs(global_diversity(p) - math.log(k)) < 1e-12


def test_gd_two_row_example():
    p = np.array([[0.8, 0.2], [0.2, 0.8]])
    assert abs(global_diversity(p) - math.log(2)) < 1e-12
    assert abs(global_diversity(p) - 0.693147) < 1e-6


def test_iu_one_hot_zero():
    p = np.eye(6)
    assert individual_uncertainty(p) == 0.0


def test_iu_uniform_maximal():
    p = np.full((7, 4), 0.25)
    assert abs(individual_uncertainty(p) - math.log(4)) < 1e-12


def test_iu_two_row_example():
    p = np.array([[0.8, 0.2], [0.2, 0.8]])
    expected = -(0.8 * math.log(0.8) + 0.2 * math.log(0.2))
    assert abs(individual_uncertainty(p) - expected) < 1e-15
    assert abs(individual_uncertainty(p) - 0.500402) < 1e-6


def test_pd_single_row_and_pair():
    row = np.array([[0.1, 0.3, 0.6]])
    assert np.allclose(prediction_distribution(row), row[0], atol=1e-15)
    pair = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(prediction_distribution(pair), [0.5, 0.5], atol=1e-15)


def test_mi_independence_zero():
    p = np.full((9, 3), 1.0 / 3)
    assert abs(mutual_info_estimate(p)) < 1e-12


def test_mi_one_hot_maximal():
    k = 4
    p = np.tile(np.eye(k), (3, 1))
    assert abs(mutual_info_estimate(p) - math.log(k)) < 1e-12


def test_mi_two_row_example():
    p = np.array([[0.8, 0.2], [0.2, 0.8]])
    assert abs(mutual_info_estimate(p) - 0.192745) < 1e-6


def test_brute_force_agreement():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = random_matrix(rng, int(rng.integers(1, 40)), int(rng.integers(2, 8)))
        assert abs(global_diversity(p) - loop_gd(p)) < 1e-12
        assert abs(individual_uncertainty(p) - loop_iu(p)) < 1e-12
        assert np.abs(prediction_distribution(p) - loop_pd(p)).max() < 1e-12


def test_bounds_and_jensen_property():
    rng = np.random.default_rng(1)
    for _ in range(500):
        k = int(rng.integers(2, 9))
        p = random_matrix(rng, int(rng.integers(1, 30)), k)
        gd = global_diversity(p)
        iu = individual_uncertainty(p)
        assert -1e-12 <= gd <= math.log(k) + 1e-12
        assert -1e-12 <= iu <= math.log(k) + 1e-12
        assert gd - iu >= -1e-9


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    p = random_matrix(rng, 25, 5)
    shuffled = p[rng.permutation(25)]
    assert abs(global_diversity(p) - global_diversity(shuffled)) < 1e-12
    assert abs(individual_uncertainty(p) - individual_uncertainty(shuffled)) < 1e-12
    assert np.abs(prediction_distribution(p)
                  - prediction_distribution(shuffled)).max() < 1e-12


def test_invalid_matrices_rejected():
    with pytest.raises(ValueError):
        global_diversity(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        individual_uncertainty(np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        prediction_distribution(np.array([[-0.2, 1.2]]))


# ---------------------------------------------------------------------------
# feature sequences


def test_identical_matrices_zero_deltas():
    p = random_matrix(np.random.default_rng(3), 10, 4)
    records = build_feature_sequence([p, p.copy()])
    r1 = records[1]
    assert r1.dgd == 0.0 and r1.diu == 0.0
    assert np.array_equal(r1.dpd, np.zeros(4))


def test_truth_delta_arithmetic():
    p = random_matrix(np.random.default_rng(4), 6, 3)
    records = build_feature_sequence([p] * 3, accuracies=[0.6, 0.7, 0.5])
    deltas = [r.truth_delta_acc for r in records]
    assert np.allclose(deltas, [0.0, 0.1, -0.1], atol=1e-15)


def test_epoch_zero_deltas_are_zero():
    p = random_matrix(np.random.default_rng(5), 6, 3)
    rec0 = build_feature_sequence([p])[0]
    assert rec0.dgd == 0.0 and rec0.diu == 0.0
    assert np.array_equal(rec0.dpd, np.zeros(3))


def test_delta_telescoping_reconstruction():
    rng = np.random.default_rng(6)
    mats = [random_matrix(rng, 12, 5) for _ in range(9)]
    records = build_feature_sequence(mats)
    gd = records[0].gd
    iu = records[0].iu
    pd = records[0].pd.copy()
    for r in records[1:]:
        gd += r.dgd
        iu += r.diu
        pd = pd + r.dpd
        assert abs(gd - r.gd) < 1e-12
        assert abs(iu - r.iu) < 1e-12
        assert np.abs(pd - r.pd).max() < 1e-12


def test_length_mismatch_rejected():
    p = random_matrix(np.random.default_rng(7), 4, 3)
    with pytest.raises(ValueError):
        build_feature_sequence([p, p], accuracies=[0.5])
    with pytest.raises(ValueError):
        build_feature_sequence([])


def test_vector_layout():
    names = feature_names(3)
    assert names == ["gd", "iu", "pd_0", "pd_1", "pd_2",
                     "dgd", "diu", "dpd_0", "dpd_1", "dpd_2"]
    p = random_matrix(np.random.default_rng(8), 5, 3)
    rec = build_feature_sequence([p])[0]
    vec = rec.vector()
    assert len(vec) == 2 * (3 + 2)
    assert vec[0] == rec.gd and vec[1] == rec.iu
    assert np.array_equal(vec[2:5], rec.pd)
