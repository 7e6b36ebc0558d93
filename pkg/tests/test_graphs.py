import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1iot.gaussian import GaussianModel
from l1iot.graphs import (
    Graph,
    certificate_profile,
    directed_lower,
    gen_circular,
    gen_erdos_renyi,
    gen_grid_planar,
    geodesic_distances,
    log_grid,
    population_trial,
    run_sparsistency_trial,
    sample_complexity_sweep,
    sample_coupling,
    shifted_laplacian_cost,
    support_errors,
)


def test_cycle_degrees():
    g = gen_circular(5)
    np.testing.assert_array_equal(g.adjacency.sum(1), 2)
    assert g.n_edges == 5


def test_empty_erdos_renyi():
    g = gen_erdos_renyi(6, 0.0, seed=1)
    assert g.n_edges == 0


def test_erdos_renyi_is_seeded():
    a = gen_erdos_renyi(15, 0.3, seed=4).adjacency
    b = gen_erdos_renyi(15, 0.3, seed=4).adjacency
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, a.T)


def test_grid_edge_count():
    assert gen_grid_planar(3, 3).n_edges == 12
    assert gen_grid_planar(4, 5).n_edges == 4 * 4 + 3 * 5


def test_degenerate_sizes_rejected():
    with pytest.raises(ValueError):
        gen_circular(2)
    with pytest.raises(ValueError):
        gen_erdos_renyi(2, 0.5, 0)
    with pytest.raises(ValueError):
        gen_erdos_renyi(5, 1.5, 0)
    with pytest.raises(ValueError):
        gen_grid_planar(1, 2)


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        Graph(np.eye(3))
    Graph(np.array([[0, 1], [0, 0]]), directed=True)


def test_five_cycle_cost():
    A = shifted_laplacian_cost(gen_circular(5))
    lam_max = 2 - 2 * np.cos(4 * np.pi / 5)
    delta = 0.1 * lam_max
    assert abs(delta - 0.36180) < 1e-5
    np.testing.assert_allclose(np.diag(A), 2 + delta, atol=1e-12)
    assert A[0, 1] == -1 and A[0, 4] == -1 and A[0, 2] == 0


def test_two_vertex_path_cost():
    g = Graph(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(shifted_laplacian_cost(g), [[1.2, -1.0], [-1.0, 1.2]], atol=1e-12)


def test_empty_graph_needs_delta():
    g = gen_erdos_renyi(4, 0.0, 0)
    with pytest.raises(ValueError):
        shifted_laplacian_cost(g)
    np.testing.assert_allclose(shifted_laplacian_cost(g, delta=0.5), 0.5 * np.eye(4))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 12), st.floats(0.05, 0.9), st.integers(0, 10_000))
def test_cost_is_spd_with_floor(n, p, seed):
    g = gen_erdos_renyi(n, p, seed)
    if g.n_edges == 0:
        return
    A = shifted_laplacian_cost(g)
    lap = np.diag(g.adjacency.sum(1)) - g.adjacency
    delta = 0.1 * np.linalg.eigvalsh(lap).max()
    assert np.linalg.eigvalsh(A).min() >= delta - 1e-10


def test_geodesics():
    d = geodesic_distances(gen_circular(6))
    assert d[0, 3] == 3
    np.testing.assert_array_equal(np.diag(d), 0)
    assert geodesic_distances(gen_grid_planar(3, 3))[0, 8] == 4


def test_geodesics_unreachable_and_directed():
    d = geodesic_distances(gen_erdos_renyi(4, 0.0, 0))
    assert np.isinf(d[0, 1])
    directed = directed_lower(gen_grid_planar(3, 3))
    np.testing.assert_array_equal(geodesic_distances(directed),
                                  geodesic_distances(gen_grid_planar(3, 3)))


def test_geodesic_triangle_inequality():
    g = gen_erdos_renyi(30, 0.15, seed=3)
    d = geodesic_distances(g)
    np.testing.assert_array_equal(d, d.T)
    rng = np.random.default_rng(3)
    for i, j, k in rng.integers(0, 30, size=(50, 3)):
        assert d[i, k] <= d[i, j] + d[j, k]


def test_directed_variant():
    g = directed_lower(gen_grid_planar(2, 3))
    assert g.directed
    assert np.all(np.triu(g.adjacency) == 0)
    assert g.n_edges == gen_grid_planar(2, 3).n_edges


def test_sampling_independent_coupling():
    model = GaussianModel.identity(np.zeros((3, 3)), 1.0)
    n = 10_000
    for seed in range(3):
        x, y = sample_coupling(model, n, seed)
        assert np.linalg.norm(x.T @ y / n) <= 5 / np.sqrt(n)


def test_sampling_marginal_covariance():
    sa = np.array([[2.0, 0.3], [0.3, 1.0]])
    model = GaussianModel(sa, np.eye(2), np.array([[0.5, 0.0], [0.0, -0.2]]), 1.0)
    x, _ = sample_coupling(model, 10_000, 0)
    assert np.abs(np.cov(x.T) - sa).max() <= 0.1


def test_sampling_is_deterministic():
    model = GaussianModel.identity(shifted_laplacian_cost(gen_circular(4)), 1.0)
    a = sample_coupling(model, 50, 9)
    b = sample_coupling(model, 50, 9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_log_grid():
    grid = log_grid("1:0.01:5")
    np.testing.assert_allclose(grid, [1, 10**-0.5, 0.1, 10**-1.5, 0.01])
    with pytest.raises(ValueError):
        log_grid("1:0.1")
    with pytest.raises(ValueError):
        log_grid("0:1:3")


def test_support_errors_counts_mismatches():
    A_hat = np.array([[1.0, -1.0], [0.0, 2.0]])
    assert support_errors(A_hat, A_hat) == 0
    assert support_errors(np.zeros((2, 2)), A_hat) == 3
    assert support_errors(np.ones((2, 2)), A_hat) == 1


def test_certificate_profile_exact_support_values():
    g = gen_circular(8)
    rows, margins = certificate_profile(g, [0.5, 5.0])
    assert len(rows) == 8 * 8 * 2
    for i, j, dist, eps, z, on in rows:
        if i == j:
            assert abs(z - 1) <= 1e-8 and dist == 0 and on
        elif dist == 1:
            assert abs(z + 1) <= 1e-8 and on
        else:
            assert not on
    assert margins[5.0] > margins[0.5]


def test_certificate_profile_large_eps():
    rows, margins = certificate_profile(gen_circular(6), [1e3])
    assert max(abs(z) for *_, z, on in rows if not on) <= 0.05
    assert margins[1e3] >= 0.95


def test_undersampled_trial_fails():
    g = gen_circular(4)
    s = g.n**2
    results = run_sparsistency_trial(g, 1.0, log_grid("1:0.001:6"), s, seed=0)
    assert len(results) == 6
    assert all(r.support_errors > 0 for r in results)
    assert all(0 <= r.support_errors <= s for r in results)


def test_trial_large_lambda_end():
    g = gen_circular(4)
    A_hat = shifted_laplacian_cost(g)
    (res,) = run_sparsistency_trial(g, 1.0, [1e3], 200, seed=1)
    assert res.support_errors == int(np.sum(np.abs(A_hat) > 1e-8))
    assert abs(res.l2_error - np.linalg.norm(A_hat)) < 1e-8


def test_trial_is_deterministic():
    g = gen_circular(4)
    a = run_sparsistency_trial(g, 2.0, [0.05, 0.01], 300, seed=5)
    b = run_sparsistency_trial(g, 2.0, [0.05, 0.01], 300, seed=5)
    assert a == b


def test_exact_moments_recover_support():
    g = gen_circular(6)
    res = population_trial(shifted_laplacian_cost(g), 5.0, 0.01)
    assert res.margin > 0
    assert res.support_errors == 0


def test_complexity_sweep_error_shrinks():
    res = sample_complexity_sweep(gen_circular(4), 5.0, 0.05, [100, 1600], seeds=range(3),
                                  solver_kw={"grad_tol": 1e-7})
    assert len(res.trials) == 6
    assert res.mean_errors[1] < res.mean_errors[0]
    assert res.slope < 0
