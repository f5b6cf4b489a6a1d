import itertools
import math

import numpy as np
import pytest

from fusiontrack.association import (
    AssociationParams,
    Cluster,
    CostKind,
    CostMatrix,
    appearance_cost,
    associate_cluster,
    build_clusters,
    entropy_select,
    gate,
    gate_threshold,
    hungarian,
    iou_cost_2d,
    iou_cost_3d,
    jpda_exact,
    jpda_mbest,
    mahalanobis_matrix,
    merge_results,
    miss_augmented_costs,
    murty_kbest,
    row_entropies,
    ungated_detections,
)
from fusiontrack.errors import ClusterTooLarge, DimensionMismatch, FewerThanM
from fusiontrack.geometry import Box2D, Box3D
from oracles import all_assignments_sorted, brute_assignment, brute_jpda, chi2_ppf, count_events, truncated_jpda


def full_cluster(K, N):
    return Cluster(list(range(K)), list(range(N)))


def random_problem(rng, K, N, density=0.8):
    vals = rng.uniform(0.0, 2.0, (K, N))
    mask = rng.random((K, N)) < density
    return CostMatrix(vals, mask, CostKind.IOU3D)


# costs


def test_appearance_cost_examples():
    e = np.eye(3)
    c = appearance_cost([e[0], e[0], -e[0]], [e[0], e[1]]).values
    assert c[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert c[0, 1] == pytest.approx(math.sqrt(2))
    assert c[2, 0] == pytest.approx(2.0)


def test_appearance_cost_range_on_random_unit_vectors():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(20, 8))
    b = rng.normal(size=(30, 8))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    c = appearance_cost(a, b)
    assert c.kind is CostKind.APPEARANCE
    assert np.all(c.values >= 0) and np.all(c.values <= 2 + 1e-12)
    np.testing.assert_allclose(c.values, np.linalg.norm(a[:, None] - b[None], axis=2), atol=1e-7)


def test_appearance_cost_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        appearance_cost(np.ones((2, 3)), np.ones((2, 4)))


def test_appearance_cost_empty():
    assert appearance_cost(np.zeros((0, 4)), np.ones((3, 4))).shape == (0, 3)


def test_iou_cost_3d_examples(backend):
    cube = Box3D(0, 0, 0, 1, 1, 1, 0)
    far = Box3D(10, 0, 0, 1, 1, 1, 0)
    shifted = Box3D(0.5, 0, 0, 1, 1, 1, 0)
    c = iou_cost_3d([cube], [cube, far, shifted])
    assert c.kind is CostKind.IOU3D
    np.testing.assert_allclose(c.values[0], [0.0, 1.0, 2.0 / 3.0], atol=1e-12)


def test_iou_cost_2d_examples():
    a = Box2D(0, 0, 10, 10)
    c = iou_cost_2d([a], [a, Box2D(20, 20, 5, 5), Box2D(5, 0, 10, 10)])
    assert c.kind is CostKind.IOU2D
    np.testing.assert_allclose(c.values[0], [0.0, 1.0, 1 - 50 / 150], atol=1e-12)


def test_iou_costs_in_unit_interval(backend):
    rng = np.random.default_rng(2)
    a = np.column_stack([rng.uniform(-1, 1, 15), rng.uniform(-0.2, 0.2, 15), rng.uniform(-1, 1, 15),
                         rng.uniform(0.4, 1.5, (15, 3)), rng.uniform(-3, 3, 15)])
    c = iou_cost_3d(a[:7], a[7:]).values
    assert np.all(c >= -1e-12) and np.all(c <= 1 + 1e-12)


# gating


def test_gate_threshold_matches_independent_chi2_quantile():
    assert gate_threshold(4) == pytest.approx(9.4877, abs=5e-5)
    assert gate_threshold(4) == pytest.approx(chi2_ppf(0.95, 4), abs=1e-9)
    assert gate_threshold(7) == pytest.approx(chi2_ppf(0.95, 7), abs=1e-9)


def test_gate_at_prediction_and_just_outside():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    S = A @ A.T + np.eye(4)
    zhat = rng.normal(size=4)
    w, V = np.linalg.eigh(S)
    thr = gate_threshold(4)
    # nu along an eigenvector v_k has d^2 = |nu|^2 / w_k
    inside = zhat + V[:, 0] * math.sqrt(thr * w[0]) * (1 - 1e-6)
    outside = zhat + V[:, 0] * math.sqrt(thr * w[0]) * (1 + 1e-6)
    mask = gate(zhat[None], S[None], np.stack([zhat, inside, outside]))
    assert mask.tolist() == [[True, True, False]]
    d2 = mahalanobis_matrix(zhat[None], S[None], outside[None])[0, 0]
    assert d2 == pytest.approx(thr * (1 + 1e-6) ** 2, rel=1e-9)


def test_gate_ill_conditioned_rows_are_ungated():
    S = np.stack([np.eye(4), np.diag([1.0, 1.0, 1.0, 1e-14])])
    mask = gate(np.zeros((2, 4)), S, np.zeros((1, 4)))
    assert mask.tolist() == [[True], [False]]


def test_gate_wraps_angle_residual():
    S = np.eye(7)[None] * 0.01
    zhat = np.zeros((1, 7))
    zhat[0, 6] = math.pi - 0.01
    z = np.zeros((1, 7))
    z[0, 6] = -math.pi + 0.01
    assert mahalanobis_matrix(zhat, S, z, angle_index=6)[0, 0] == pytest.approx(0.0004 / 0.01, rel=1e-6)


# clusters


def test_block_diagonal_mask_gives_one_cluster_per_block():
    mask = np.zeros((4, 4), bool)
    mask[:2, :2] = True
    mask[2:, 2:] = True
    cl = build_clusters(mask)
    assert [(c.track_indices, c.detection_indices) for c in cl] == [([0, 1], [0, 1]), ([2, 3], [2, 3])]


def test_full_mask_single_cluster():
    cl = build_clusters(np.ones((3, 3), bool))
    assert len(cl) == 1 and cl[0].track_indices == [0, 1, 2] and cl[0].detection_indices == [0, 1, 2]


def test_chain_is_one_cluster():
    # t0-d0, t1-d0, t1-d1
    mask = np.array([[1, 0], [1, 1]], bool)
    cl = build_clusters(mask)
    assert len(cl) == 1 and cl[0].track_indices == [0, 1] and cl[0].detection_indices == [0, 1]


def test_trackless_and_ungated():
    mask = np.array([[0, 0, 0], [0, 1, 0]], bool)
    cl = build_clusters(mask)
    assert [(c.track_indices, c.detection_indices) for c in cl] == [([0], []), ([1], [1])]
    assert ungated_detections(mask) == [0, 2]
    assert build_clusters(np.zeros((0, 3), bool)) == []
    assert ungated_detections(np.zeros((0, 3), bool)) == [0, 1, 2]


def test_clusters_partition_random_graphs():
    rng = np.random.default_rng(4)
    for _ in range(50):
        mask = rng.random((8, 9)) < 0.15
        cl = build_clusters(mask)
        tracks = sorted(i for c in cl for i in c.track_indices)
        dets = sorted(j for c in cl for j in c.detection_indices)
        assert tracks == list(range(8))
        assert sorted(dets + ungated_detections(mask)) == list(range(9))
        for a, b in itertools.combinations(cl, 2):
            assert not mask[np.ix_(a.track_indices, b.detection_indices)].any()
        for c in cl:
            for j in c.detection_indices:
                assert mask[c.track_indices, j].any()


# entropy selection


def test_entropy_single_detection_ties_to_iou():
    mask = np.array([[True, False]])
    app = CostMatrix([[0.3, 0.1]], mask, CostKind.APPEARANCE)
    iou = CostMatrix([[0.8, 0.2]], mask, CostKind.IOU3D)
    assert entropy_select(app, iou, full_cluster(1, 2)) is iou


def test_entropy_peaked_appearance_selected():
    app = CostMatrix([[0.1, 1.9]], True, CostKind.APPEARANCE)
    iou = CostMatrix([[0.5, 0.5]], True, CostKind.IOU3D)
    cl = full_cluster(1, 2)
    p = np.exp([-0.1, -1.9])
    p /= p.sum()
    assert row_entropies(app, cl)[0] == pytest.approx(-(p * np.log(p)).sum())
    assert row_entropies(iou, cl)[0] == pytest.approx(math.log(2))
    assert entropy_select(app, iou, cl) is app


def test_entropy_selection_invariant_to_shared_scaling():
    rng = np.random.default_rng(5)
    for _ in range(50):
        va, vi = rng.uniform(0, 2, (3, 4)), rng.uniform(0, 1, (3, 4))
        cl = full_cluster(3, 4)
        pick = entropy_select(CostMatrix(va, True, CostKind.APPEARANCE), CostMatrix(vi, True, CostKind.IOU3D), cl, 1.0)
        s = rng.uniform(0.5, 3.0)
        pick_s = entropy_select(CostMatrix(va * s, True, CostKind.APPEARANCE),
                                CostMatrix(vi * s, True, CostKind.IOU3D), cl, s)
        assert pick.kind is pick_s.kind


# JPDA


def test_jpda_exact_single_pair(backend):
    res = jpda_exact(CostMatrix([[0.0]], True, CostKind.IOU3D), full_cluster(1, 1), 0.9, 1.0)
    np.testing.assert_allclose(res.marginals, [[0.1, 0.9]], atol=1e-12)


def test_jpda_exact_symmetric_pair(backend):
    c = CostMatrix([[0.2, 0.7], [0.2, 0.7]], True, CostKind.IOU3D)
    m = jpda_exact(c, full_cluster(2, 2), 0.9, 1.0).marginals
    np.testing.assert_allclose(m[0], m[1], atol=1e-12)


def test_jpda_exact_matches_brute_force(backend):
    rng = np.random.default_rng(6)
    for _ in range(100):
        K, N = rng.integers(1, 4), rng.integers(0, 4)
        c = random_problem(rng, K, N)
        p_d, lam = rng.uniform(0.5, 0.99), rng.uniform(0.1, 3.0)
        res = jpda_exact(c, full_cluster(K, N), p_d, lam)
        np.testing.assert_allclose(res.marginals, brute_jpda(c.values, c.gate_mask, p_d, lam), atol=1e-12)
        np.testing.assert_allclose(res.marginals.sum(1), 1.0, atol=1e-12)
        assert np.all(res.marginals[:, 1:][~c.gate_mask] == 0.0)


def test_jpda_exact_permutation_invariance(backend):
    rng = np.random.default_rng(7)
    for _ in range(30):
        c = random_problem(rng, 3, 4)
        perm = rng.permutation(4)
        base = jpda_exact(c, full_cluster(3, 4), 0.9, 1.0).marginals
        permuted = CostMatrix(c.values[:, perm], c.gate_mask[:, perm], c.kind)
        got = jpda_exact(permuted, full_cluster(3, 4), 0.9, 1.0).marginals
        np.testing.assert_allclose(got[:, 1:], base[:, 1:][:, perm], atol=1e-12)
        np.testing.assert_allclose(got[:, 0], base[:, 0], atol=1e-12)


def test_jpda_exact_cluster_too_large(backend):
    c = CostMatrix(np.zeros((4, 4)), True, CostKind.IOU3D)
    assert count_events(c.gate_mask) == 209
    with pytest.raises(ClusterTooLarge):
        jpda_exact(c, full_cluster(4, 4), 0.9, 1.0, max_events=208)
    jpda_exact(c, full_cluster(4, 4), 0.9, 1.0, max_events=209)


def test_cluster_decomposition_preserves_marginals(backend):
    rng = np.random.default_rng(8)
    for _ in range(50):
        sizes = [(int(rng.integers(1, 3)), int(rng.integers(1, 3))) for _ in range(3)]
        K, N = sum(s[0] for s in sizes), sum(s[1] for s in sizes)
        vals = rng.uniform(0, 2, (K, N))
        mask = np.zeros((K, N), bool)
        r = c = 0
        for k, n in sizes:
            mask[r:r + k, c:c + n] = rng.random((k, n)) < 0.9
            r, c = r + k, c + n
        cost = CostMatrix(vals, mask, CostKind.IOU3D)
        clusters = build_clusters(mask)
        parts = [jpda_exact(cost, cl, 0.85, 0.7) for cl in clusters if cl.detection_indices]
        merged = merge_results(parts, K, N)
        whole = jpda_exact(cost, full_cluster(K, N), 0.85, 0.7, max_events=10**6).marginals
        np.testing.assert_allclose(merged, whole, atol=1e-12)


def test_merge_results_defaults_to_miss():
    out = merge_results([], 2, 3)
    assert out[:, 0].tolist() == [1.0, 1.0] and not out[:, 1:].any()


# Murty


def test_murty_two_by_two():
    sols = murty_kbest([[1.0, 2.0], [2.0, 1.0]], 2)
    assert sols == [((0, 1), 2.0), ((1, 0), 4.0)]


def test_murty_m1_is_hungarian():
    rng = np.random.default_rng(9)
    for _ in range(50):
        C = rng.uniform(0, 10, (4, 6))
        (sol, cost), = murty_kbest(C, 1)
        best, _ = brute_assignment(C)
        assert cost == pytest.approx(best)
        assert hungarian(C) == dict(enumerate(sol))


def test_murty_matches_brute_force_ranking():
    rng = np.random.default_rng(10)
    for _ in range(200):
        C = rng.uniform(0, 10, (4, 4))
        got = murty_kbest(C, 10)
        want = all_assignments_sorted(C)[:10]
        np.testing.assert_allclose([c for _, c in got], [c for c, _ in want], atol=1e-9)
        assert len({s for s, _ in got}) == 10
        for sol, c in got:
            assert c == pytest.approx(sum(C[i, sol[i]] for i in range(4)))


def test_murty_fewer_than_m():
    C = [[1.0, np.inf], [np.inf, 2.0]]
    assert murty_kbest(C, 5) == [((0, 1), 3.0)]
    with pytest.raises(FewerThanM):
        murty_kbest(C, 5, strict=True)
    with pytest.raises(ValueError):
        murty_kbest(C, 0)


def test_miss_augmented_event_costs():
    vals = np.array([[0.3, 1.0]])
    mask = np.array([[True, False]])
    C = miss_augmented_costs(vals, mask, 0.9, 2.0)
    assert C.shape == (1, 3)
    assert C[0, 0] == pytest.approx(-(math.log(0.9) - 0.3 - math.log(0.1) - math.log(2.0)))
    assert math.isinf(C[0, 1]) and C[0, 2] == 0.0


def test_jpda_mbest_exact_when_m_covers_all_events(backend):
    rng = np.random.default_rng(11)
    for _ in range(50):
        c = random_problem(rng, 3, 3)
        n_ev = count_events(c.gate_mask)
        exact = jpda_exact(c, full_cluster(3, 3), 0.9, 1.0).marginals
        approx = jpda_mbest(c, full_cluster(3, 3), 0.9, 1.0, n_ev + 3).marginals
        np.testing.assert_allclose(approx, exact, atol=1e-12)


def test_jpda_mbest_single_pair_m2():
    res = jpda_mbest(CostMatrix([[0.0]], True, CostKind.IOU3D), full_cluster(1, 1), 0.9, 1.0, 2)
    np.testing.assert_allclose(res.marginals, [[0.1, 0.9]], atol=1e-12)


def test_jpda_mbest_equals_truncated_event_sum():
    rng = np.random.default_rng(16)
    for _ in range(100):
        K, N = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        c = random_problem(rng, K, N)
        m = int(rng.integers(1, 12))
        got = jpda_mbest(c, full_cluster(K, N), 0.9, 1.0, m).marginals
        np.testing.assert_allclose(got, truncated_jpda(c.values, c.gate_mask, 0.9, 1.0, m), atol=1e-12)


def test_jpda_mbest_m20_close_to_exact(backend):
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(100):
        c = CostMatrix(rng.uniform(0, 2, (3, 3)), True, CostKind.IOU3D)
        exact = jpda_exact(c, full_cluster(3, 3), 0.9, 1.0).marginals
        approx = jpda_mbest(c, full_cluster(3, 3), 0.9, 1.0, 20).marginals
        worst = max(worst, np.abs(approx - exact).max())
        np.testing.assert_allclose(approx.sum(1), 1.0, atol=1e-12)
    assert worst < 0.05, f"max |m-best - exact| = {worst:.4f}"


def test_associate_cluster_policy(backend):
    rng = np.random.default_rng(13)
    params = AssociationParams(p_d=0.9, clutter=1.0, m_best=50)
    small = CostMatrix(rng.uniform(0, 2, (3, 3)), True, CostKind.IOU3D)
    res, kind = associate_cluster(None, small, full_cluster(3, 3), params)
    assert res.exact and kind is CostKind.IOU3D
    big = CostMatrix(rng.uniform(0, 2, (6, 6)), True, CostKind.IOU3D)
    res, _ = associate_cluster(None, big, full_cluster(6, 6), params)
    assert not res.exact
    np.testing.assert_allclose(res.marginals.sum(1), 1.0, atol=1e-9)
    res, _ = associate_cluster(None, small, Cluster([0], []), params)
    assert res.marginals.tolist() == [[1.0]]


def test_association_params_validation():
    for bad in ({"m_best": 0}, {"gate_quantile": 1.0}, {"temperature": 0.0}):
        with pytest.raises(ValueError):
            AssociationParams(**bad)


# Hungarian


def test_hungarian_examples():
    assert hungarian(np.diag([0.0, 0.0, 0.0]) + 5 * (1 - np.eye(3))) == {0: 0, 1: 1, 2: 2}
    assert hungarian([[4.0, 1.0], [2.0, 0.5]]) == {0: 1, 1: 0}


def test_hungarian_drops_sentinel_pairs_and_extra_rows():
    C = np.array([[1e9, 1e9], [0.5, 1e9], [0.2, 0.3]])
    assert hungarian(C) == {1: 0, 2: 1}
    assert hungarian(np.zeros((0, 3))) == {}


def test_hungarian_brute_force_8x8():
    rng = np.random.default_rng(14)
    for _ in range(50):
        C = rng.uniform(0, 10, (8, 8))
        sol = hungarian(C)
        best, _ = brute_assignment(C)
        assert sum(C[i, j] for i, j in sol.items()) == pytest.approx(best, abs=1e-9)


def test_hungarian_beats_random_assignments():
    rng = np.random.default_rng(15)
    C = rng.uniform(0, 10, (12, 15))
    sol = hungarian(C)
    opt = sum(C[i, j] for i, j in sol.items())
    for _ in range(1000):
        cols = rng.permutation(15)[:12]
        assert opt <= C[np.arange(12), cols].sum() + 1e-9
