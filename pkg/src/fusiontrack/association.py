"""Data association: cost matrices, gating, clustering and JPDA marginals."""
from __future__ import annotations

import enum
import functools
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import chi2

from . import kernels
from .errors import ClusterTooLarge, DimensionMismatch, FewerThanM
from .estimation import MAX_COND
from .geometry import iou2d_matrix, wrap_angles

UNGATED_COST = 1e9
# floor for the miss and clutter factors so log-weights stay finite at P_D = 1 or lambda = 0
_LOG_FLOOR = 1e-300


class CostKind(enum.Enum):
    APPEARANCE = "appearance"
    IOU3D = "iou3d"
    IOU2D = "iou2d"


@dataclass
class CostMatrix:
    values: np.ndarray
    gate_mask: np.ndarray
    kind: CostKind

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("cost values must be a 2-D array")
        self.gate_mask = np.broadcast_to(np.asarray(self.gate_mask, dtype=bool), self.values.shape).copy()

    @property
    def shape(self):
        return self.values.shape

    def with_gate(self, mask) -> "CostMatrix":
        return CostMatrix(self.values, mask, self.kind)


@dataclass
class Cluster:
    track_indices: list[int]
    detection_indices: list[int]


@dataclass
class AssociationResult:
    """Marginal association probabilities; column 0 is the miss hypothesis.

    ``track_indices``/``detection_indices`` locate the rows and columns
    ``1..N`` in the full problem.
    """

    marginals: np.ndarray
    track_indices: list[int] = field(default_factory=list)
    detection_indices: list[int] = field(default_factory=list)
    exact: bool = True


@dataclass
class AssociationParams:
    p_d: float = 0.9
    clutter: float = 1.0
    m_best: int = 50
    exact_max_side: int = 4
    exact_max_events: int = 10_000
    gate_quantile: float = 0.95
    temperature: float = 1.0

    def __post_init__(self):
        if self.m_best < 1:
            raise ValueError("m_best must be at least 1")
        if not 0 < self.gate_quantile < 1:
            raise ValueError("gate_quantile must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.exact_max_side < 0 or self.exact_max_events < 1:
            raise ValueError("exact-enumeration limits must be positive")


# --------------------------------------------------------------------------
# costs


def appearance_cost(track_features: Sequence, det_features: Sequence) -> CostMatrix:
    """Pairwise Euclidean distance between unit-norm feature vectors."""
    a = np.asarray(track_features, dtype=float)
    b = np.asarray(det_features, dtype=float)
    if a.size == 0 or b.size == 0:
        return CostMatrix(np.zeros((len(a), len(b))), True, CostKind.APPEARANCE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"feature shapes {a.shape} and {b.shape} do not match")
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return CostMatrix(np.sqrt(np.clip(d2, 0.0, None)), True, CostKind.APPEARANCE)


def iou_cost_3d(track_boxes, det_boxes) -> CostMatrix:
    """``1 - IoU`` with detection boxes re-oriented to each track's yaw."""
    a = _as_rows(track_boxes, 7)
    b = _as_rows(det_boxes, 7)
    if len(a) == 0 or len(b) == 0:
        return CostMatrix(np.zeros((len(a), len(b))), True, CostKind.IOU3D)
    return CostMatrix(1.0 - kernels.iou3d_aligned_matrix(a, b), True, CostKind.IOU3D)


def iou_cost_2d(track_boxes, det_boxes) -> CostMatrix:
    a = _as_rows(track_boxes, 4)
    b = _as_rows(det_boxes, 4)
    if len(a) == 0 or len(b) == 0:
        return CostMatrix(np.zeros((len(a), len(b))), True, CostKind.IOU2D)
    return CostMatrix(1.0 - iou2d_matrix(a, b), True, CostKind.IOU2D)


def _as_rows(boxes, width):
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, width).astype(float)
    return np.array([b.to_array() if hasattr(b, "to_array") else b for b in boxes], dtype=float).reshape(-1, width)


# --------------------------------------------------------------------------
# gating


@functools.lru_cache(maxsize=None)
def gate_threshold(dim: int, quantile: float = 0.95) -> float:
    return float(chi2.ppf(quantile, dim))


def mahalanobis_matrix(zhat: np.ndarray, S: np.ndarray, Z: np.ndarray, angle_index=None) -> np.ndarray:
    """Squared Mahalanobis distances ``(K, N)``; rows with ill-conditioned S are ``inf``."""
    zhat = np.asarray(zhat, dtype=float)
    S = np.asarray(S, dtype=float)
    Z = np.asarray(Z, dtype=float)
    K, N = zhat.shape[0], Z.shape[0]
    if K == 0 or N == 0:
        return np.zeros((K, N))
    nu = Z[None, :, :] - zhat[:, None, :]
    if angle_index is not None:
        nu[..., angle_index] = wrap_angles(nu[..., angle_index])
    out = np.full((K, N), np.inf)
    ok = np.linalg.cond(S) <= MAX_COND
    if ok.any():
        L = np.linalg.cholesky(S[ok])
        # solve L y = nu^T for every track at once
        y = np.linalg.solve(L, nu[ok].transpose(0, 2, 1))
        out[ok] = (y * y).sum(axis=1)
    return out


def gate(zhat, S, Z, quantile: float = 0.95, angle_index=None) -> np.ndarray:
    """Gate mask: squared Mahalanobis distance within the chi-square quantile."""
    d2 = mahalanobis_matrix(zhat, S, Z, angle_index)
    dim = np.asarray(Z).shape[-1] if np.asarray(Z).ndim == 2 else np.asarray(zhat).shape[-1]
    return d2 <= gate_threshold(dim, quantile)


# --------------------------------------------------------------------------
# clustering


def build_clusters(gate_mask) -> list[Cluster]:
    """Connected components of the gated track-detection graph.

    Tracks with no gated detection become singleton clusters; detections
    gated to no track belong to no cluster (see :func:`ungated_detections`).
    """
    mask = np.asarray(gate_mask, dtype=bool)
    K, N = mask.shape
    if K == 0:
        return []
    rows, cols = np.nonzero(mask)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols + K)), shape=(K + N, K + N))
    _, labels = connected_components(adj, directed=False)
    by_label: dict[int, Cluster] = {}
    order = []
    for i in range(K):
        lab = labels[i]
        if lab not in by_label:
            by_label[lab] = Cluster([], [])
            order.append(lab)
        by_label[lab].track_indices.append(i)
    for j in range(N):
        lab = labels[K + j]
        if lab in by_label:
            by_label[lab].detection_indices.append(j)
    return [by_label[lab] for lab in order]


def ungated_detections(gate_mask) -> list[int]:
    mask = np.asarray(gate_mask, dtype=bool)
    if mask.shape[0] == 0:
        return list(range(mask.shape[1]))
    return np.flatnonzero(~mask.any(axis=0)).tolist()


# --------------------------------------------------------------------------
# cost selection


def row_entropies(cost: CostMatrix, cluster: Cluster, temperature: float = 1.0) -> np.ndarray:
    """Entropy of the softmax over ``-cost / temperature`` per track row (gated entries)."""
    out = np.zeros(len(cluster.track_indices))
    cols = np.asarray(cluster.detection_indices, dtype=int)
    for r, i in enumerate(cluster.track_indices):
        if cols.size == 0:
            continue
        sel = cols[cost.gate_mask[i, cols]]
        if sel.size < 2:
            continue
        logits = -cost.values[i, sel] / temperature
        logits -= logits.max()
        p = np.exp(logits)
        p /= p.sum()
        nz = p > 0
        out[r] = -(p[nz] * np.log(p[nz])).sum()
    return out


def entropy_select(
    c_app: CostMatrix, c_iou: CostMatrix, cluster: Cluster, temperature: float = 1.0
) -> CostMatrix:
    """Pick the more peaked cost matrix for a cluster; ties go to IoU."""
    if not cluster.track_indices:
        return c_iou
    h_app = row_entropies(c_app, cluster, temperature).mean()
    h_iou = row_entropies(c_iou, cluster, temperature).mean()
    if h_app < h_iou - 1e-12:
        return c_app
    return c_iou


# --------------------------------------------------------------------------
# JPDA


def log_weight_ratios(values: np.ndarray, p_d: float, clutter: float) -> np.ndarray:
    """Log of ``P_D exp(-c) / ((1 - P_D) lambda)``: an assignment's weight relative to a miss."""
    miss = max(1.0 - p_d, _LOG_FLOOR)
    lam = max(clutter, _LOG_FLOOR)
    return math.log(p_d) - np.asarray(values, dtype=float) - math.log(miss) - math.log(lam)


def _sub(cost: CostMatrix, cluster: Cluster):
    ti = np.asarray(cluster.track_indices, dtype=int)
    dj = np.asarray(cluster.detection_indices, dtype=int)
    vals = cost.values[np.ix_(ti, dj)]
    mask = cost.gate_mask[np.ix_(ti, dj)]
    return vals, mask


def jpda_exact(
    cost: CostMatrix, cluster: Cluster, p_d: float, clutter: float, max_events: int = 10_000
) -> AssociationResult:
    """Exact JPDA marginals by enumerating all joint events of the cluster."""
    vals, mask = _sub(cost, cluster)
    lr = np.where(mask, log_weight_ratios(vals, p_d, clutter), 0.0)
    marg = kernels.jpda_marginals(lr, mask, max_events)
    if marg is None:
        raise ClusterTooLarge(f"cluster has more than {max_events} joint events")
    return AssociationResult(marg, list(cluster.track_indices), list(cluster.detection_indices), True)


def murty_kbest(cost, m: int, strict: bool = False) -> list[tuple[tuple[int, ...], float]]:
    """The ``m`` lowest-cost row-complete assignments, best first.

    ``cost`` is ``K x M`` with ``K <= M``; ``inf`` entries are forbidden.
    Each solution is ``(column per row, total cost)``. If fewer than ``m``
    exist all are returned, or :class:`FewerThanM` is raised when ``strict``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    C = np.array(cost, dtype=float)
    K = C.shape[0]
    if K == 0:
        sols = [((), 0.0)]
        if strict and m > 1:
            raise FewerThanM("only the empty assignment exists", sols)
        return sols

    def solve(M):
        try:
            rows, cols = linear_sum_assignment(M)
        except ValueError:
            return None
        if len(rows) < K:
            return None
        total = M[rows, cols].sum()
        if not np.isfinite(total):
            return None
        out = np.empty(K, dtype=int)
        out[rows] = cols
        return tuple(out.tolist()), float(C[np.arange(K), out].sum())

    first = solve(C)
    if first is None:
        if strict:
            raise FewerThanM("no feasible assignment", [])
        return []
    tie = itertools.count()
    heap = [(first[1], next(tie), first[0], C)]
    found = []
    while heap and len(found) < m:
        c, _, sol, M = heapq.heappop(heap)
        found.append((sol, c))
        if len(found) == m:
            break
        M = M.copy()
        for r in range(K):
            col = sol[r]
            child = M.copy()
            child[r, col] = np.inf
            res = solve(child)
            if res is not None:
                heapq.heappush(heap, (res[1], next(tie), res[0], child))
            keep = M[r, col]
            M[r, :] = np.inf
            M[:, col] = np.inf
            M[r, col] = keep
    if strict and len(found) < m:
        raise FewerThanM(f"only {len(found)} feasible assignments", found)
    return found


def miss_augmented_costs(values: np.ndarray, mask: np.ndarray, p_d: float, clutter: float) -> np.ndarray:
    """``K x (N + K)`` assignment costs: detections then one private miss column per track.

    A complete assignment is a JPDA joint event and its total cost is the
    negative log of the event weight relative to the all-miss event.
    """
    K, N = values.shape
    out = np.full((K, N + K), np.inf)
    out[:, :N] = np.where(mask, -log_weight_ratios(values, p_d, clutter), np.inf)
    out[np.arange(K), N + np.arange(K)] = 0.0
    return out


def jpda_mbest(
    cost: CostMatrix, cluster: Cluster, p_d: float, clutter: float, m: int
) -> AssociationResult:
    """JPDA marginals from the ``m`` highest-weight joint events only."""
    vals, mask = _sub(cost, cluster)
    K, N = vals.shape
    if K == 0:
        return AssociationResult(np.zeros((0, N + 1)), [], list(cluster.detection_indices), True)
    events = murty_kbest(miss_augmented_costs(vals, mask, p_d, clutter), m)
    costs = np.array([c for _, c in events])
    w = np.exp(-(costs - costs.min()))
    marg = np.zeros((K, N + 1))
    for (sol, _), wk in zip(events, w):
        for i, col in enumerate(sol):
            marg[i, col + 1 if col < N else 0] += wk
    marg /= marg.sum(axis=1, keepdims=True)
    return AssociationResult(marg, list(cluster.track_indices), list(cluster.detection_indices), False)


def associate_cluster(
    c_app: CostMatrix | None, c_iou: CostMatrix, cluster: Cluster, params: AssociationParams
) -> tuple[AssociationResult, CostKind]:
    """Entropy-select a cost matrix for the cluster and compute its JPDA marginals."""
    chosen = c_iou if c_app is None else entropy_select(c_app, c_iou, cluster, params.temperature)
    n_t, n_d = len(cluster.track_indices), len(cluster.detection_indices)
    if n_d == 0:
        res = AssociationResult(np.ones((n_t, 1)), list(cluster.track_indices), [], True)
        return res, chosen.kind
    if min(n_t, n_d) <= params.exact_max_side:
        try:
            return jpda_exact(chosen, cluster, params.p_d, params.clutter, params.exact_max_events), chosen.kind
        except ClusterTooLarge:
            pass
    return jpda_mbest(chosen, cluster, params.p_d, params.clutter, params.m_best), chosen.kind


def merge_results(results: Sequence[AssociationResult], K: int, N: int) -> np.ndarray:
    """Scatter per-cluster marginals into a full ``K x (N + 1)`` matrix.

    Tracks not covered by any result get miss probability one.
    """
    out = np.zeros((K, N + 1))
    out[:, 0] = 1.0
    for res in results:
        if not res.track_indices:
            continue
        ti = np.asarray(res.track_indices, dtype=int)
        out[ti, :] = 0.0
        cols = np.concatenate([[0], np.asarray(res.detection_indices, dtype=int) + 1])
        out[np.ix_(ti, cols)] = res.marginals
    return out


# --------------------------------------------------------------------------
# hard assignment


def hungarian(cost, sentinel: float = UNGATED_COST) -> dict[int, int]:
    """Minimum-cost injective row-to-column map; pairs at or above ``sentinel`` are dropped."""
    C = np.asarray(cost, dtype=float)
    if C.size == 0:
        return {}
    C = np.where(np.isfinite(C), C, sentinel)
    rows, cols = linear_sum_assignment(C)
    return {int(r): int(c) for r, c in zip(rows, cols) if C[r, c] < sentinel}
