"""EM clustering of node positions with a 2-D Gaussian mixture.

Nodes are grouped into K clusters by fitting a full-covariance mixture with
the standard E/M iteration and assigning every node to the component with the
largest posterior responsibility.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from dlmtc.model import ClusterAssignment

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class EmConfig:
    theta_em: float = 1e-6
    max_iters: int = 200
    cov_floor: float = 1e-4
    init_strategy: str = "farthest-point"
    rng_seed: int = 0
    max_reseeds: int = 10

    def __post_init__(self) -> None:
        if self.theta_em <= 0:
            raise ClusteringError("theta_em must be positive")
        if self.max_iters < 1:
            raise ClusteringError("max_iters must be >= 1")
        if self.cov_floor <= 0:
            raise ClusteringError("cov_floor must be positive")
        if self.init_strategy not in ("random-points", "farthest-point"):
            raise ClusteringError(f"unknown init strategy {self.init_strategy!r}")


@dataclass
class GmmState:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float = float("nan")
    responsibilities: np.ndarray | None = None
    # one list of P values per uninterrupted EM run (a re-seed starts a new one)
    history: list[list[float]] = field(default_factory=list)
    reseeds: int = 0
    iterations: int = 0
    converged: bool = False

    @property
    def k(self) -> int:
        return len(self.weights)


def default_k(num_points: int) -> int:
    """Roughly one cluster per 25 nodes."""
    return max(1, round(num_points / 25))


def _floor_cov(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= floor:
        return cov
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def _component_log_density(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    a, b, d = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * d - b * b
    dx = points[:, 0] - mean[0]
    dy = points[:, 1] - mean[1]
    maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * math.log(det) - 0.5 * maha


def _check_covariances(covs: np.ndarray, floor: float) -> None:
    for k, cov in enumerate(covs):
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, abs(cov).max())):
            raise ClusteringError(f"covariance {k} is not symmetric")
        if np.linalg.eigvalsh(cov).min() < floor * (1 - 1e-6):
            raise ClusteringError(f"covariance {k} is singular below the floor {floor}")


def _log_joint(points: np.ndarray, state: GmmState) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(state.weights)
    cols = [log_w[k] + _component_log_density(points, state.means[k], state.covariances[k])
            for k in range(state.k)]
    return np.column_stack(cols)


def log_likelihood(points, state: GmmState, cov_floor: float = 1e-4) -> float:
    """Sum over points of the log mixture density."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ClusteringError("need at least one point")
    _check_covariances(state.covariances, cov_floor)
    return float(np.sum(logsumexp(_log_joint(pts, state), axis=1)))


def _e_step(points: np.ndarray, state: GmmState) -> tuple[np.ndarray, float]:
    joint = _log_joint(points, state)
    norm = logsumexp(joint, axis=1)
    resp = np.exp(joint - norm[:, None])
    return resp, float(np.sum(norm))


def _m_step(points: np.ndarray, resp: np.ndarray, floor: float) -> tuple[np.ndarray, ...]:
    nk = resp.sum(axis=0)
    weights = nk / len(points)
    live = nk > 1e-8
    means = np.zeros((len(nk), 2))
    means[live] = (resp[:, live].T @ points) / nk[live, None]
    covs = np.empty((len(nk), 2, 2))
    for k in range(len(nk)):
        if not live[k]:
            covs[k] = np.eye(2) * floor
            continue
        diff = points - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k] = _floor_cov(cov, floor)
    return weights, means, covs


def _initial_centers(points: np.ndarray, k: int, config: EmConfig, rng) -> np.ndarray:
    n = len(points)
    if config.init_strategy == "random-points":
        idx = rng.choice(n, size=k, replace=False)
        return points[np.sort(idx)].copy()
    chosen = [int(rng.integers(n))]
    dmin = np.hypot(*(points - points[chosen[0]]).T)
    for _ in range(1, k):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.hypot(*(points - points[nxt]).T))
    return points[chosen].copy()


def _global_cov(points: np.ndarray, floor: float) -> np.ndarray:
    if len(points) < 2:
        return np.eye(2) * floor
    return _floor_cov(np.cov(points.T, bias=True), floor)


def _reseed(state: GmmState, comp: int, points: np.ndarray, resp: np.ndarray,
            floor: float, exclude: set[int] = frozenset()) -> None:
    score = resp.max(axis=1).copy()
    if exclude:
        score[list(exclude)] = np.inf
    target = int(np.argmin(score))
    state.means[comp] = points[target]
    state.covariances[comp] = _global_cov(points, floor)
    state.weights[comp] = 1.0 / len(points)
    state.weights /= state.weights.sum()
    state.reseeds += 1
    logger.debug("re-seeded component %d at point %d", comp, target)


def _run_em(points: np.ndarray, state: GmmState, config: EmConfig,
            trace: list | None, iter_offset: int) -> np.ndarray:
    n = len(points)
    resp, p = _e_step(points, state)
    segment = [p]
    state.history.append(segment)
    state.converged = False
    it = 0
    while it < config.max_iters:
        it += 1
        weights, means, covs = _m_step(points, resp, config.cov_floor)
        collapsed = [k for k in range(len(weights)) if weights[k] * n <= 1e-8]
        state.weights, state.means, state.covariances = weights, means, covs
        if collapsed:
            for k in collapsed:
                _reseed(state, k, points, resp, config.cov_floor)
            resp, p = _e_step(points, state)
            segment = [p]
            state.history.append(segment)
            continue
        resp, p_new = _e_step(points, state)
        segment.append(p_new)
        if trace is not None:
            trace.append(_trace_row(iter_offset + it, p_new, state))
        if abs(p_new - p) < config.theta_em:
            p = p_new
            state.converged = True
            break
        p = p_new
    state.iterations += it
    state.log_likelihood = p
    return resp


def _trace_row(it: int, p: float, state: GmmState) -> dict:
    row = {"iter": it, "P": p}
    for k in range(state.k):
        row[f"pi_{k}"] = state.weights[k]
        row[f"mu_{k}_x"], row[f"mu_{k}_y"] = state.means[k]
        cov = state.covariances[k]
        row[f"sigma_{k}_xx"], row[f"sigma_{k}_xy"], row[f"sigma_{k}_yy"] = cov[0, 0], cov[0, 1], cov[1, 1]
    return row


def run_emd(points, k: int, config: EmConfig | None = None,
            ids: list[int] | None = None, trace: list | None = None
            ) -> tuple[GmmState, ClusterAssignment]:
    """Fit a K-component mixture and hard-assign each point.

    ``ids`` labels the points in the returned assignment (defaults to
    0..n-1). Components are returned in canonical order, sorted by mean.
    """
    config = config or EmConfig()
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the number of points ({n})")
    ids = list(range(n)) if ids is None else list(ids)
    rng = np.random.default_rng(config.rng_seed)

    centers = _initial_centers(pts, k, config, rng)
    cov0 = _global_cov(pts, config.cov_floor)
    state = GmmState(
        weights=np.full(k, 1.0 / k),
        means=centers,
        covariances=np.repeat(cov0[None], k, axis=0),
    )

    resp = _run_em(pts, state, config, trace, 0)
    labels = np.argmax(resp, axis=1)
    for _ in range(config.max_reseeds):
        counts = np.bincount(labels, minlength=k)
        empty = [c for c in range(k) if counts[c] == 0]
        if not empty:
            break
        singletons = {i for i in range(n) if counts[labels[i]] == 1}
        for c in empty:
            _reseed(state, c, pts, resp, config.cov_floor, exclude=singletons)
        resp = _run_em(pts, state, config, trace, state.iterations)
        labels = np.argmax(resp, axis=1)

    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] == 0:
            # last resort: move the least confident point from a shared component
            score = resp.max(axis=1).copy()
            score[counts[labels] <= 1] = np.inf
            i = int(np.argmin(score))
            counts[labels[i]] -= 1
            labels[i] = c
            counts[c] += 1
            state.reseeds += 1
            logger.warning("forced assignment of point %d to empty component %d", i, c)

    order = sorted(range(k), key=lambda c: (state.means[c][0], state.means[c][1], c))
    rank = np.empty(k, dtype=int)
    rank[order] = np.arange(k)
    state.weights = state.weights[order]
    state.means = state.means[order]
    state.covariances = state.covariances[order]
    state.responsibilities = resp[:, order]
    labels = rank[labels]

    assignment = ClusterAssignment(
        k=k,
        membership={ids[i]: int(labels[i]) for i in range(n)},
        centroids=tuple((float(m[0]), float(m[1])) for m in state.means),
    )
    return state, assignment


def write_em_trace(rows: list[dict], path: str | Path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
