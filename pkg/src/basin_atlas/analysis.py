"""Pairwise metric matrices, spectral clustering into basins, and statistics.

The clustering pipeline: Gaussian affinity with median-distance bandwidth,
symmetric normalized Laplacian, eigenvectors of the k smallest eigenvalues
(cyclic Jacobi sweeps), row-normalized embedding, seeded k-means with
restarts. Cluster 0 is always the larger cluster; the per-model feature is
||w - c1|| - ||w - c2|| in the spectral embedding.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .connectivity import METRICS, eval_linear_path
from .params import Checkpoint, euclidean_distance

METRIC_TAGS = ("cg", "bh", "auc", "euclidean")


@dataclass(frozen=True)
class DistanceMatrix:
    ids: tuple[str, ...]
    matrix: np.ndarray
    metric: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        n = len(self.ids)
        if m.shape != (n, n):
            raise ValueError("matrix shape does not match ids")
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix entries must be finite")
        if np.any(np.abs(m - m.T) > 1e-9):
            raise ValueError("matrix must be symmetric within 1e-9")
        if np.any(np.diag(m) != 0.0):
            raise ValueError("matrix diagonal must be zero")
        if np.any(m < 0):
            raise ValueError("distances must be nonnegative")
        object.__setattr__(self, "matrix", m)

    def __len__(self) -> int:
        return len(self.ids)


_PAIR_CONTEXT = {}


def _init_pair_worker(ckpt_paths, metric, resolution, batch_blob):
    import pickle

    from .params import load_checkpoint

    _PAIR_CONTEXT["checkpoints"] = [load_checkpoint(p) for p in ckpt_paths]
    _PAIR_CONTEXT["metric"] = metric
    _PAIR_CONTEXT["resolution"] = resolution
    _PAIR_CONTEXT["batch"], _PAIR_CONTEXT["config"] = pickle.loads(batch_blob)


def _pair_job(pair):
    i, j = pair
    cks = _PAIR_CONTEXT["checkpoints"]
    curve = eval_linear_path(cks[i], cks[j], _PAIR_CONTEXT["resolution"],
                             _PAIR_CONTEXT["batch"], _PAIR_CONTEXT["config"])
    return i, j, METRICS[_PAIR_CONTEXT["metric"]](curve), curve


def pairwise_matrix(checkpoints, metric: str, eval_batch=None, config=None,
                    resolution: int = 11, workers: int = 1, meta=None,
                    curve_sink=None, ckpt_paths=None) -> DistanceMatrix:
    """Symmetric metric matrix over all unordered pairs.

    cg/bh/auc evaluate one loss curve per pair on the shared eval sample;
    euclidean works directly in weight space. curve_sink, when given, receives
    (i, j, curve) for each evaluated pair. With workers > 1 and ckpt_paths,
    pair jobs fan out to a process pool; assembly order is fixed so results
    are independent of scheduling.
    """
    if metric not in METRIC_TAGS:
        raise ValueError(f"unknown metric {metric!r}")
    n = len(checkpoints)
    if n < 2:
        raise ValueError("need at least 2 checkpoints")
    ids = tuple(str(c.meta.get("run_id", f"m{i}")) for i, c in enumerate(checkpoints))
    m = np.zeros((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    if metric == "euclidean":
        for i, j in pairs:
            d = euclidean_distance(checkpoints[i].params, checkpoints[j].params)
            m[i, j] = m[j, i] = d
        return DistanceMatrix(ids, m, metric, meta or {})

    if eval_batch is None or config is None:
        raise ValueError(f"metric {metric!r} requires an eval batch and model config")

    if workers > 1 and ckpt_paths is not None:
        import pickle

        blob = pickle.dumps((eval_batch, config))
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_pair_worker,
            initargs=(list(ckpt_paths), metric, resolution, blob),
        ) as pool:
            for i, j, d, curve in pool.map(_pair_job, pairs, chunksize=4):
                m[i, j] = m[j, i] = d
                if curve_sink is not None:
                    curve_sink(i, j, curve)
    else:
        fn = METRICS[metric]
        for i, j in pairs:
            curve = eval_linear_path(checkpoints[i], checkpoints[j], resolution, eval_batch, config)
            m[i, j] = m[j, i] = fn(curve)
            if curve_sink is not None:
                curve_sink(i, j, curve)
    return DistanceMatrix(ids, m, metric, meta or {})


def matrix_to_csv(dm: DistanceMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([""] + list(dm.ids))
    for i, rid in enumerate(dm.ids):
        writer.writerow([rid] + [repr(float(x)) for x in dm.matrix[i]])
    return buf.getvalue()


def matrix_from_csv(text: str, metric: str = "cg", meta=None) -> DistanceMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    ids = tuple(rows[0][1:])
    m = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    return DistanceMatrix(ids, m, metric, meta or {})


def save_matrix(dm: DistanceMatrix, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(matrix_to_csv(dm))


def load_matrix(path, metric: str = "cg") -> DistanceMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        return matrix_from_csv(fh.read(), metric)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Full symmetric eigendecomposition by cyclic Jacobi rotation sweeps.

    Returns (eigenvalues ascending, eigenvectors as columns). Converged when
    every off-diagonal magnitude falls below tol.
    """
    a = np.asarray(a, dtype=np.float64).copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if np.max(np.abs(a - a.T)) > 1e-9:
        raise ValueError("matrix must be symmetric")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.max(np.abs(a - np.diag(np.diag(a)))) if n > 1 else 0.0
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < tol:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
                rot_p, rot_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * rot_p - s * rot_q
                v[:, q] = s * rot_p + c * rot_q
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = v[:, order]
    # deterministic sign: largest-magnitude entry of each vector is positive
    for col in range(n):
        idx = int(np.argmax(np.abs(eigvecs[:, col])))
        if eigvecs[idx, col] < 0:
            eigvecs[:, col] = -eigvecs[:, col]
    return eigvals, eigvecs


def kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 10, max_iter: int = 200):
    """Seeded Lloyd's k-means, best inertia over restarts."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not (1 <= k <= n):
        raise ValueError("k out of range")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        centroids = points[rng.choice(n, size=k, replace=False)].copy()
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            for c in range(k):
                members = points[new_labels == c]
                if len(members) == 0:
                    # reseed an empty cluster on the farthest point
                    far = int(d2.min(axis=1).argmax())
                    centroids[c] = points[far]
                    new_labels[far] = c
                else:
                    centroids[c] = members.mean(axis=0)
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        inertia = float(((points - centroids[labels]) ** 2).sum())
        if best is None or inertia < best[0] - 1e-15:
            best = (inertia, labels.copy(), centroids.copy())
    return best[1], best[2], best[0]


@dataclass(frozen=True)
class ClusterReport:
    ids: tuple[str, ...]
    k: int
    sigma: float
    embedding: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray
    feature: np.ndarray
    seed: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "k": self.k,
            "sigma": self.sigma,
            "embedding": self.embedding.tolist(),
            "labels": self.labels.tolist(),
            "centroids": self.centroids.tolist(),
            "feature": self.feature.tolist(),
            "seed": self.seed,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterReport":
        return cls(
            tuple(d["ids"]), d["k"], d["sigma"], np.array(d["embedding"]),
            np.array(d["labels"]), np.array(d["centroids"]), np.array(d["feature"]),
            d["seed"], d.get("degenerate", False),
        )


def _relabel_by_size(labels: np.ndarray, k: int) -> np.ndarray:
    """Label 0 becomes the largest cluster; ties go to the lower first-member index."""
    stats = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        first = int(members[0]) if len(members) else len(labels)
        stats.append((-len(members), first, c))
    order = [c for _, _, c in sorted(stats)]
    remap = {old: new for new, old in enumerate(order)}
    return np.array([remap[int(c)] for c in labels], dtype=np.int64)


def spectral_cluster(dm: DistanceMatrix, k: int = 2, seed: int = 0) -> ClusterReport:
    """Normalized spectral clustering of a distance matrix into k basins."""
    n = len(dm)
    if not (2 <= k < n):
        raise ValueError("need 2 <= k < number of models")
    d = dm.matrix
    off = d[np.triu_indices(n, 1)]
    sigma = float(np.median(off))
    if sigma == 0.0:
        # the majority of pairs sit at zero distance: no usable bandwidth,
        # report one basin rather than clusters cut from nothing
        return ClusterReport(
            dm.ids, 1, 0.0, np.zeros((n, 1)), np.zeros(n, dtype=np.int64),
            np.zeros((1, 1)), np.zeros(n), seed, degenerate=True,
        )

    w = np.exp(-(d**2) / (2.0 * sigma**2))
    deg = w.sum(axis=1)
    lap = np.eye(n) - w / np.sqrt(np.outer(deg, deg))
    lap = (lap + lap.T) / 2.0
    _, vecs = jacobi_eigh(lap)
    emb = vecs[:, :k].copy()
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)

    labels, _, _ = kmeans(emb, k, seed)
    labels = _relabel_by_size(labels, k)
    centroids = np.array([emb[labels == c].mean(axis=0) for c in range(k)])
    feature = np.linalg.norm(emb - centroids[0], axis=1) - np.linalg.norm(emb - centroids[1], axis=1)
    return ClusterReport(dm.ids, k, sigma, emb, labels, centroids, feature, seed)


def pearson(x, y) -> float:
    """Sample Pearson correlation; NaN flags zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two sequences of equal length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc**2).sum() * (yc**2).sum())
    if denom == 0.0:
        return float("nan")
    return float((xc * yc).sum() / denom)


def least_squares_fit(x, y) -> tuple[float, float, float]:
    """(slope, intercept, r) of the least-squares line; x must vary."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two sequences of equal length >= 2")
    xc = x - x.mean()
    sxx = (xc**2).sum()
    if sxx == 0.0:
        raise ValueError("zero variance in x")
    slope = float((xc * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * x.mean())
    return slope, intercept, pearson(x, y)


@dataclass(frozen=True)
class StatsReport:
    cluster_sizes: tuple[int, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    mean_ratio: float | None
    max_ratio: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def cluster_stats(labels, values) -> StatsReport:
    """Per-cluster mean/std (population) and the two separation ratios.

    C1 is the larger cluster. mean_ratio = (mu1 - mu2)/sigma1 and
    max_ratio = (mu1 - max over C2)/sigma1; both None when sigma1 == 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    uniq = sorted(set(int(c) for c in labels))
    groups = {c: values[labels == c] for c in uniq}
    if any(len(g) == 0 for g in groups.values()) or len(uniq) < 2:
        raise ValueError("need at least two nonempty clusters")
    order = sorted(uniq, key=lambda c: (-len(groups[c]), int(np.flatnonzero(labels == c)[0])))
    c1, c2 = order[0], order[1]
    means = tuple(float(groups[c].mean()) for c in (c1, c2))
    stds = tuple(float(groups[c].std()) for c in (c1, c2))
    sizes = tuple(int(len(groups[c])) for c in (c1, c2))
    if stds[0] == 0.0:
        mean_ratio = max_ratio = None
    else:
        mean_ratio = (means[0] - means[1]) / stds[0]
        max_ratio = (means[0] - float(groups[c2].max())) / stds[0]
    return StatsReport(sizes, means, stds, mean_ratio, max_ratio)


def correlation_matrix(acc_table: np.ndarray, split_names) -> tuple[np.ndarray, list[str]]:
    """Pairwise Pearson correlation of per-model accuracies across splits.

    acc_table has one row per model, one column per split. Returns the
    symmetric matrix (unit diagonal) and the names of zero-variance splits,
    whose rows/columns are NaN off the diagonal.
    """
    acc_table = np.asarray(acc_table, dtype=np.float64)
    n_models, n_splits = acc_table.shape
    if n_models < 3 or n_splits < 2:
        raise ValueError("need at least 3 models and 2 splits")
    out = np.eye(n_splits)
    flagged = [str(split_names[j]) for j in range(n_splits) if acc_table[:, j].std() == 0.0]
    for i in range(n_splits):
        for j in range(i + 1, n_splits):
            out[i, j] = out[j, i] = pearson(acc_table[:, i], acc_table[:, j])
    return out, flagged


@dataclass(frozen=True)
class DynamicsReport:
    stages: tuple[str, ...]
    reports: tuple[ClusterReport, ...]
    aligned_labels: np.ndarray  # (n_stages, n_models)
    aligned_features: np.ndarray
    ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "stages": list(self.stages),
            "ids": list(self.ids),
            "aligned_labels": self.aligned_labels.tolist(),
            "trajectories": {
                rid: self.aligned_features[:, i].tolist() for i, rid in enumerate(self.ids)
            },
            "reports": [r.to_dict() for r in self.reports],
        }


def _best_alignment(prev: np.ndarray, cur: np.ndarray, k: int) -> dict[int, int]:
    """Permutation of cur labels maximizing member overlap with prev.

    Ties prefer the identity (then lexicographic order) so earlier-stage label
    conventions persist.
    """
    from itertools import permutations

    best_perm, best_key = None, None
    for perm in permutations(range(k)):
        score = int(np.sum(prev == np.array([perm[c] for c in cur])))
        key = (score, perm == tuple(range(k)), tuple(-p for p in perm))
        if best_key is None or key > best_key:
            best_perm, best_key = perm, key
    return {c: best_perm[c] for c in range(k)}


def dynamics(stage_matrices: dict[str, DistanceMatrix], k: int = 2, seed: int = 0) -> DynamicsReport:
    """Cluster each training stage and align labels across consecutive stages."""
    stages = list(stage_matrices.keys())
    if not stages:
        raise ValueError("need at least one stage")
    ids = stage_matrices[stages[0]].ids
    for name, dm in stage_matrices.items():
        if dm.ids != ids:
            raise ValueError(f"stage {name!r} has a different run set")
    reports = [spectral_cluster(stage_matrices[s], k, seed) for s in stages]

    aligned = np.zeros((len(stages), len(ids)), dtype=np.int64)
    features = np.zeros((len(stages), len(ids)))
    aligned[0] = reports[0].labels
    features[0] = reports[0].feature
    for s in range(1, len(stages)):
        cur = reports[s]
        k_eff = max(cur.k, 1)
        if cur.degenerate or reports[s - 1].degenerate or k_eff < 2:
            aligned[s] = cur.labels
            features[s] = cur.feature
            continue
        mapping = _best_alignment(aligned[s - 1], cur.labels, k)
        aligned[s] = np.array([mapping[int(c)] for c in cur.labels])
        # feature sign follows the label convention: swapping c1/c2 flips it
        flip = -1.0 if mapping.get(0, 0) != 0 else 1.0
        features[s] = flip * cur.feature
    return DynamicsReport(tuple(stages), tuple(reports), aligned, features, ids)
