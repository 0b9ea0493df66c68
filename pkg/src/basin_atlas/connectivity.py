"""Loss curves along linear paths and the connectivity metrics over them.

The continuous suprema behind barrier height and the convexity gap are
estimated on the sampled alpha grid (default 11 points, spacing 1/10). Grid
weights are mirrored per index, i.e. the point at alpha_i is
alphas[i]*a + alphas[n-1-i]*b, which makes reversing the endpoints reverse
the sampled points bit-for-bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .params import Checkpoint, ParamVector, free_vector, weighted_pair


@dataclass(frozen=True)
class LossCurve:
    alphas: np.ndarray
    losses: np.ndarray
    accuracies: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    id_a: str = "a"
    id_b: str = "b"

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        losses = np.asarray(self.losses, dtype=np.float64)
        if len(alphas) != len(losses):
            raise ValueError("alphas and losses lengths differ")
        if len(alphas) < 2 or alphas[0] != 0.0 or alphas[-1] != 1.0:
            raise ValueError("alphas must run from 0 to 1")
        if np.any(np.diff(alphas) <= 0):
            raise ValueError("alphas must be strictly increasing")
        if not np.all(np.isfinite(losses)):
            raise ValueError("losses must be finite")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "losses", losses)
        if self.accuracies is not None:
            accs = np.asarray(self.accuracies, dtype=np.float64)
            if len(accs) != len(alphas):
                raise ValueError("accuracies length differs")
            object.__setattr__(self, "accuracies", accs)

    def __len__(self) -> int:
        return len(self.alphas)

    def reversed(self) -> "LossCurve":
        accs = None if self.accuracies is None else self.accuracies[::-1]
        return LossCurve(self.alphas, self.losses[::-1], accs, dict(self.meta), self.id_b, self.id_a)


def grid_alphas(n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least 2 path samples")
    return np.array([i / (n - 1) for i in range(n)])


def _as_param_vector(x) -> ParamVector:
    if isinstance(x, Checkpoint):
        return x.params
    if isinstance(x, ParamVector):
        return x
    return free_vector(x)


def _endpoint_id(x, default):
    if isinstance(x, Checkpoint):
        return str(x.meta.get("run_id", default))
    return default


def eval_path_fn(a, b, n: int, loss_fn, acc_fn=None, meta=None) -> LossCurve:
    """Sample losses along the segment; alpha=0 is b, alpha=1 is a (Eq.-style)."""
    pa, pb = _as_param_vector(a), _as_param_vector(b)
    alphas = grid_alphas(n)
    losses, accs = [], []
    for i in range(n):
        point = weighted_pair(pa, pb, alphas[i], alphas[n - 1 - i])
        losses.append(float(loss_fn(point)))
        if acc_fn is not None:
            accs.append(float(acc_fn(point)))
    return LossCurve(
        alphas,
        np.array(losses),
        np.array(accs) if acc_fn is not None else None,
        meta or {},
        _endpoint_id(a, "a"),
        _endpoint_id(b, "b"),
    )


def eval_linear_path(a, b, n: int, eval_batch, config) -> LossCurve:
    """LossCurve between two checkpoints on a fixed, shared evaluation sample."""
    from .training import evaluate_batch

    # loss_fn and acc_fn are called back to back on the same live point object,
    # so memoizing just the previous point (by identity) evaluates each once
    memo = {"point": None, "stats": None}

    def stats(point):
        if memo["point"] is not point:
            memo["point"] = point
            memo["stats"] = evaluate_batch(point, config, eval_batch)
        return memo["stats"]

    meta = {"n_samples": len(eval_batch), "resolution": n}
    return eval_path_fn(a, b, n, lambda p: stats(p)[0], lambda p: stats(p)[1], meta)


def barrier_height(curve: LossCurve) -> float:
    """Max rise of the sampled losses above the endpoint chord; >= 0."""
    n = len(curve)
    l0, l1 = curve.losses[0], curve.losses[-1]
    best = 0.0
    for i in range(n):
        chord = curve.alphas[i] * l1 + curve.alphas[n - 1 - i] * l0
        best = max(best, curve.losses[i] - chord)
    return best


def convexity_gap(curve: LossCurve) -> float:
    """Max barrier height over every sampled sub-segment (exhaustive triples)."""
    a, l = curve.alphas, curve.losses
    n = len(curve)
    best = 0.0
    for i in range(n):
        for j in range(i + 2, n):
            span = a[j] - a[i]
            for k in range(i + 1, j):
                chord = ((a[j] - a[k]) * l[i] + (a[k] - a[i]) * l[j]) / span
                best = max(best, l[k] - chord)
    return best


def auc(curve: LossCurve) -> float:
    """Trapezoidal area under the curve after shifting its minimum to zero."""
    shifted = curve.losses - curve.losses.min()
    da = np.diff(curve.alphas)
    return float((da * (shifted[:-1] + shifted[1:]) / 2).sum())


METRICS = {"bh": barrier_height, "cg": convexity_gap, "auc": auc}


@dataclass(frozen=True)
class BasinCheckReport:
    epsilon: float
    n_combos: int
    max_violation: float
    passed: bool
    worst_weights: tuple[float, ...]
    worst_members: tuple[int, ...]
    pairwise_cg_max: float | None = None
    theorem_counterexamples: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if self.passed != (self.max_violation <= self.epsilon):
            raise ValueError("pass flag must equal (max violation <= epsilon)")


def epsilon_basin_check_fn(points, loss_fn, epsilon: float, n_combos: int, seed: int,
                           cg_resolution: int = 11) -> BasinCheckReport:
    """Sampled relaxed-Jensen check over the convex hull of the points.

    Deterministic pairwise grid combinations are always evaluated, plus
    n_combos seeded flat-Dirichlet draws over random subsets of 2..k points.
    If the check passes, pairwise convexity gaps on the same grid are compared
    against epsilon as the accompanying theorem predicts; any pair exceeding
    epsilon + 1e-9 is recorded as a counterexample.
    """
    vecs = [_as_param_vector(p) for p in points]
    k = len(vecs)
    point_losses = [float(loss_fn(v)) for v in vecs]
    max_violation = 0.0
    worst = ((1.0,), (0,))

    if k == 1:
        return BasinCheckReport(epsilon, 0, 0.0, True, (1.0,), (0,))

    alphas = grid_alphas(cg_resolution)
    n = cg_resolution
    for i in range(k):
        for j in range(i + 1, k):
            for t in range(1, n - 1):
                w_i, w_j = alphas[n - 1 - t], alphas[t]
                point = weighted_pair(vecs[i], vecs[j], w_i, w_j)
                violation = float(loss_fn(point)) - (w_i * point_losses[i] + w_j * point_losses[j])
                if violation > max_violation:
                    max_violation = violation
                    worst = ((w_i, w_j), (i, j))

    rng = np.random.default_rng(seed)
    for _ in range(n_combos):
        m = int(rng.integers(2, k + 1))
        members = tuple(int(x) for x in rng.choice(k, size=m, replace=False))
        weights = rng.dirichlet(np.ones(m))
        weights = weights / weights.sum()
        acc = weights[0] * vecs[members[0]].values
        expected = weights[0] * point_losses[members[0]]
        for w, idx in zip(weights[1:], members[1:]):
            acc = acc + w * vecs[idx].values
            expected += w * point_losses[idx]
        combo = vecs[0].with_values(acc)
        violation = float(loss_fn(combo)) - expected
        if violation > max_violation:
            max_violation = violation
            worst = (tuple(float(w) for w in weights), members)

    passed = max_violation <= epsilon
    pairwise_max = None
    counterexamples = []
    if passed:
        pairwise_max = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                curve = eval_path_fn(vecs[i], vecs[j], cg_resolution, loss_fn)
                cg = convexity_gap(curve)
                pairwise_max = max(pairwise_max, cg)
                if cg > epsilon + 1e-9:
                    counterexamples.append((i, j, cg))
    return BasinCheckReport(
        epsilon, n_combos, max_violation, passed,
        tuple(float(w) for w in worst[0]), tuple(worst[1]),
        pairwise_max, tuple(counterexamples),
    )


def epsilon_basin_check(models, epsilon: float, n_combos: int, seed: int,
                        eval_batch, config, cg_resolution: int = 11) -> BasinCheckReport:
    """Checkpoint-facing wrapper; the loss is the shared-sample cross-entropy."""
    from .training import evaluate_batch

    return epsilon_basin_check_fn(
        models,
        lambda p: evaluate_batch(p, config, eval_batch)[0],
        epsilon, n_combos, seed, cg_resolution,
    )


def curve_to_csv(curve: LossCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "loss", "accuracy"])
    for i in range(len(curve)):
        acc = "" if curve.accuracies is None else repr(float(curve.accuracies[i]))
        writer.writerow([repr(float(curve.alphas[i])), repr(float(curve.losses[i])), acc])
    return buf.getvalue()


def curve_from_csv(text: str, id_a="a", id_b="b", meta=None) -> LossCurve:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    alphas = [float(r[0]) for r in body]
    losses = [float(r[1]) for r in body]
    accs = [float(r[2]) for r in body] if all(len(r) > 2 and r[2] != "" for r in body) else None
    return LossCurve(np.array(alphas), np.array(losses),
                     None if accs is None else np.array(accs), meta or {}, id_a, id_b)


def save_curve(curve: LossCurve, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(curve_to_csv(curve))


def load_curve(path) -> LossCurve:
    with open(path, "r", encoding="utf-8") as fh:
        return curve_from_csv(fh.read())
