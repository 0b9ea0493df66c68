"""Sharpness, planar loss surfaces, and segmented low-loss curve fitting."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .connectivity import LossCurve, eval_path_fn, grid_alphas
from .params import Checkpoint, ParamVector, free_vector


@dataclass(frozen=True)
class SharpnessConfig:
    epsilon: float = 1e-5
    ascent_steps: int = 8192
    ascent_lr: float = 8e-5
    batch_size: int = 32
    grad_accum: int = 4
    eval_sample_size: int = 32768
    eval_every: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.ascent_steps < 1:
            raise ValueError("ascent_steps must be >= 1")


def _vec(x) -> np.ndarray:
    if isinstance(x, Checkpoint):
        return x.params.values
    if isinstance(x, ParamVector):
        return x.values
    return np.asarray(x, dtype=np.float64).ravel()


def sharpness_ascent(x, loss_fn, grad_fn, cfg: SharpnessConfig) -> float:
    """Projected gradient ascent inside the box |y_i| <= eps*(|x_i|+1).

    loss_fn/grad_fn see the perturbed full vector x+y. grad_fn may be
    stochastic (mini-batch); the reported maximum uses loss_fn, evaluated
    every eval_every steps and at the end. Result is
    100*(max loss - loss(x))/(1 + loss(x)), floored at 0 since y=0 is feasible.
    """
    x = _vec(x)
    radius = cfg.epsilon * (np.abs(x) + 1.0)
    base = float(loss_fn(x))
    if not np.isfinite(base):
        raise ValueError("non-finite base loss")
    best = base
    y = np.zeros_like(x)
    for step in range(1, cfg.ascent_steps + 1):
        g = grad_fn(x + y, step)
        y = np.clip(y + cfg.ascent_lr * g, -radius, radius)
        if step % cfg.eval_every == 0 or step == cfg.ascent_steps:
            cur = float(loss_fn(x + y))
            if not np.isfinite(cur):
                raise ValueError(f"non-finite loss during ascent at step {step}")
            best = max(best, cur)
    return 100.0 * (best - base) / (1.0 + base)


def epsilon_sharpness(params, split, cfg: SharpnessConfig, spec, model_config) -> float:
    """Model-facing sharpness: ascent batches drawn from the fixed eval sample."""
    from .model import Batch  # noqa: F401  (type context)
    from .training import draw_eval_sample, evaluate_batch
    from .model import loss_and_gradient

    n = min(cfg.eval_sample_size, len(split))
    sample = draw_eval_sample(split, n, cfg.seed, spec, model_config)
    pv = params.params if isinstance(params, Checkpoint) else params
    manifest = pv.manifest
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7_919]))

    def loss_fn(vals):
        return evaluate_batch(ParamVector(manifest, vals), model_config, sample)[0]

    def grad_fn(vals, step):
        acc = np.zeros_like(vals)
        for _ in range(cfg.grad_accum):
            idx = rng.integers(0, len(sample), size=cfg.batch_size)
            _, g = loss_and_gradient(ParamVector(manifest, vals), model_config, sample.take(idx))
            acc += g.values
        return acc / cfg.grad_accum

    return sharpness_ascent(pv.values, loss_fn, grad_fn, cfg)


@dataclass(frozen=True)
class PlaneBasis:
    origin: ParamVector
    u: np.ndarray
    v: np.ndarray
    scale_unit: float
    anchor_coords: tuple[tuple[float, float], ...]

    def point_at(self, x: float, y: float) -> ParamVector:
        vals = self.origin.values + (x * self.scale_unit) * self.u + (y * self.scale_unit) * self.v
        return self.origin.with_values(vals)


def plane_basis(p1, p2, p3) -> PlaneBasis:
    """Orthonormal basis of the unique plane through three anchors.

    Plot units: p1 at (0,0), p2 at (1,0); one unit equals |p2-p1| on both axes.
    """
    v1, v2, v3 = _vec(p1), _vec(p2), _vec(p3)
    d21 = v2 - v1
    scale = float(np.linalg.norm(d21))
    if scale == 0.0:
        raise ValueError("p1 and p2 coincide")
    u = d21 / scale
    d31 = v3 - v1
    proj = float(d31 @ u)
    residual = d31 - proj * u
    res_norm = float(np.linalg.norm(residual))
    if res_norm <= 1e-12 * max(scale, float(np.linalg.norm(d31))):
        raise ValueError("anchors are collinear")
    v = residual / res_norm
    origin = p1.params if isinstance(p1, Checkpoint) else (p1 if isinstance(p1, ParamVector) else free_vector(v1))
    coords = ((0.0, 0.0), (1.0, 0.0), (proj / scale, res_norm / scale))
    return PlaneBasis(origin, u, v, scale, coords)


@dataclass(frozen=True)
class PlaneGrid:
    basis: PlaneBasis
    xs: np.ndarray
    ys: np.ndarray
    losses: np.ndarray  # shape (len(ys), len(xs))
    meta: dict = field(default_factory=dict)


def plane_loss_surface(basis: PlaneBasis, x_range, y_range, resolution: int,
                       loss_fn, meta=None) -> PlaneGrid:
    """Loss on a regular grid over the plane, one fixed eval sample throughout."""
    xs = np.linspace(x_range[0], x_range[1], resolution)
    ys = np.linspace(y_range[0], y_range[1], resolution)
    losses = np.zeros((resolution, resolution))
    for yi, y in enumerate(ys):
        for xi, x in enumerate(xs):
            losses[yi, xi] = float(loss_fn(basis.point_at(float(x), float(y))))
    return PlaneGrid(basis, xs, ys, losses, meta or {})


def plane_grid_to_csv(grid: PlaneGrid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "loss"])
    for yi in range(len(grid.ys)):
        for xi in range(len(grid.xs)):
            writer.writerow([repr(float(grid.xs[xi])), repr(float(grid.ys[yi])),
                             repr(float(grid.losses[yi, xi]))])
    return buf.getvalue()


def plane_grid_sidecar(grid: PlaneGrid) -> str:
    return json.dumps(
        {
            "scale_unit": grid.basis.scale_unit,
            "anchor_coords": [list(c) for c in grid.basis.anchor_coords],
            "x_range": [float(grid.xs[0]), float(grid.xs[-1])],
            "y_range": [float(grid.ys[0]), float(grid.ys[-1])],
            "resolution": len(grid.xs),
            "meta": grid.meta,
        },
        sort_keys=True,
        indent=2,
    )


@dataclass(frozen=True)
class PolyChain:
    """Piecewise-linear path with fixed endpoints and k interior bends."""

    nodes: tuple[ParamVector, ...]  # (a, bend_1, ..., bend_k, b)

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ValueError("chain needs both endpoints")

    @property
    def k_bends(self) -> int:
        return len(self.nodes) - 2

    def segment_at(self, t: float) -> tuple[int, float]:
        segs = len(self.nodes) - 1
        if t >= 1.0:
            return segs - 1, 1.0
        u = t * segs
        s = int(u)
        return s, u - s

    def point_at(self, t: float) -> ParamVector:
        s, local = self.segment_at(t)
        a, b = self.nodes[s], self.nodes[s + 1]
        return a.with_values((1.0 - local) * a.values + local * b.values)


def init_chain(a, b, k_bends: int) -> PolyChain:
    """Bends on the straight segment at uniform fractions."""
    pa = a.params if isinstance(a, Checkpoint) else a
    pb = b.params if isinstance(b, Checkpoint) else b
    nodes = [pa]
    for s in range(1, k_bends + 1):
        f = s / (k_bends + 1)
        nodes.append(pa.with_values(pa.values + f * (pb.values - pa.values)))
    nodes.append(pb)
    return PolyChain(tuple(nodes))


def fit_low_loss_curve(a, b, k_bends: int, fit_steps: int, fit_lr: float,
                       grad_fn, seed: int, noise_scale: float = 0.005) -> PolyChain:
    """Stochastic fitting of the interior bends to minimize loss along the chain.

    Each step samples t uniformly, takes a gradient step on the two nodes
    bounding t (endpoints never move), and adds a small seeded exploration
    kick that anneals to zero over the first tenth of fitting. The kick breaks
    the symmetry of saddle configurations that an on-segment initialization
    cannot escape by gradient alone; segment coupling keeps neighboring bends
    on the same side once the symmetry is broken.
    """
    if k_bends < 1:
        raise ValueError("k_bends must be >= 1")
    chain = init_chain(a, b, k_bends)
    nodes = [n.values.copy() for n in chain.nodes]
    manifest = chain.nodes[0].manifest
    span = float(np.linalg.norm(nodes[-1] - nodes[0]))
    rng = np.random.default_rng(seed)
    last = len(nodes) - 1
    noise_steps = max(1, fit_steps // 10)
    for step in range(fit_steps):
        t = float(rng.uniform())
        s, local = chain.segment_at(t)
        point = (1.0 - local) * nodes[s] + local * nodes[s + 1]
        g = _vec(grad_fn(ParamVector(manifest, point)))
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient during chain fitting at step {step}")
        sigma = noise_scale * span * max(0.0, 1.0 - step / noise_steps)
        for node_idx, weight in ((s, 1.0 - local), (s + 1, local)):
            if node_idx == 0 or node_idx == last:
                continue
            nodes[node_idx] = nodes[node_idx] - fit_lr * weight * g
            if sigma > 0.0:
                nodes[node_idx] = nodes[node_idx] + rng.normal(0.0, sigma, size=len(point))
    fitted = [chain.nodes[0]]
    fitted += [ParamVector(manifest, n) for n in nodes[1:-1]]
    fitted.append(chain.nodes[-1])
    return PolyChain(tuple(fitted))


def eval_chain_path(chain: PolyChain, n_points: int, loss_fn, acc_fn=None, meta=None) -> LossCurve:
    """LossCurve along the chain at uniform t (stored in the alphas field)."""
    if chain.k_bends == 0:
        # bit-exact agreement with the straight-path evaluator
        return eval_path_fn(chain.nodes[-1], chain.nodes[0], n_points, loss_fn, acc_fn, meta)
    ts = grid_alphas(n_points)
    losses, accs = [], []
    for t in ts:
        point = chain.point_at(float(t))
        losses.append(float(loss_fn(point)))
        if acc_fn is not None:
            accs.append(float(acc_fn(point)))
    return LossCurve(ts, np.array(losses), np.array(accs) if acc_fn is not None else None,
                     meta or {}, "chain_start", "chain_end")
