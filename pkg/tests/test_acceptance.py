"""Acceptance suite: each test prints one PASS line when its criterion holds.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The heavy sweep fixtures are shared across criteria 7, 8, and 12.
"""

import json
import time

import numpy as np
import pytest

from basin_atlas.analysis import (
    cluster_stats,
    pairwise_matrix,
    pearson,
    spectral_cluster,
    dynamics,
)
from basin_atlas.connectivity import (
    auc,
    barrier_height,
    convexity_gap,
    epsilon_basin_check_fn,
    eval_linear_path,
    eval_path_fn,
    grid_alphas,
    LossCurve,
)
from basin_atlas.geometry import (
    SharpnessConfig,
    eval_chain_path,
    fit_low_loss_curve,
    sharpness_ascent,
)
from basin_atlas.model import ModelConfig, forward, gradient, init_params, loss_acc
from basin_atlas.params import free_vector
from basin_atlas.tasks import TaskSpec, encode_batch, gen_forced_fixture, gen_split
from basin_atlas.training import (
    TrainConfig,
    draw_eval_sample,
    finetune,
    pretrain_body,
)


def report(criterion, message):
    print(f"\nACCEPTANCE {criterion}: PASS - {message}")


# ---------------------------------------------------------------- shared sweeps

MODEL = ModelConfig()
SIZES = {"train": 20000, "id_val": 4000, "diagnostic": 1000, "pretrain": 20000}
# library-default task (rare heuristic-violating evidence)
SPEC = TaskSpec(split_sizes=SIZES, seed=7)
# forced-basin sweep task: enough heuristic-violating evidence that unforced
# runs keep the behavior their weight-space neighborhood predicts
SPEC_PHENOM = TaskSpec(split_sizes=SIZES, seed=7, n2_fraction_of_negatives=0.20)
SWEEP_TRAIN = TrainConfig(optimizer="sgd", base_lr=0.5, epochs=3, mode="lp_ft", lp_head_steps=300)
PRETRAIN = TrainConfig(optimizer="adamw", base_lr=1e-3, epochs=5)
EVAL_N, EVAL_SEED, RESOLUTION = 512, 0, 11


@pytest.fixture(scope="module")
def task_data():
    pre_spec = TaskSpec(**{**SPEC.to_dict(), "n2_fraction_of_negatives": 0.40})
    return {
        "train": gen_split(SPEC, "train", SPEC.seed),
        "id_val": gen_split(SPEC, "id_val", SPEC.seed),
        "diagnostic": gen_split(SPEC, "diagnostic", SPEC.seed),
        "pretrain": gen_split(pre_spec, "pretrain", SPEC.seed),
    }


@pytest.fixture(scope="module")
def phenom_data():
    return {
        "train": gen_split(SPEC_PHENOM, "train", SPEC_PHENOM.seed),
        "id_val": gen_split(SPEC_PHENOM, "id_val", SPEC_PHENOM.seed),
        "diagnostic": gen_split(SPEC_PHENOM, "diagnostic", SPEC_PHENOM.seed),
        "fixture_heuristic": gen_forced_fixture(SPEC_PHENOM, "heuristic", SPEC_PHENOM.seed),
        "fixture_generalizing": gen_forced_fixture(SPEC_PHENOM, "generalizing", SPEC_PHENOM.seed),
    }


@pytest.fixture(scope="module")
def shared_body(task_data):
    # the pretraining sample is task-agnostic; both sweeps start from it
    return pretrain_body(PRETRAIN, MODEL, SPEC, task_data["pretrain"], body_seed=0)


@pytest.fixture(scope="module")
def eval_batch(task_data):
    return draw_eval_sample(task_data["id_val"], EVAL_N, EVAL_SEED, SPEC, MODEL)


@pytest.fixture(scope="module")
def phenom_eval_batch(phenom_data):
    return draw_eval_sample(phenom_data["id_val"], EVAL_N, EVAL_SEED, SPEC_PHENOM, MODEL)


@pytest.fixture(scope="module")
def fixture_sweep(phenom_data, shared_body):
    """24 runs: 8 heuristic-forced, 8 generalizing-forced, 8 unforced."""
    jobs = (
        [("heuristic", phenom_data["fixture_heuristic"])] * 8
        + [("generalizing", phenom_data["fixture_generalizing"])] * 8
        + [(None, phenom_data["train"])] * 8
    )
    runs = []
    for i, (strategy, split) in enumerate(jobs):
        rec, cks = finetune(
            shared_body, 100 + i, 100 + i, SWEEP_TRAIN, MODEL, SPEC_PHENOM, split,
            eval_splits={"diagnostic": phenom_data["diagnostic"]}, run_id=f"m{i:02d}",
        )
        assert not rec.failed
        runs.append({
            "strategy": strategy,
            "checkpoints": cks,
            "diag_acc": rec.final_metrics["diagnostic"]["accuracy"],
        })
    return runs


@pytest.fixture(scope="module")
def fixture_matrix(fixture_sweep, phenom_eval_batch):
    cks = [r["checkpoints"]["final"] for r in fixture_sweep]
    return pairwise_matrix(cks, "cg", phenom_eval_batch, MODEL, resolution=RESOLUTION)


# ---------------------------------------------------------------- criteria


def test_01_metric_oracle_suite():
    """BH, CG, AUC on handcrafted curves vs exhaustive brute force, 1e-12."""
    t0 = time.time()

    def oracle_bh(alphas, losses):
        l0, l1 = losses[0], losses[-1]
        return max(0.0, max(l - (a * l1 + (1 - a) * l0) for a, l in zip(alphas, losses)))

    def oracle_cg(alphas, losses):
        best = 0.0
        for i in range(len(losses)):
            for j in range(i + 1, len(losses)):
                for k in range(i + 1, j):
                    chord = np.interp(alphas[k], [alphas[i], alphas[j]], [losses[i], losses[j]])
                    best = max(best, losses[k] - chord)
        return best

    def oracle_auc(alphas, losses):
        shifted = [l - min(losses) for l in losses]
        return sum(
            (alphas[i + 1] - alphas[i]) * (shifted[i] + shifted[i + 1]) / 2
            for i in range(len(losses) - 1)
        )

    handcrafted = [
        [0.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [4.0, 1.0, 0.0, 1.0, 4.0],
        [0.0, 0.2, 0.1, 0.5, 0.3],
        [1.0, 1.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
        [2.0, 1.0, 3.0, 1.0, 2.0],
        [0.5, 0.4, 0.3, 0.2, 0.1],
        [0.1, 0.2, 0.3, 0.4, 0.5],
        [1.0, 0.5, 0.25, 0.5, 1.0],
        [3.0, 0.0, 3.0, 0.0, 3.0],
        [0.0, 1.0, 2.0, 1.0, 0.0],
        [5.0, 4.0, 4.5, 4.0, 5.0],
        [0.7, 0.7, 0.8, 0.7, 0.7],
        [1e-6, 2e-6, 1e-6],
        [10.0, 0.1, 10.0],
        [0.3, 0.1, 0.4, 0.1, 0.5, 0.9, 0.2],
        [2.0, 2.0],
        [1.0, 3.0],
        [0.0, 0.25, 1.0, 0.25, 0.0],
    ]
    rng = np.random.default_rng(123)
    for _ in range(10):
        handcrafted.append(rng.uniform(0, 4, size=int(rng.integers(2, 13))).tolist())

    assert len(handcrafted) >= 20
    checked = 0
    for losses in handcrafted:
        c = LossCurve(grid_alphas(len(losses)), np.asarray(losses, dtype=np.float64))
        assert abs(barrier_height(c) - oracle_bh(c.alphas, c.losses)) <= 1e-12
        assert abs(convexity_gap(c) - oracle_cg(c.alphas, c.losses)) <= 1e-12
        assert abs(auc(c) - oracle_auc(c.alphas, c.losses)) <= 1e-12
        checked += 1

    spec_case = LossCurve(grid_alphas(5), np.array([0.0, 0.2, 0.1, 0.5, 0.3]))
    assert abs(convexity_gap(spec_case) - 0.3) <= 1e-12
    shift_case = LossCurve(grid_alphas(3), np.array([1.5, 0.5, 1.5]))
    assert abs(auc(shift_case) - oracle_auc(shift_case.alphas, shift_case.losses)) <= 1e-12

    elapsed = time.time() - t0
    assert elapsed < 1.0
    report(1, f"{checked} curves match brute-force oracles to 1e-12 in {elapsed:.2f}s")


def test_02_theorem_basin_property():
    """Convex loss passes the basin check; the double-well fails below 1."""
    t0 = time.time()
    rng = np.random.default_rng(2)
    points = [free_vector(rng.normal(size=2)) for _ in range(10)]
    convex_loss = lambda p: float(np.sum(p.values**2))
    rep = epsilon_basin_check_fn(points, convex_loss, 1e-9, 256, seed=0)
    assert rep.passed
    assert rep.pairwise_cg_max is not None and rep.pairwise_cg_max <= 1e-9
    assert rep.theorem_counterexamples == ()
    for i in range(10):
        for j in range(i + 1, 10):
            cg = convexity_gap(eval_path_fn(points[i], points[j], RESOLUTION, convex_loss))
            assert cg <= 1e-9

    well = lambda p: float((p.values[0] ** 2 - 1.0) ** 2)
    endpoints = [free_vector([-1.0]), free_vector([1.0])]
    cg = convexity_gap(eval_path_fn(endpoints[0], endpoints[1], RESOLUTION, well))
    assert abs(cg - 1.0) <= 1e-9
    for eps in (0.999, 0.5, 0.1):
        assert not epsilon_basin_check_fn(endpoints, well, eps, 64, seed=0).passed

    elapsed = time.time() - t0
    assert elapsed < 1.0
    report(2, f"convex basin passes at 1e-9; double-well CG={cg:.12f}, fails below 1 ({elapsed:.2f}s)")


def test_03_refinement_monotonicity(eval_batch):
    """CG on the nested 21-point grid never falls below the 11-point grid."""
    t0 = time.time()
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(100):
        a = init_params(MODEL, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
        b = init_params(MODEL, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
        coarse = convexity_gap(eval_linear_path(a, b, 11, eval_batch, MODEL))
        fine = convexity_gap(eval_linear_path(a, b, 21, eval_batch, MODEL))
        if not fine >= coarse:  # exact comparison: shared grid points are bitwise equal
            violations += 1
    elapsed = time.time() - t0
    assert violations == 0
    assert elapsed < 300
    report(3, f"CG(n=21) >= CG(n=11) exactly on 100 random pairs ({elapsed:.1f}s)")


def test_04_endpoint_identity(eval_batch):
    """Curve endpoints equal direct evaluation under the shared 512-sample protocol."""
    from basin_atlas.training import evaluate_batch

    rng = np.random.default_rng(4)
    for _ in range(20):
        a = init_params(MODEL, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
        b = init_params(MODEL, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
        curve = eval_linear_path(a, b, RESOLUTION, eval_batch, MODEL)
        loss_a, _ = evaluate_batch(a, MODEL, eval_batch)
        loss_b, _ = evaluate_batch(b, MODEL, eval_batch)
        assert abs(curve.losses[0] - loss_b) <= 1e-12
        assert abs(curve.losses[-1] - loss_a) <= 1e-12
    report(4, "20 random pairs: endpoint losses equal direct evaluation to 1e-12")


def test_05_gradient_correctness(task_data):
    """Backprop vs central differences: 200 draws, 64 coordinates each."""
    rng = np.random.default_rng(5)
    split = task_data["id_val"]
    worst = 0.0
    for _ in range(200):
        params = init_params(MODEL, int(rng.integers(1 << 30)), int(rng.integers(1 << 30)))
        idx = rng.choice(len(split), size=8, replace=False)
        batch = encode_batch([split.examples[i] for i in idx], SPEC, MODEL)
        g = gradient(params, MODEL, batch).values
        vals = params.values
        for coord in rng.choice(len(vals), size=64, replace=False):
            e = np.zeros_like(vals)
            e[coord] = 1e-5
            lp, _ = loss_acc(forward(params.with_values(vals + e), MODEL, batch), batch.labels)
            lm, _ = loss_acc(forward(params.with_values(vals - e), MODEL, batch), batch.labels)
            fd = (lp - lm) / 2e-5
            rel = abs(fd - g[coord]) / max(abs(fd), abs(g[coord]), 1e-8)
            worst = max(worst, rel)
    assert worst <= 1e-4
    report(5, f"max relative error vs central differences = {worst:.2e} <= 1e-4")


def test_06_sharpness():
    """Analytic corner-of-box value 12.5; defaults match the ascent protocol."""
    cfg = SharpnessConfig()
    assert cfg.epsilon == 1e-5
    assert cfg.ascent_steps == 8192

    analytic_cfg = SharpnessConfig(epsilon=0.1, ascent_steps=8192, ascent_lr=8e-5, eval_every=256)
    value = sharpness_ascent(
        np.array([1.0, 2.0]), lambda v: float(v.sum()), lambda v, s: np.ones(2), analytic_cfg
    )
    assert abs(value - 12.5) <= 1e-6

    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.normal(size=8)
        quick = SharpnessConfig(epsilon=1e-3, ascent_steps=64, ascent_lr=1e-3, eval_every=16)
        s = sharpness_ascent(x, lambda v: float(np.sum(v**2)),
                             lambda v, st: 2.0 * v, quick)
        assert s >= 0.0
    report(6, f"analytic sharpness {value:.9f} within 1e-6 of 12.5; always nonnegative")


def test_07_fixture_phenomenon(fixture_sweep, fixture_matrix):
    """Forced basins: accuracy split, cluster agreement, correlation, separation."""
    t0 = time.time()
    diag = np.array([r["diag_acc"] for r in fixture_sweep])
    strategies = [r["strategy"] for r in fixture_sweep]

    heur = diag[[s == "heuristic" for s in strategies]]
    gen = diag[[s == "generalizing" for s in strategies]]
    assert np.all(heur < 0.2), f"heuristic diag accs {heur}"
    assert np.all(gen > 0.8), f"generalizing diag accs {gen}"

    rep = spectral_cluster(fixture_matrix, 2, seed=0)
    fixture_idx = [i for i, s in enumerate(strategies) if s is not None]
    agreements = []
    for heur_label in (0, 1):
        agree = sum(
            1
            for i in fixture_idx
            if (strategies[i] == "heuristic") == (rep.labels[i] == heur_label)
        )
        agreements.append(agree)
    agreement = max(agreements) / len(fixture_idx)
    assert agreement >= 0.9, f"cluster/fixture agreement {agreement}"

    r = pearson(rep.feature, diag)
    assert abs(r) >= 0.6, f"pearson(feature, diagnostic accuracy) = {r}"

    n = len(fixture_sweep)
    within = [fixture_matrix.matrix[i, j] for i in range(n) for j in range(i + 1, n)
              if rep.labels[i] == rep.labels[j]]
    between = [fixture_matrix.matrix[i, j] for i in range(n) for j in range(i + 1, n)
               if rep.labels[i] != rep.labels[j]]
    ratio = np.median(between) / max(np.median(within), 1e-18)
    assert ratio >= 2.0, f"between/within median ratio {ratio}"

    elapsed = time.time() - t0
    report(7, (f"heur diag<{heur.max():.2f}, gen diag>{gen.min():.2f}, "
               f"agreement {agreement:.2f}, |r|={abs(r):.2f}, ratio {ratio:.1f}"))


def test_08_emergent_mode(task_data, shared_body, eval_batch):
    """Unforced sweep: report always produced; separation required only if
    clustering finds two populated groups."""
    runs = []
    for i in range(24):
        rec, cks = finetune(
            shared_body, 500 + i, 500 + i, SWEEP_TRAIN, MODEL, SPEC, task_data["train"],
            run_id=f"u{i:02d}",
        )
        assert not rec.failed
        runs.append(cks["final"])
    dm = pairwise_matrix(runs, "cg", eval_batch, MODEL, resolution=RESOLUTION)
    rep = spectral_cluster(dm, 2, seed=0)
    assert rep.labels.shape == (24,)

    sizes = [int((rep.labels == c).sum()) for c in range(max(rep.k, 1))]
    conditional = (not rep.degenerate) and len(sizes) == 2 and min(sizes) >= 3
    if conditional:
        within = [dm.matrix[i, j] for i in range(24) for j in range(i + 1, 24)
                  if rep.labels[i] == rep.labels[j]]
        between = [dm.matrix[i, j] for i in range(24) for j in range(i + 1, 24)
                   if rep.labels[i] != rep.labels[j]]
        ratio = np.median(between) / max(np.median(within), 1e-18)
        # Known red at desk scale: unforced runs converge to one strategy, so
        # the k=2 labels partition measurement noise (off-diagonal CG median
        # ~6e-5) where no 2x separation exists. See the decisions ledger.
        assert ratio >= 2.0, (
            f"unforced sweep has no real bimodality: k-means still emitted two "
            f"populated clusters {sizes} over noise-scale CG values, and their "
            f"between/within median ratio {ratio:.2f} < 2"
        )
        note = f"clusters {sizes}, ratio {ratio:.2f}"
    else:
        note = f"no populated bimodality (sizes {sizes}); conditional not triggered"
    report(8, f"emergent report produced; {note}")


def test_09_table_arithmetic():
    """Cluster stats reproduce the published ratio from its mean/std inputs."""
    stats = cluster_stats([0, 0, 1], [0.842, 0.846, 0.839])
    assert stats.means[0] == pytest.approx(0.844, abs=1e-12)
    assert stats.stds[0] == pytest.approx(0.002, abs=1e-12)
    assert stats.means[1] == pytest.approx(0.839, abs=1e-12)
    assert abs(stats.mean_ratio - 2.50) <= 1e-9
    assert abs(stats.max_ratio - stats.mean_ratio) <= 1e-12  # singleton C2
    report(9, f"(mu1-mu2)/sigma1 = {stats.mean_ratio:.12f} (2.50)")


def test_10_curve_finder():
    """Fitted 3-bend chain crosses the double-well at <= 0.1 while the linear
    path has barrier height 1."""
    t0 = time.time()
    well = lambda p: float((np.sum(p.values**2) - 1.0) ** 2)

    def well_grad(p):
        v = p.values
        return free_vector(4.0 * (np.sum(v**2) - 1.0) * v)

    a, b = free_vector([-1.0, 0.0]), free_vector([1.0, 0.0])
    linear = eval_path_fn(b, a, 33, well)
    assert abs(barrier_height(linear) - 1.0) <= 1e-9

    chain = fit_low_loss_curve(a, b, k_bends=3, fit_steps=4000, fit_lr=1e-2,
                               grad_fn=well_grad, seed=0)
    fitted = eval_chain_path(chain, 33, well)
    elapsed = time.time() - t0
    assert fitted.losses.max() <= 0.1
    assert elapsed < 10
    report(10, f"chain max loss {fitted.losses.max():.4f} <= 0.1 vs linear BH 1.0 ({elapsed:.1f}s)")


def test_11_determinism(tmp_path):
    """Full pipeline rerun is byte-identical; grid invariant to worker count."""
    from basin_atlas.cli import main

    config = {
        "task": {
            "split_sizes": {"train": 320, "id_val": 256, "diagnostic": 128, "pretrain": 256},
            "seed": 5,
        },
        "train": {"epochs": 1, "batch_size": 32},
        "pretrain": {"epochs": 1, "body_seed": 0},
        "sweep": {"n_runs": 4, "seed_base": 10, "fixtures": {"heuristic": 1, "generalizing": 1}},
        "metric": {"metric": "cg", "split": "id_val", "resolution": 5, "n_samples": 64, "eval_seed": 0},
        "cluster": {"k": 2, "seed": 0},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))

    def run_pipeline(out):
        base = ["--config", str(cfg_path), "--out", str(out)]
        for cmd in (["sweep"], ["grid"], ["cluster"], ["plot"]):
            assert main(cmd + base) == 0

    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_pipeline(out_a)
    run_pipeline(out_b)

    artifacts = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
    assert artifacts
    checked = 0
    for rel in artifacts:
        assert (out_b / rel).exists(), f"missing {rel} on rerun"
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), f"{rel} differs"
        checked += 1

    matrix = out_a / "matrices" / "cg__id_val.csv"
    single = matrix.read_bytes()
    assert main(["grid", "--config", str(cfg_path), "--out", str(out_a), "--workers", "8"]) == 0
    assert matrix.read_bytes() == single
    report(11, f"{checked} artifacts byte-identical across reruns; grid same for 1 vs 8 workers")


def test_12_dynamics(fixture_sweep, phenom_eval_batch):
    """Stage-aligned fixture labels are stable across the last two stages."""
    stage_names = ("stage1", "stage2", "final")
    matrices = {}
    for stage in stage_names:
        cks = [r["checkpoints"][stage] for r in fixture_sweep]
        matrices[stage] = pairwise_matrix(cks, "cg", phenom_eval_batch, MODEL, resolution=RESOLUTION)
    rep = dynamics(matrices, 2, seed=0)
    assert rep.stages == stage_names
    assert rep.aligned_labels.shape == (3, len(fixture_sweep))

    fixture_idx = [i for i, r in enumerate(fixture_sweep) if r["strategy"] is not None]
    stable = sum(
        1 for i in fixture_idx if rep.aligned_labels[-1, i] == rep.aligned_labels[-2, i]
    )
    stability = stable / len(fixture_idx)
    assert stability >= 0.9, f"fixture label stability across last two stages {stability}"
    report(12, f"dynamics report over {len(stage_names)} stages; fixture stability {stability:.2f}")
