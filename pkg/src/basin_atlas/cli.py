"""Config-driven command line for sweeps, pairwise grids, reports, and figures.

One JSON config document holds per-command sections; flags override config
values. Every command is idempotent: rerunning with unchanged inputs rewrites
byte-identical artifacts. Exit codes: 0 success, 1 validation error, 2
runtime failure. The ATLAS_OUT environment variable overrides --out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    DistanceMatrix,
    cluster_stats,
    correlation_matrix,
    dynamics,
    least_squares_fit,
    load_matrix,
    matrix_to_csv,
    pairwise_matrix,
    pearson,
    save_matrix,
    spectral_cluster,
    ClusterReport,
)
from .connectivity import curve_to_csv, eval_linear_path, save_curve
from .geometry import (
    SharpnessConfig,
    epsilon_sharpness,
    eval_chain_path,
    fit_low_loss_curve,
    plane_basis,
    plane_grid_sidecar,
    plane_grid_to_csv,
    plane_loss_surface,
)
from .model import ModelConfig, loss_and_gradient
from .params import load_checkpoint, save_checkpoint
from .tasks import TaskSpec, gen_forced_fixture, gen_split, save_split
from .training import (
    RunRecord,
    TrainConfig,
    draw_eval_sample,
    evaluate_batch,
    finetune,
    pretrain_body,
)


class ValidationError(ValueError):
    """Bad configuration or arguments; exits with code 1."""


DEFAULT_CONFIG = {
    "task": {},
    "model": {},
    "train": {},
    "pretrain": {
        "optimizer": "adamw",
        "base_lr": 1e-3,
        "epochs": 5,
        "weight_decay": 0.01,
        "n2_fraction": 0.40,
        "body_seed": 0,
    },
    "sweep": {"n_runs": 8, "seed_base": 100, "fixtures": {"heuristic": 0, "generalizing": 0}},
    "metric": {"metric": "cg", "split": "id_val", "resolution": 11, "n_samples": 512, "eval_seed": 0},
    "cluster": {"k": 2, "seed": 0},
    "sharpness": {},
    "plane": {"runs": [], "x_range": [-0.5, 1.5], "y_range": [-0.5, 1.5], "resolution": 21},
    "curve": {"runs": [], "k_bends": 3, "fit_steps": 4000, "fit_lr": 0.01, "fit_seed": 0, "n_points": 11},
    "figures": None,
}


def _merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path) -> dict:
    cfg = DEFAULT_CONFIG
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ValidationError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    return cfg


class _Workspace:
    """Config plus the deterministic in-memory task data every command shares."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        try:
            self.task = TaskSpec.from_dict(cfg["task"]) if cfg["task"] else TaskSpec()
            self.model = ModelConfig.from_dict(cfg["model"]) if cfg["model"] else ModelConfig()
            self.train = TrainConfig.from_dict(cfg["train"]) if cfg["train"] else TrainConfig()
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad config: {exc}") from exc
        self._splits = {}

    def split(self, split_id: str):
        if split_id not in self._splits:
            if split_id == "pretrain":
                spec = TaskSpec.from_dict(
                    {**self.task.to_dict(), "n2_fraction_of_negatives": self.cfg["pretrain"]["n2_fraction"]}
                )
                self._splits[split_id] = gen_split(spec, "pretrain", self.task.seed)
            else:
                self._splits[split_id] = gen_split(self.task, split_id, self.task.seed)
        return self._splits[split_id]

    def fixture(self, strategy: str):
        key = f"fixture_{strategy}"
        if key not in self._splits:
            self._splits[key] = gen_forced_fixture(self.task, strategy, self.task.seed)
        return self._splits[key]

    def eval_batch(self, split_id: str, n_samples: int, eval_seed: int):
        return draw_eval_sample(self.split(split_id), n_samples, eval_seed, self.task, self.model)

    def metric_settings(self, args) -> dict:
        m = dict(self.cfg["metric"])
        if getattr(args, "metric", None):
            m["metric"] = args.metric
        if getattr(args, "split", None):
            m["split"] = args.split
        if getattr(args, "resolution", None):
            m["resolution"] = args.resolution
        if getattr(args, "samples", None):
            m["n_samples"] = args.samples
        if getattr(args, "eval_seed", None) is not None:
            m["eval_seed"] = args.eval_seed
        return m

    # ---- artifact paths ----
    def data_dir(self) -> Path:
        return self.out / "data"

    def ckpt_dir(self) -> Path:
        return self.out / "checkpoints"

    def curve_dir(self) -> Path:
        return self.out / "curves"

    def matrix_dir(self) -> Path:
        return self.out / "matrices"

    def report_dir(self) -> Path:
        return self.out / "reports"

    def figure_dir(self) -> Path:
        return self.out / "figures"

    def ledger_path(self) -> Path:
        return self.out / "runs.jsonl"

    def load_ledger(self) -> list[RunRecord]:
        path = self.ledger_path()
        if not path.exists():
            raise ValidationError(f"no run ledger at {path}; run `atlas sweep` first")
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(RunRecord.from_dict(json.loads(line)))
        return records

    def load_stage_checkpoints(self, records, stage: str):
        out = []
        for rec in records:
            rel = rec.stage_paths.get(stage)
            if rel is None:
                raise ValidationError(f"run {rec.run_id} has no {stage!r} checkpoint")
            path = self.ckpt_dir() / rel
            if not path.exists():
                raise ValidationError(f"missing checkpoint file {path}")
            out.append(load_checkpoint(path))
        return out

    def body_checkpoint(self):
        path = self.ckpt_dir() / "body.pvc"
        if path.exists():
            return load_checkpoint(path)
        pre = self.cfg["pretrain"]
        pre_train_cfg = TrainConfig.from_dict(
            {
                "optimizer": pre.get("optimizer", "adamw"),
                "base_lr": pre.get("base_lr", 1e-3),
                "epochs": pre.get("epochs", 5),
                "weight_decay": pre.get("weight_decay", 0.01),
                "batch_size": pre.get("batch_size", self.train.batch_size),
                "warmup_fraction": pre.get("warmup_fraction", 0.10),
            }
        )
        body = pretrain_body(pre_train_cfg, self.model, self.task, self.split("pretrain"),
                             int(pre.get("body_seed", 0)))
        self.ckpt_dir().mkdir(parents=True, exist_ok=True)
        save_checkpoint(body, path)
        return body


def _dump_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(ws: _Workspace, args) -> int:
    ws.data_dir().mkdir(parents=True, exist_ok=True)
    for split_id in ("train", "id_val", "diagnostic", "pretrain"):
        save_split(ws.split(split_id), ws.data_dir() / f"{split_id}.jsonl")
    fixtures = ws.cfg["sweep"]["fixtures"]
    for strategy in ("heuristic", "generalizing"):
        if int(fixtures.get(strategy, 0)) > 0:
            save_split(ws.fixture(strategy), ws.data_dir() / f"fixture_{strategy}.jsonl")
    print(f"wrote data splits to {ws.data_dir()}")
    return 0


def cmd_pretrain(ws: _Workspace, args) -> int:
    body = ws.body_checkpoint()
    print(f"body checkpoint at {ws.ckpt_dir() / 'body.pvc'} (step {body.meta['step']})")
    return 0


def _sweep_plan(ws: _Workspace):
    sweep = ws.cfg["sweep"]
    n_runs = int(sweep["n_runs"])
    if n_runs < 2:
        raise ValidationError("sweep.n_runs must be >= 2")
    fixtures = sweep.get("fixtures", {})
    n_heur = int(fixtures.get("heuristic", 0))
    n_gen = int(fixtures.get("generalizing", 0))
    if n_heur + n_gen > n_runs:
        raise ValidationError("fixture counts exceed n_runs")
    plan = []
    for i in range(n_runs):
        if i < n_heur:
            plan.append((f"fxh{i:02d}", "heuristic"))
        elif i < n_heur + n_gen:
            plan.append((f"fxg{i - n_heur:02d}", "generalizing"))
        else:
            plan.append((f"run{i - n_heur - n_gen:02d}", None))
    return plan


def cmd_sweep(ws: _Workspace, args) -> int:
    plan = _sweep_plan(ws)
    seed_base = int(ws.cfg["sweep"]["seed_base"])
    body = ws.body_checkpoint()
    eval_splits = {"id_val": ws.split("id_val"), "diagnostic": ws.split("diagnostic")}
    records = []
    failed = 0
    for i, (run_id, strategy) in enumerate(plan):
        train_split = ws.fixture(strategy) if strategy else ws.split("train")
        record, _ = finetune(
            body, seed_base + i, seed_base + i, ws.train, ws.model, ws.task,
            train_split, eval_splits, run_id=run_id, out_dir=ws.ckpt_dir(),
        )
        if strategy:
            record.final_metrics["fixture"] = strategy
        records.append(record)
        if record.failed:
            failed += 1
            print(f"{run_id}: FAILED ({record.final_metrics.get('error')})")
        else:
            diag = record.final_metrics["diagnostic"]["accuracy"]
            idv = record.final_metrics["id_val"]["accuracy"]
            print(f"{run_id}: id_val {idv:.3f}  diagnostic {diag:.3f}")
    ws.out.mkdir(parents=True, exist_ok=True)
    with open(ws.ledger_path(), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    if failed > 0.10 * len(plan):
        print(f"{failed}/{len(plan)} runs failed", file=sys.stderr)
        return 2
    return 0


def _grid_once(ws: _Workspace, records, stage: str, settings, workers: int,
               write_curves: bool) -> DistanceMatrix:
    metric = settings["metric"]
    split_id = settings["split"]
    checkpoints = ws.load_stage_checkpoints(records, stage)
    ckpt_paths = [str(ws.ckpt_dir() / rec.stage_paths[stage]) for rec in records]
    eval_batch = None
    if metric != "euclidean":
        eval_batch = ws.eval_batch(split_id, int(settings["n_samples"]), int(settings["eval_seed"]))

    sink = None
    if write_curves and metric != "euclidean":
        ws.curve_dir().mkdir(parents=True, exist_ok=True)
        ids = [rec.run_id for rec in records]

        def sink(i, j, curve):
            name = f"{ids[i]}__{ids[j]}__{split_id}.csv"
            save_curve(curve, ws.curve_dir() / name)

    meta = {"split": split_id, "stage": stage, "n_samples": settings.get("n_samples"),
            "eval_seed": settings.get("eval_seed"), "resolution": settings.get("resolution")}
    return pairwise_matrix(
        checkpoints, metric, eval_batch, ws.model,
        resolution=int(settings["resolution"]), workers=workers,
        meta=meta, curve_sink=sink, ckpt_paths=ckpt_paths,
    )


def _matrix_name(settings, stage: str = "final") -> str:
    base = f"{settings['metric']}__{settings['split']}"
    return base if stage == "final" else f"{base}__{stage}"


def cmd_grid(ws: _Workspace, args) -> int:
    settings = ws.metric_settings(args)
    records = ws.load_ledger()
    workers = args.workers or 1
    dm = _grid_once(ws, records, "final", settings, workers, write_curves=True)
    ws.matrix_dir().mkdir(parents=True, exist_ok=True)
    out = ws.matrix_dir() / f"{_matrix_name(settings)}.csv"
    save_matrix(dm, out)
    n = len(records)
    print(f"{n * (n - 1) // 2} pairs -> {out}")
    return 0


def cmd_cluster(ws: _Workspace, args) -> int:
    settings = ws.metric_settings(args)
    k = args.k or int(ws.cfg["cluster"]["k"])
    seed = args.seed if args.seed is not None else int(ws.cfg["cluster"]["seed"])
    path = ws.matrix_dir() / f"{_matrix_name(settings)}.csv"
    if not path.exists():
        raise ValidationError(f"missing matrix {path}; run `atlas grid` first")
    dm = load_matrix(path, settings["metric"])
    report = spectral_cluster(dm, k, seed)
    out = ws.report_dir() / f"cluster__{_matrix_name(settings)}.json"
    _dump_json(report.to_dict(), out)
    sizes = [int((report.labels == c).sum()) for c in range(max(report.k, 1))]
    print(f"clusters {sizes} -> {out}")
    return 0


def _metric_value(record: RunRecord, dotted: str):
    node = record.final_metrics
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ValidationError(f"run {record.run_id} lacks metric {dotted!r} in the ledger")
        node = node[part]
    return float(node)


def cmd_stats(ws: _Workspace, args) -> int:
    if args.values:
        try:
            with open(args.values, "r", encoding="utf-8") as fh:
                blob = json.load(fh)
            labels, values = blob["labels"], blob["values"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ValidationError(f"bad values file {args.values}: {exc}") from exc
    else:
        settings = ws.metric_settings(args)
        cluster_path = ws.report_dir() / f"cluster__{_matrix_name(settings)}.json"
        if not cluster_path.exists():
            raise ValidationError(f"missing cluster report {cluster_path}; run `atlas cluster` first")
        with open(cluster_path, "r", encoding="utf-8") as fh:
            report = ClusterReport.from_dict(json.load(fh))
        records = {r.run_id: r for r in ws.load_ledger()}
        labels = report.labels.tolist()
        values = [_metric_value(records[rid], args.values_from) for rid in report.ids]
    stats = cluster_stats(labels, values)
    out = ws.report_dir() / "stats.json"
    _dump_json(stats.to_dict(), out)
    ratio = "undefined" if stats.mean_ratio is None else f"{stats.mean_ratio:.4f}"
    print(f"(mu1-mu2)/sigma1 = {ratio} -> {out}")
    return 0


def cmd_dynamics(ws: _Workspace, args) -> int:
    settings = ws.metric_settings(args)
    records = ws.load_ledger()
    k = args.k or int(ws.cfg["cluster"]["k"])
    seed = args.seed if args.seed is not None else int(ws.cfg["cluster"]["seed"])
    stages = sorted({s for rec in records for s in rec.stage_paths})
    stages = [s for s in stages if s != "final"] + ["final"]
    workers = args.workers or 1
    ws.matrix_dir().mkdir(parents=True, exist_ok=True)
    matrices = {}
    for stage in stages:
        dm = _grid_once(ws, records, stage, settings, workers, write_curves=False)
        matrices[stage] = dm
        save_matrix(dm, ws.matrix_dir() / f"{_matrix_name(settings, stage)}.csv")
    report = dynamics(matrices, k, seed)
    out = ws.report_dir() / f"dynamics__{_matrix_name(settings)}.json"
    _dump_json(report.to_dict(), out)
    print(f"{len(stages)} stages -> {out}")
    return 0


def cmd_sharpness(ws: _Workspace, args) -> int:
    settings = ws.metric_settings(args)
    records = ws.load_ledger()
    sh_cfg = SharpnessConfig(**ws.cfg["sharpness"]) if ws.cfg["sharpness"] else SharpnessConfig()
    split = ws.split(settings["split"])
    results = []
    for rec in records:
        ckpt = ws.load_stage_checkpoints([rec], "final")[0]
        value = epsilon_sharpness(ckpt, split, sh_cfg, ws.task, ws.model)
        results.append({"run_id": rec.run_id, "sharpness": value})
        print(f"{rec.run_id}: sharpness {value:.6f}")
    out = ws.report_dir() / "sharpness.json"
    _dump_json({"config": {"epsilon": sh_cfg.epsilon, "ascent_steps": sh_cfg.ascent_steps,
                           "split": settings["split"]},
                "results": results}, out)
    return 0


def cmd_plane(ws: _Workspace, args) -> int:
    settings = ws.metric_settings(args)
    records = ws.load_ledger()
    plane_cfg = ws.cfg["plane"]
    run_ids = args.runs or plane_cfg.get("runs") or [r.run_id for r in records[:3]]
    if len(run_ids) != 3:
        raise ValidationError("plane requires exactly 3 run ids")
    by_id = {r.run_id: r for r in records}
    try:
        picked = [by_id[rid] for rid in run_ids]
    except KeyError as exc:
        raise ValidationError(f"unknown run id {exc}") from exc
    cks = ws.load_stage_checkpoints(picked, "final")
    basis = plane_basis(*cks)
    eval_batch = ws.eval_batch(settings["split"], int(settings["n_samples"]), int(settings["eval_seed"]))

    def loss_fn(p):
        return evaluate_batch(p, ws.model, eval_batch)[0]

    grid = plane_loss_surface(
        basis, tuple(plane_cfg["x_range"]), tuple(plane_cfg["y_range"]),
        int(plane_cfg["resolution"]), loss_fn,
        meta={"runs": list(run_ids), "split": settings["split"]},
    )
    tag = "__".join(run_ids)
    ws.report_dir().mkdir(parents=True, exist_ok=True)
    csv_path = ws.report_dir() / f"plane__{tag}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(plane_grid_to_csv(grid))
    with open(ws.report_dir() / f"plane__{tag}.json", "w", encoding="utf-8") as fh:
        fh.write(plane_grid_sidecar(grid))
    print(f"plane grid -> {csv_path}")
    return 0


def cmd_curve(ws: _Workspace, args) -> int:
    settings = ws.metric_settings(args)
    records = ws.load_ledger()
    curve_cfg = ws.cfg["curve"]
    run_ids = args.runs or curve_cfg.get("runs") or [r.run_id for r in records[:2]]
    if len(run_ids) != 2:
        raise ValidationError("curve requires exactly 2 run ids")
    by_id = {r.run_id: r for r in records}
    try:
        picked = [by_id[rid] for rid in run_ids]
    except KeyError as exc:
        raise ValidationError(f"unknown run id {exc}") from exc
    a, b = ws.load_stage_checkpoints(picked, "final")
    eval_batch = ws.eval_batch(settings["split"], int(settings["n_samples"]), int(settings["eval_seed"]))

    def loss_fn(p):
        return evaluate_batch(p, ws.model, eval_batch)[0]

    def acc_fn(p):
        return evaluate_batch(p, ws.model, eval_batch)[1]

    def grad_fn(p):
        return loss_and_gradient(p, ws.model, eval_batch)[1]

    chain = fit_low_loss_curve(
        a, b, int(curve_cfg["k_bends"]), int(curve_cfg["fit_steps"]),
        float(curve_cfg["fit_lr"]), grad_fn, int(curve_cfg["fit_seed"]),
    )
    curve = eval_chain_path(chain, int(curve_cfg["n_points"]), loss_fn, acc_fn,
                            meta={"runs": list(run_ids), "split": settings["split"],
                                  "k_bends": curve_cfg["k_bends"]})
    straight = eval_linear_path(a, b, int(curve_cfg["n_points"]), eval_batch, ws.model)
    ws.report_dir().mkdir(parents=True, exist_ok=True)
    tag = "__".join(run_ids)
    save_curve(curve, ws.report_dir() / f"chain__{tag}.csv")
    save_curve(straight, ws.report_dir() / f"chain__{tag}__linear.csv")
    print(f"chain max loss {curve.losses.max():.4f} vs linear max {straight.losses.max():.4f}")
    return 0


def cmd_correlate(ws: _Workspace, args) -> int:
    records = ws.load_ledger()
    ok = [r for r in records if not r.failed]
    if len(ok) < 3:
        raise ValidationError("need at least 3 completed runs")
    split_names = sorted({k for r in ok for k, v in r.final_metrics.items() if isinstance(v, dict)})
    table = np.array([[r.final_metrics[s]["accuracy"] for s in split_names] for r in ok])
    matrix, flagged = correlation_matrix(table, split_names)
    ws.report_dir().mkdir(parents=True, exist_ok=True)
    out = ws.report_dir() / "correlations.csv"
    dm_like = [[""] + split_names]
    for i, name in enumerate(split_names):
        dm_like.append([name] + [repr(float(x)) for x in matrix[i]])
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(",".join(row) for row in dm_like) + "\n")
    if flagged:
        print(f"zero-variance splits flagged: {flagged}")
    print(f"correlations -> {out}")
    return 0


def _default_figures(ws: _Workspace, settings) -> list[dict]:
    name = _matrix_name(settings)
    return [
        {"kind": "heatmap", "matrix": f"matrices/{name}.csv",
         "sort_by": "diagnostic.accuracy", "out": f"figures/heatmap__{name}.svg"},
        {"kind": "curve_panel", "curve_dir": "curves", "limit": 12,
         "out": f"figures/curves__{settings['split']}.svg"},
        {"kind": "histogram", "values_from": "diagnostic.accuracy",
         "cluster": f"reports/cluster__{name}.json",
         "out": "figures/hist__diagnostic.svg"},
        {"kind": "scatter_fit", "values_from": "diagnostic.accuracy",
         "cluster": f"reports/cluster__{name}.json",
         "out": "figures/scatter__feature_vs_diagnostic.svg"},
    ]


def cmd_plot(ws: _Workspace, args) -> int:
    from . import figures as fig
    from .connectivity import load_curve

    settings = ws.metric_settings(args)
    specs = ws.cfg.get("figures") or _default_figures(ws, settings)
    records = {r.run_id: r for r in ws.load_ledger()} if ws.ledger_path().exists() else {}
    ws.figure_dir().mkdir(parents=True, exist_ok=True)
    made = []
    for spec in specs:
        kind = spec.get("kind")
        out = ws.out / spec["out"]
        out.parent.mkdir(parents=True, exist_ok=True)
        if kind == "heatmap":
            path = ws.out / spec["matrix"]
            if not path.exists():
                raise ValidationError(f"missing matrix {path}")
            dm = load_matrix(path)
            sort_values = None
            if spec.get("sort_by") and records:
                sort_values = [_metric_value(records[rid], spec["sort_by"]) for rid in dm.ids]
            fig.heatmap(dm.matrix, dm.ids, out, sort_values=sort_values,
                        title=spec.get("title", f"{dm.metric} distance"),
                        cbar_label=dm.metric)
        elif kind == "curve_panel":
            if "sources" in spec:
                paths = [ws.out / s for s in spec["sources"]]
            else:
                cdir = ws.out / spec.get("curve_dir", "curves")
                paths = sorted(cdir.glob("*.csv"))[: int(spec.get("limit", 12))]
            if not paths:
                raise ValidationError("no curve files to plot")
            curves = []
            for p in paths:
                c = load_curve(p)
                curves.append((p.stem, c.alphas, c.losses))
            fig.curve_panel(curves, out, title=spec.get("title", "linear interpolation"))
        elif kind == "histogram":
            report = _load_cluster(ws, spec)
            values = [_metric_value(records[rid], spec["values_from"]) for rid in report.ids]
            fig.histogram(values, report.labels, out,
                          title=spec.get("title", ""), xlabel=spec["values_from"])
        elif kind == "scatter_fit":
            report = _load_cluster(ws, spec)
            values = [_metric_value(records[rid], spec["values_from"]) for rid in report.ids]
            fig.scatter_fit(report.feature, values, out, labels=report.labels,
                            xlabel="centroid distance difference", ylabel=spec["values_from"],
                            title=spec.get("title", ""))
        elif kind == "plane":
            import csv as _csv

            csv_path = ws.out / spec["source"]
            sidecar = json.loads((ws.out / spec["source"]).with_suffix(".json").read_text())
            rows = list(_csv.reader(csv_path.read_text().splitlines()))[1:]
            res = int(sidecar["resolution"])
            xs = np.array(sorted({float(r[0]) for r in rows}))
            ys = np.array(sorted({float(r[1]) for r in rows}))
            losses = np.zeros((res, res))
            xi = {float(x): i for i, x in enumerate(xs)}
            yi = {float(y): i for i, y in enumerate(ys)}
            for r in rows:
                losses[yi[float(r[1])], xi[float(r[0])]] = float(r[2])
            fig.plane_figure(xs, ys, losses, sidecar["anchor_coords"], out,
                             title=spec.get("title", ""))
        else:
            raise ValidationError(f"unknown figure kind {kind!r}")
        made.append(out)
    for p in made:
        print(f"figure -> {p}")
    return 0


def _load_cluster(ws: _Workspace, spec) -> ClusterReport:
    path = ws.out / spec["cluster"]
    if not path.exists():
        raise ValidationError(f"missing cluster report {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return ClusterReport.from_dict(json.load(fh))


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atlas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, help=kw.pop("help", None))
        p.set_defaults(fn=fn)
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--out", type=str, default="atlas_out", help="output directory")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--metric", choices=["cg", "bh", "auc", "euclidean"], default=None)
        p.add_argument("--split", choices=["train", "id_val", "diagnostic"], default=None)
        p.add_argument("--resolution", type=int, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--eval-seed", dest="eval_seed", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        return p

    add("gen-data", cmd_gen_data, help="write dataset splits as JSON lines")
    add("pretrain", cmd_pretrain, help="train the shared body checkpoint")
    add("sweep", cmd_sweep, help="run the finetuning sweep (fixtures included)")
    add("grid", cmd_grid, help="evaluate all pairs and write the distance matrix")
    add("cluster", cmd_cluster, help="spectral-cluster a distance matrix")
    p = add("stats", cmd_stats, help="per-cluster statistics and separation ratios")
    p.add_argument("--values", type=str, default=None, help="JSON file with labels/values")
    p.add_argument("--values-from", dest="values_from", type=str, default="diagnostic.accuracy")
    add("dynamics", cmd_dynamics, help="per-stage clustering with label alignment")
    add("sharpness", cmd_sharpness, help="epsilon-sharpness of every final model")
    p = add("plane", cmd_plane, help="loss surface on the plane through 3 models")
    p.add_argument("--runs", nargs=3, default=None, metavar="RUN_ID")
    p = add("curve", cmd_curve, help="fit a segmented low-loss path between 2 models")
    p.add_argument("--runs", nargs=2, default=None, metavar="RUN_ID")
    add("correlate", cmd_correlate, help="correlation matrix of split accuracies")
    add("plot", cmd_plot, help="render SVG figures from sweep artifacts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        out = Path(os.environ.get("ATLAS_OUT") or args.out)
        ws = _Workspace(load_config(args.config), out)
        return args.fn(ws, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
