"""Experiment harness: desk-scale reproductions of the synthetic studies.

Each experiment sweeps one variable over seeded trials, compares the
requested methods, and writes a result CSV (stable schema), aggregate
means, SVG plots, convergence logs where relevant, and a sidecar text log.
Reruns with the same spec produce byte-identical CSVs, also under parallel
trial execution (rows are sorted before writing and every trial draws from
its own counter-based stream).
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, svgplot
from .edgrad import EdGradConfig
from .errors import EigfreeError, InvalidSpec
from .geometry import decompose_essential, map_score, metrics as geo_metrics
from .losses import FitState, LossParams
from .optim import detect_gradient_jump, make_problem, run_direct_fit
from .synth import GenConfig, generate, split_seed, write_instance

CSV_HEADER = ("experiment,trial,seed,method,sweep_value,rot_err_deg,trans_err,"
              "center_err,normal_angle_deg,precision,recall,map,jump_ratio,wall_ms")

EXPERIMENT_NAMES = (
    "plane-single", "plane-multi", "ellipse-outliers", "ellipse-denoise",
    "ellipse-joint", "pnp-outliers", "pnp-denoise", "pnp-joint",
    "stereo-synth", "gradcheck",
)

#: mAP folding of rotation error: thresholds 1..20 degrees.
MAP_MAX_DEG = 20.0
MAP_STEP_DEG = 1.0


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    trials: int = 20
    seed: int = 0
    methods: tuple = ()
    sweep: tuple = ()
    outliers: int | None = None
    noise: float | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    lr: float | None = None
    iters: int | None = None
    out_dir: str = "eigfree-out"
    jobs: int = 1
    timing: bool = False

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise InvalidSpec(f"unknown experiment {self.name!r}")
        if self.trials < 1:
            raise InvalidSpec("trials must be >= 1")


@dataclass(frozen=True)
class _Defaults:
    variant: str
    methods: tuple
    alpha: float
    beta: float
    gamma: float
    lr: float
    iters: int
    outliers: int
    noise: float
    sweep_param: str | None = None
    sweep: tuple = ()
    mode: str = "weights"
    save_runlogs: bool = False
    edgrad_lr: float | None = None     # None = same lr as edfree
    edgrad_iters: int | None = None
    edgrad_opt: str = "adam"


_DEFS = {
    "plane-single": _Defaults(
        variant="plane", methods=("edfree", "edgrad"), alpha=1000.0, beta=1e-4,
        gamma=0.0, lr=1e-2, iters=2000, outliers=1, noise=1e-3,
        save_runlogs=True, edgrad_iters=2000,
    ),
    "plane-multi": _Defaults(
        variant="plane", methods=("edfree", "edgrad"), alpha=1000.0, beta=1e-4,
        gamma=0.0, lr=1e-1, iters=20000, outliers=20, noise=1e-3,
        save_runlogs=True, edgrad_lr=1.5, edgrad_iters=2500, edgrad_opt="gd",
    ),
    "ellipse-outliers": _Defaults(
        variant="ellipse", methods=("edfree", "dlt", "irls", "ransac", "lmeds"),
        alpha=1.0, beta=5e-3, gamma=0.0, lr=1e-1, iters=1500,
        outliers=50, noise=1e-2, sweep_param="outliers", sweep=(0, 25, 50, 75, 100),
    ),
    "ellipse-denoise": _Defaults(
        variant="ellipse", methods=("edfree-denoise", "dlt"),
        alpha=0.0, beta=0.0, gamma=1e-2, lr=1e-3, iters=2000,
        outliers=0, noise=3e-2, sweep_param="noise", sweep=(0.01, 0.02, 0.03, 0.04, 0.05),
        mode="displacements",
    ),
    "ellipse-joint": _Defaults(
        variant="ellipse", methods=("edfree-joint", "edfree", "dlt"),
        alpha=1.0, beta=5e-3, gamma=1e-2, lr=2e-2, iters=2000,
        outliers=10, noise=2e-2, sweep_param="outliers", sweep=(0, 10, 50, 100, 150),
        mode="joint",
    ),
    "pnp-outliers": _Defaults(
        variant="pnp", methods=("edfree", "dlt", "ransac", "lmeds"),
        alpha=10.0, beta=5e-3, gamma=0.0, lr=1e-1, iters=1500,
        outliers=130, noise=5.0, sweep_param="outliers", sweep=(10, 50, 90, 130, 150),
    ),
    "pnp-denoise": _Defaults(
        variant="pnp", methods=("edfree-denoise", "dlt"),
        alpha=0.0, beta=0.0, gamma=1e-2, lr=1e-3, iters=2000,
        outliers=0, noise=20.0, sweep_param="noise", sweep=(5.0, 20.0, 35.0, 50.0),
        mode="displacements",
    ),
    "pnp-joint": _Defaults(
        variant="pnp", methods=("edfree-joint", "edfree", "dlt"),
        alpha=10.0, beta=5e-2, gamma=1e-2, lr=2e-2, iters=1500,
        outliers=50, noise=20.0, sweep_param="outliers", sweep=(10, 50, 90, 130),
        mode="joint",
    ),
    "stereo-synth": _Defaults(
        variant="stereo", methods=("edfree", "edgrad", "ransac", "lmeds"),
        alpha=10.0, beta=1e-3, gamma=0.0, lr=1e-1, iters=1000,
        outliers=40, noise=1.0, sweep_param="outliers", sweep=(10, 20, 30, 40, 50),
    ),
}


def _resolved(spec: ExperimentSpec):
    d = _DEFS[spec.name]
    return {
        "methods": tuple(spec.methods) or d.methods,
        "alpha": d.alpha if spec.alpha is None else spec.alpha,
        "beta": d.beta if spec.beta is None else spec.beta,
        "gamma": d.gamma if spec.gamma is None else spec.gamma,
        "lr": d.lr if spec.lr is None else spec.lr,
        "iters": d.iters if spec.iters is None else spec.iters,
        "outliers": d.outliers if spec.outliers is None else spec.outliers,
        "noise": d.noise if spec.noise is None else spec.noise,
        "sweep": tuple(spec.sweep) or d.sweep or (None,),
        "edgrad_lr": d.edgrad_lr,
        "edgrad_iters": d.edgrad_iters,
        "edgrad_opt": d.edgrad_opt,
    }


def _empty_row(spec, trial, seed, method, sweep_value):
    return {
        "experiment": spec.name, "trial": trial, "seed": seed, "method": method,
        "sweep_value": sweep_value, "rot_err_deg": None, "trans_err": None,
        "center_err": None, "normal_angle_deg": None, "precision": None,
        "recall": None, "map": None, "jump_ratio": None, "wall_ms": None,
    }


def _gen_config(defs, res, seed, sweep_value):
    outliers = res["outliers"]
    noise = res["noise"]
    if defs.sweep_param == "outliers" and sweep_value is not None:
        outliers = int(sweep_value)
    if defs.sweep_param == "noise" and sweep_value is not None:
        noise = float(sweep_value)
    return GenConfig(
        seed=seed, variant=defs.variant, n_outliers=outliers, noise_sigma=noise
    )


def _method_result(method, inst, defs, res, seed):
    """Run one method on one instance; returns (row fields, log line, runlog)."""
    params = LossParams(alpha=res["alpha"], beta=res["beta"], gamma=res["gamma"])
    fields = {}
    line = None
    runlog = None
    est_mask = None
    if method in ("edfree", "edgrad", "edfree-joint", "edfree-denoise"):
        kind = "edgrad" if method == "edgrad" else "edfree"
        mode = {"edfree-joint": "joint", "edfree-denoise": "displacements"}.get(
            method, "weights"
        )
        cfg = None
        lr = res["lr"]
        iters = res["iters"]
        opt = "adam"
        if kind == "edgrad":
            # Raw weights on the plane toy reproduce the switching story;
            # the guard keeps CLI runs alive for logging.
            param = "raw" if inst.variant == "plane" else "sigmoid"
            cfg = EdGradConfig(denom_guard=1e-12, weight_param=param)
            lr = res.get("edgrad_lr") or lr
            iters = res.get("edgrad_iters") or iters
            opt = res.get("edgrad_opt", "adam")
        state, log = run_direct_fit(
            inst, kind, mode, params, opt=opt, lr=lr, iters=iters, edgrad_cfg=cfg,
        )
        runlog = log
        if len(log.records) >= 2:
            fields["jump_ratio"] = detect_gradient_jump(log).max_ratio
        if log.aborted:
            line = f"{method}: aborted ({log.abort_reason})"
            return fields, line, runlog, None
        problem = make_problem(inst, kind, mode, params)
        model = problem.model_from_state(state)
        if mode != "displacements":
            est_mask = state.weights > 0.5
    elif method == "dlt":
        problem = make_problem(inst, "edfree", "weights", params)
        model = problem.model_from_state(FitState(np.full(inst.n, 40.0)))
    elif method == "ransac":
        model, est_mask = baselines.ransac_fit(
            inst, baselines.default_config(inst.variant, seed=seed)
        )
    elif method == "lmeds":
        model, est_mask = baselines.lmeds_fit(
            inst, baselines.default_config(inst.variant, seed=seed)
        )
    elif method == "irls":
        if inst.variant != "ellipse":
            raise InvalidSpec("irls only applies to the ellipse task")
        model = baselines.irls_cauchy_ellipse(inst.measurements)
    else:
        raise InvalidSpec(f"unknown method {method!r}")

    variant = inst.variant
    if variant == "stereo":
        est_pose = decompose_essential(model, inst.measurements)
        rec = geo_metrics(est_pose, inst.meta["pose"], "stereo",
                          est_mask=est_mask, true_mask=inst.inlier_mask)
    else:
        rec = geo_metrics(model, inst.ground_truth, variant,
                          est_mask=est_mask, true_mask=inst.inlier_mask)
    fields["rot_err_deg"] = rec["rotation_err_deg"]
    fields["trans_err"] = rec["translation_err"]
    fields["center_err"] = rec["center_err"]
    fields["normal_angle_deg"] = rec["normal_angle_deg"]
    fields["precision"] = rec["precision"]
    fields["recall"] = rec["recall"]
    if rec["rotation_err_deg"] is not None and variant in ("pnp", "stereo"):
        fields["map"] = map_score([rec["rotation_err_deg"]], MAP_MAX_DEG, MAP_STEP_DEG)
    return fields, line, runlog, model


def _run_trial(spec, defs, res, trial, sweep_index, sweep_value):
    seed = split_seed(spec.seed, trial, sweep_index)
    inst = generate(_gen_config(defs, res, seed, sweep_value))
    rows = []
    lines = []
    runlogs = {}
    aborted = False
    for method in res["methods"]:
        row = _empty_row(spec, trial, seed, method, sweep_value)
        start = time.perf_counter()
        try:
            fields, line, runlog, _ = _method_result(method, inst, defs, res, seed)
            row.update(fields)
            if line is not None:
                lines.append(f"trial={trial} sweep={sweep_value} {line}")
                aborted = True
            if runlog is not None and defs.save_runlogs:
                runlogs[(trial, method)] = runlog
        except EigfreeError as exc:
            lines.append(
                f"trial={trial} sweep={sweep_value} {method}: error "
                f"{type(exc).__name__}: {exc}"
            )
            aborted = True
        if spec.timing:
            row["wall_ms"] = (time.perf_counter() - start) * 1e3
        rows.append(row)
    return rows, lines, runlogs, aborted, inst


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def rows_to_csv(rows, fp):
    own = isinstance(fp, (str, bytes))
    fh = open(fp, "w") if own else fp
    try:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[k]) for k in CSV_HEADER.split(",")) + "\n")
    finally:
        if own:
            fh.close()


def _aggregate(rows):
    """Mean of each numeric column per (method, sweep_value)."""
    keys = sorted({(r["method"], r["sweep_value"]) for r in rows},
                  key=lambda k: (str(k[0]), str(k[1])))
    cols = ("rot_err_deg", "trans_err", "center_err", "normal_angle_deg",
            "precision", "recall", "map", "jump_ratio")
    out = []
    for method, sweep in keys:
        sel = [r for r in rows if r["method"] == method and r["sweep_value"] == sweep]
        agg = {"method": method, "sweep_value": sweep, "trials": len(sel)}
        for c in cols:
            vals = [r[c] for r in sel if r[c] is not None and np.isfinite(r[c])]
            agg[c] = float(np.mean(vals)) if vals else None
        out.append(agg)
    return out


def emit_plots(rows, out_dir, runlogs=None):
    """One SVG per populated metric (mean vs sweep), plus convergence plots."""
    if not rows:
        raise InvalidSpec("emit_plots needs a nonempty result table")
    os.makedirs(out_dir, exist_ok=True)
    agg = _aggregate(rows)
    name = rows[0]["experiment"]
    written = []
    sweep_numeric = all(
        a["sweep_value"] is not None and not isinstance(a["sweep_value"], str)
        for a in agg
    )
    for metric in ("rot_err_deg", "trans_err", "center_err", "normal_angle_deg",
                   "precision", "recall", "map", "jump_ratio"):
        series = {}
        for method in sorted({a["method"] for a in agg}):
            pts = [(a["sweep_value"], a[metric]) for a in agg
                   if a["method"] == method and a[metric] is not None]
            if not pts:
                continue
            if sweep_numeric:
                xs = [p[0] for p in pts]
            else:
                xs = list(range(len(pts)))
            series[method] = (xs, [p[1] for p in pts])
        if not series:
            continue
        path = os.path.join(out_dir, f"{name}_{metric}.svg")
        svgplot.line_plot(series, "sweep value", metric, path, title=name)
        written.append(path)
    if runlogs:
        series = {}
        for (trial, method), log in sorted(runlogs.items(), key=lambda kv: kv[0]):
            if trial != min(t for t, _ in runlogs):
                continue
            xs = [r.iter for r in log.records]
            ys = [r.loss_total for r in log.records]
            if xs:
                series[method] = (xs, ys)
        if series:
            path = os.path.join(out_dir, f"{name}_loss_vs_iteration.svg")
            svgplot.line_plot(series, "iteration", "loss", path, title=name)
            written.append(path)
    return written


def _run_gradcheck(spec):
    """FD verification rows; detail lives in the sidecar log."""
    from .gradcheck import run_gradcheck_suite

    results = run_gradcheck_suite(n_seeds=min(spec.trials * 5, 100), seed=spec.seed)
    rows = []
    lines = []
    aborted = False
    for kind, worst in sorted(results.items()):
        row = _empty_row(spec, 0, spec.seed, f"fd:{kind}", None)
        rows.append(row)
        ok = worst <= 1e-5
        lines.append(f"gradcheck {kind}: max rel err {worst:.3e} {'OK' if ok else 'FAIL'}")
        aborted = aborted or not ok
    return rows, lines, aborted


def run_experiment(spec: ExperimentSpec):
    """Execute the experiment; returns (rows, aborted_any, artifact paths)."""
    os.makedirs(spec.out_dir, exist_ok=True)
    if spec.name == "gradcheck":
        rows, lines, aborted = _run_gradcheck(spec)
        runlogs = {}
        sample_instance = None
    else:
        defs = _DEFS[spec.name]
        res = _resolved(spec)
        tasks = [(trial, si, sv) for si, sv in enumerate(res["sweep"])
                 for trial in range(spec.trials)]
        results = []
        if spec.jobs > 1:
            with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
                futures = [pool.submit(_run_trial, spec, defs, res, t, si, sv)
                           for t, si, sv in tasks]
                results = [f.result() for f in futures]
        else:
            results = [_run_trial(spec, defs, res, t, si, sv) for t, si, sv in tasks]
        rows = []
        lines = []
        runlogs = {}
        aborted = False
        sample_instance = None
        for (t_rows, t_lines, t_logs, t_aborted, inst) in results:
            rows.extend(t_rows)
            lines.extend(t_lines)
            runlogs.update(t_logs)
            aborted = aborted or t_aborted
            if sample_instance is None:
                sample_instance = inst

    rows.sort(key=lambda r: (r["trial"], r["method"], str(r["sweep_value"])))
    paths = []
    csv_path = os.path.join(spec.out_dir, f"{spec.name}_results.csv")
    rows_to_csv(rows, csv_path)
    paths.append(csv_path)

    agg_path = os.path.join(spec.out_dir, f"{spec.name}_aggregates.csv")
    with open(agg_path, "w") as fh:
        fh.write("method,sweep_value,trials,rot_err_deg,trans_err,center_err,"
                 "normal_angle_deg,precision,recall,map,jump_ratio\n")
        for a in _aggregate(rows):
            cells = [a["method"], _format_cell(a["sweep_value"]), str(a["trials"])]
            cells += [_format_cell(a[c]) for c in
                      ("rot_err_deg", "trans_err", "center_err", "normal_angle_deg",
                       "precision", "recall", "map", "jump_ratio")]
            fh.write(",".join(cells) + "\n")
    paths.append(agg_path)

    for (trial, method), log in sorted(runlogs.items(), key=lambda kv: kv[0]):
        log_path = os.path.join(spec.out_dir, f"{spec.name}_runlog_t{trial}_{method}.csv")
        log.to_csv(log_path)
        paths.append(log_path)

    if spec.name != "gradcheck" and rows:
        paths.extend(emit_plots(rows, spec.out_dir, runlogs or None))

    if sample_instance is not None:
        fixture = os.path.join(spec.out_dir, f"{spec.name}_instance0.txt")
        write_instance(sample_instance, fixture)
        paths.append(fixture)

    side_path = os.path.join(spec.out_dir, f"{spec.name}_run.log")
    with open(side_path, "w") as fh:
        fh.write(f"experiment={spec.name} trials={spec.trials} seed={spec.seed}\n")
        for line in lines:
            fh.write(line + "\n")
        fh.write(f"aborted={'yes' if aborted else 'no'}\n")
    paths.append(side_path)
    return rows, aborted, paths


def _parse_config_file(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidSpec(f"bad config line: {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def build_spec(argv=None) -> ExperimentSpec:
    parser = argparse.ArgumentParser(
        prog="eigfree",
        description="Desk-scale synthetic experiments for the "
                    "eigendecomposition-free fitting losses.",
    )
    parser.add_argument("--experiment", required=False)
    parser.add_argument("--config", help="key = value file; flags override it")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--outliers", type=int)
    parser.add_argument("--noise", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--iters", type=int)
    parser.add_argument("--method", action="append",
                        help="repeatable; default methods per experiment")
    parser.add_argument("--sweep", help="comma-separated sweep values")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--timing", action="store_true",
                        help="fill the wall_ms column (breaks byte determinism)")
    args = parser.parse_args(argv)

    merged = {}
    if args.config:
        merged.update(_parse_config_file(args.config))
    cli_map = {
        "experiment": args.experiment, "seed": args.seed, "trials": args.trials,
        "outliers": args.outliers, "noise": args.noise, "alpha": args.alpha,
        "beta": args.beta, "gamma": args.gamma, "lr": args.lr, "iters": args.iters,
        "out": args.out, "jobs": args.jobs,
    }
    for key, val in cli_map.items():
        if val is not None:
            merged[key] = val
    if args.method:
        merged["method"] = ",".join(args.method)
    if args.sweep:
        merged["sweep"] = args.sweep
    if args.timing:
        merged["timing"] = "1"

    if "experiment" not in merged:
        raise InvalidSpec("an --experiment name (or config entry) is required")

    def _get(key, cast, default):
        if key not in merged:
            return default
        return cast(merged[key])

    sweep = ()
    if "sweep" in merged:
        sweep = tuple(float(v) for v in str(merged["sweep"]).split(",") if v != "")
    methods = ()
    if "method" in merged:
        methods = tuple(m.strip() for m in str(merged["method"]).split(",") if m.strip())
    return ExperimentSpec(
        name=str(merged["experiment"]),
        trials=_get("trials", int, 20),
        seed=_get("seed", int, 0),
        methods=methods,
        sweep=sweep,
        outliers=_get("outliers", int, None),
        noise=_get("noise", float, None),
        alpha=_get("alpha", float, None),
        beta=_get("beta", float, None),
        gamma=_get("gamma", float, None),
        lr=_get("lr", float, None),
        iters=_get("iters", int, None),
        out_dir=str(merged.get("out", "eigfree-out")),
        jobs=_get("jobs", int, 1),
        timing=bool(int(merged.get("timing", "0"))),
    )


def main(argv=None) -> int:
    try:
        spec = build_spec(argv)
        _, aborted, paths = run_experiment(spec)
    except (InvalidSpec, EigfreeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 1 if aborted else 0


if __name__ == "__main__":
    sys.exit(main())
