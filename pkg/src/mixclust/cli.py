"""Command-line harness: generate data, fit, sweep K, evaluate and benchmark.

Exit status is 0 on success, 1 when a run fails and 2 on configuration or
input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import LN2, Dataset, DirichletPrior, SchemaError, map_estimate
from .evaluate import classification_accuracy, confusion, effective_cluster_count, holdout_logl
from .experiments import (
    METRICS,
    PRESETS,
    Condition,
    loglog_slope,
    preset,
    record_fields,
    run_bench,
    score_truth,
    summarize,
)
from .hac import run_hac
from .init import METHODS as INIT_METHODS
from .init import InitConfig, initialize
from .selection import SweepConfig, cheeseman_stutz, sweep_k
from .synthgen import GenConfig, ObservedGenerator, generate
from .trainers import FitConfig, accumulate_stats, cem_fit, e_step, em_fit

log = logging.getLogger("mixclust")


class ConfigError(ValueError):
    """Bad command-line configuration."""


# -- shared helpers ---------------------------------------------------------


def _load(path, schema_path=None, fmt=None, schema=None) -> Dataset:
    return io.read_dataset(path, schema_path=schema_path, fmt=fmt, schema=schema)


def _load_pair(args) -> tuple[Dataset, Dataset | None]:
    train = _load(args.train, args.schema, args.format)
    test = None
    if getattr(args, "test", None):
        test = _load(args.test, args.schema, args.format, schema=train.schema)
    return train, test


def _describe_mismatch(model_schema, data_schema) -> str:
    if model_schema.n != data_schema.n:
        return f"model has {model_schema.n} variables, data has {data_schema.n}"
    for name_m, name_d, rm, rd in zip(
        model_schema.names, data_schema.names, model_schema.cardinalities, data_schema.cardinalities
    ):
        if rm != rd:
            return f"variable {name_m!r} has {rm} values in the model but {rd} in the data"
        if name_m != name_d:
            return f"model variable {name_m!r} does not match data variable {name_d!r}"
    return "schemas differ"


def _check_match(model, data: Dataset) -> None:
    if model.schema != data.schema:
        raise SchemaError("model and data do not match: " + _describe_mismatch(model.schema, data.schema))


def _prior(args) -> DirichletPrior:
    return DirichletPrior(args.alpha, args.alpha)


def _fit_config(args) -> FitConfig:
    return FitConfig(max_iters=args.max_iters, rel_tol=args.rel_tol, prior=_prior(args), objective=args.objective)


def _init_config(args) -> InitConfig:
    return InitConfig(
        method=args.init, seed=args.seed, marginal_ess=args.marginal_ess, hac_subsample=args.hac_subsample
    )


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _test_metrics(model, test: Dataset | None) -> dict:
    if test is None:
        return {}
    _check_match(model, test)
    out = {"holdout_l_bits": holdout_logl(model, test)}
    if test.labels is not None:
        C = confusion(model, test)
        out["class_acc"] = classification_accuracy(C)
        out["confusion"] = C.tolist()
    return out


# -- gen ------------------------------------------------------------------------


def cmd_gen(args) -> int:
    config = GenConfig(
        n_total=args.n_total,
        n_keep=args.n_keep,
        train_n=args.cases,
        test_n=args.test_cases,
        zipf_exponent=args.zipf_exponent,
        p_max=args.p_max,
        p_min=args.p_min,
        noise_scale=args.noise_scale,
        seed=args.seed,
    )
    out = io.ensure_dir(args.out)
    data = generate(config)
    io.write_csv(data.train, out / "train.csv")
    io.write_csv(data.test, out / "test.csv")
    io.write_schema(data.train.schema, out / "train.csv.schema")
    io.write_schema(data.test.schema, out / "test.csv.schema")
    io.write_generator(data.generator, out / "generator.txt")
    manifest = {**config.as_dict(), "retained": data.retained, "train_file": "train.csv", "test_file": "test.csv"}
    io.write_manifest(manifest, out / "manifest.txt")
    log.info("wrote %d train and %d test cases over %d variables to %s", data.train.N, data.test.N, data.train.schema.n, out)
    return 0


def load_truth(directory) -> ObservedGenerator:
    """The generator of a ``gen`` output directory, seen through its retained variables."""
    directory = Path(directory)
    manifest = io.read_manifest(directory / "manifest.txt")
    retained = np.array([int(t) for t in manifest["retained"].split()], dtype=np.int64)
    gen = io.read_generator(directory / "generator.txt")
    return ObservedGenerator(gen, retained, seed=int(manifest.get("seed", 0)))


# -- fit --------------------------------------------------------------------------


def fit_one(train: Dataset, args):
    """Initialize and train one model (or agglomerate directly for HAC)."""
    if args.algorithm == "hac":
        result = run_hac(train, args.k)
        model = map_estimate(result.stats, _fit_config(args).effective_prior)
        return model, {"iterations": train.N - args.k, "converged": True, "init_s": 0.0, "fit_s": result.seconds}
    t0 = time.perf_counter()
    init = initialize(train, args.k, _init_config(args))
    init_s = time.perf_counter() - t0
    trainer = em_fit if args.algorithm == "em" else cem_fit
    fit = trainer(train, init, _fit_config(args))
    info = {
        "iterations": fit.iterations,
        "converged": fit.converged,
        "final_objective": fit.final_objective,
        "init_s": init_s,
        "fit_s": fit.seconds,
    }
    return fit.model, info


def cmd_fit(args) -> int:
    train, test = _load_pair(args)
    if args.k > train.N:
        raise ConfigError(f"cannot form {args.k} clusters from {train.N} cases")
    model, info = fit_one(train, args)
    t0 = time.perf_counter()
    cs = cheeseman_stutz(train, model)
    resp, ll = e_step(model, train)
    record = {
        "algorithm": args.algorithm,
        "init": None if args.algorithm == "hac" else args.init,
        "K": model.K,
        "seed": args.seed,
        "marginal_l_bits": cs,
        "train_l_bits": ll / (train.N * LN2),
        "effective_k": effective_cluster_count(accumulate_stats(resp, train)),
        "score_s": time.perf_counter() - t0,
        **info,
        **_test_metrics(model, test),
    }
    record["fit_min_per_class"] = record["fit_s"] / 60.0 / model.K
    if args.model_out:
        io.write_model(model, args.model_out)
    _write_json(record, args.record_out)
    return 0


# -- sweep ------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    train, test = _load_pair(args)
    if args.k_max > train.N:
        raise ConfigError(f"k_max {args.k_max} exceeds the {train.N} training cases")
    config = SweepConfig(
        k_min=args.k_min,
        k_max=args.k_max,
        fit=_fit_config(args),
        init=_init_config(args),
        runs_per_k=args.runs_per_k,
        algorithm=args.algorithm,
        score_prior=DirichletPrior(args.score_alpha, args.score_alpha),
    )
    result = sweep_k(train, config)
    out = io.ensure_dir(args.out)
    with open(out / "sweep.tsv", "w") as fh:
        fh.write("K\tcs_bits\titerations\tconverged\tinit_s\tfit_s\tscore_s\trun\n")
        for r in result.records:
            fh.write(
                f"{r.K}\t{r.cs_bits!r}\t{r.fit.iterations}\t{int(r.fit.converged)}\t"
                f"{r.init_seconds!r}\t{r.fit.seconds!r}\t{r.score_seconds!r}\t{r.run}\n"
            )
    best = result.best
    io.write_model(best.model, out / "model_kstar.txt")
    if args.keep_models:
        for r in result.records:
            io.write_model(r.model, out / f"model_K{r.K}.txt")
    summary = {"k_star": result.k_star, "marginal_l_bits": best.cs_bits, **_test_metrics(best.model, test)}
    _write_json(summary, out / "summary.json")
    print(f"K* = {result.k_star}  CS = {best.cs_bits:.4f} bits/case")
    return 0


# -- eval -------------------------------------------------------------------------


def cmd_eval(args) -> int:
    if bool(args.model) == bool(args.truth):
        raise ConfigError("give exactly one of --model or --truth")
    if args.model:
        model = io.read_model(args.model)
        test = _load(args.test, args.schema, args.format, schema=model.schema)
        _check_match(model, test)
        resp, _ = e_step(model, test)
        report = {"K": model.K, "effective_k": effective_cluster_count(resp), **_test_metrics(model, test)}
    else:
        model = load_truth(args.truth)
        model.n_samples = args.truth_samples
        test = _load(args.test, args.schema, args.format)
        report = {"K": model.K, **score_truth(model, test)}
    _write_json(report, args.out)
    return 0


# -- bench ------------------------------------------------------------------------


def _parse_conditions(text: str) -> list[Condition]:
    out = []
    for token in text.split(","):
        token = token.strip()
        parts = token.split(":")
        if parts[0] == "hac" and len(parts) == 1:
            out.append(Condition("hac", algorithm="hac"))
        elif len(parts) == 2 and parts[0] in ("em", "cem") and parts[1] in INIT_METHODS:
            out.append(Condition(token.replace(":", "-"), algorithm=parts[0], init=parts[1]))
        else:
            raise ConfigError(f"bad condition {token!r}; use em:<init>, cem:<init> or hac")
    return out


def _fmt_cell(value) -> str:
    return "" if value is None else repr(float(value))


def write_runs(records, path) -> None:
    cols = record_fields()
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for r in records:
            row = r.as_row()
            fh.write("\t".join(str(row[c]) if isinstance(row[c], (str, int)) else repr(float(row[c])) for c in cols) + "\n")


def read_runs(path) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = []
        for line in fh:
            vals = line.rstrip("\n").split("\t")
            rows.append(dict(zip(header, vals)))
    return rows


def write_summary(rows, failures, path) -> None:
    cols = ["condition", "runs", "failed"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    failed = {}
    for name, _, _ in failures:
        failed[name] = failed.get(name, 0) + 1
    with open(path, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            cells = [row["condition"], str(row["runs"]), str(failed.get(row["condition"], 0))]
            for m in METRICS:
                mean, std = row[m]
                cells += [_fmt_cell(mean), _fmt_cell(std)]
            fh.write("\t".join(cells) + "\n")


def render_table(rows, truth=None) -> str:
    """Aligned text: one column per condition, one line per criterion, mean +- std."""
    labels = {
        "marginal_l_bits": ("Marginal L (bits/case)", 3),
        "k_star": ("K*", 1),
        "effective_k": ("effective K", 1),
        "holdout_l_bits": ("Holdout L (bits/case)", 3),
        "class_acc": ("Class acc", 3),
        "fit_s_per_class": ("Fit s/class", 3),
        "total_s_per_class": ("Init+fit s/class", 3),
        "init_s": ("Init s", 2),
    }
    head = ["criterion"] + [r["condition"] for r in rows]
    lines = [head]
    for key, (label, digits) in labels.items():
        cells = [label]
        for r in rows:
            mean, std = r[key]
            cells.append(f"{mean:.{digits}f}" + ("" if std is None else f" +- {std:.{digits}f}"))
        lines.append(cells)
    widths = [max(len(line[j]) for line in lines) for j in range(len(head))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)
    if truth:
        parts = [f"{k} = {v:.4f}" for k, v in truth.items()]
        text += "\ntrue model: " + ", ".join(parts)
    return text + "\n"


def _bench_data(args):
    if args.data:
        directory = Path(args.data)
        train = _load(directory / "train.csv")
        test = _load(directory / "test.csv", schema=train.schema)
        truth = load_truth(directory) if (directory / "generator.txt").exists() else None
        return train, test, truth
    config = GenConfig(seed=args.data_seed, train_n=args.cases, test_n=args.test_cases)
    data = generate(config)
    truth = ObservedGenerator(data.generator, data.retained, seed=args.data_seed)
    return data.train, data.test, truth


def cmd_bench(args) -> int:
    if bool(args.preset) == bool(args.conditions):
        raise ConfigError("give exactly one of --preset or --conditions")
    if not args.seeds:
        raise ConfigError("at least one seed is required")
    conditions = preset(args.preset) if args.preset else _parse_conditions(args.conditions)
    changes = {}
    for key in ("k_min", "k_max", "rel_tol", "max_iters", "hac_subsample"):
        val = getattr(args, key)
        if val is not None:
            changes[key] = val
    conditions = [replace(c, **changes) for c in conditions]
    for c in conditions:
        if c.k_min > c.k_max:
            raise ConfigError(f"condition {c.name}: k_min > k_max")
    out = io.ensure_dir(args.out)
    train, test, truth = _bench_data(args)
    if args.no_truth:
        truth = None
    result = run_bench(train, test, conditions, args.seeds, truth)
    write_runs(result.records, out / "runs.tsv")
    rows = summarize(result.records)
    write_summary(rows, result.failures, out / "summary.tsv")
    text = render_table(rows, result.truth) if rows else "no successful runs\n"
    if args.preset in ("subsample-size", "hac-scaling") and rows:
        sizes = [c.hac_subsample for c in conditions if any(r.condition == c.name for r in result.records)]
        secs = [row["init_s"][0] for row in rows]
        text += f"HAC time vs N': log-log slope = {loglog_slope(sizes, secs):.3f}\n"
    (out / "summary.txt").write_text(text)
    if result.failures:
        with open(out / "failures.tsv", "w") as fh:
            for name, seed, msg in result.failures:
                fh.write(f"{name}\t{seed}\t{msg}\n")
        log.warning("%d of %d runs failed", len(result.failures), len(result.failures) + len(result.records))
    sys.stdout.write(text)
    return 1 if result.failures else 0


# -- argument parsing -------------------------------------------------------------


def _add_data_args(p, test=True):
    p.add_argument("--train", required=True, help="training data (CSV or event file)")
    if test:
        p.add_argument("--test", help="test data with the same variables")
    p.add_argument("--schema", help="schema file pinning variable cardinalities")
    p.add_argument("--format", choices=["csv", "events"], help="input format (default: by file suffix)")


def _add_fit_args(p):
    p.add_argument("--algorithm", choices=["em", "cem", "hac"], default="em")
    p.add_argument("--init", choices=["random", "marginal", "hac"], default="marginal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=150)
    p.add_argument("--alpha", type=float, default=2.0, help="symmetric Dirichlet hyperparameter for fitting")
    p.add_argument("--objective", choices=["map", "ml"], default="map")
    p.add_argument("--marginal-ess", type=float, default=2.0)
    p.add_argument("--hac-subsample", type=int, default=2000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic train/test data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=32000, help="training cases")
    p.add_argument("--test-cases", type=int, default=8000)
    p.add_argument("--n-total", type=int, default=300)
    p.add_argument("--n-keep", type=int, default=150)
    p.add_argument("--zipf-exponent", type=float, default=1.0)
    p.add_argument("--p-max", type=float, default=0.5)
    p.add_argument("--p-min", type=float, default=0.005)
    p.add_argument("--noise-scale", choices=["variance", "stddev"], default="variance")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit one model with a given K")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--model-out")
    p.add_argument("--record-out", help="JSON run record (default: stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="fit K = k_min..k_max and select K* by Cheeseman-Stutz")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=16)
    p.add_argument("--runs-per-k", type=int, default=1)
    p.add_argument("--score-alpha", type=float, default=1.0, help="Dirichlet hyperparameter inside the score")
    p.add_argument("--keep-models", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a model file (or the true generator) on test data")
    p.add_argument("--model")
    p.add_argument("--truth", help="directory written by gen")
    p.add_argument("--truth-samples", type=int, default=64)
    p.add_argument("--test", required=True)
    p.add_argument("--schema")
    p.add_argument("--format", choices=["csv", "events"])
    p.add_argument("--out", help="JSON report (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run conditions over seeds and tabulate mean +- std")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--conditions", help="comma list such as em:marginal,cem:random,hac")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--data", help="directory written by gen (default: generate)")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=32000)
    p.add_argument("--test-cases", type=int, default=8000)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--hac-subsample", type=int)
    p.add_argument("--no-truth", action="store_true", help="skip scoring the true generator")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (ConfigError, io.ParseError, SchemaError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and signal run failure
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
