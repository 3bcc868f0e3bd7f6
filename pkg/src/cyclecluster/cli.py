"""Command-line front end: ``train``, ``eval``, ``sweep`` and ``gen-data``.

Hyperparameters live in a JSON or TOML config file; flags only select paths
and a few overrides.  Config layout (all keys top level)::

    K = 20                 # required, cluster count
    n_labeled = 6          # required, labels drawn per split (stratified)
    splits = 5             # number of seeded splits (split seeds split_seed + i)
    split_seed = 0
    mode = "cyclecluster"  # or "purely_graphical" / "supervised"
    epochs = 40            # ... any other TrainConfig field

    [data]                 # unless --data is given
    generator = "two_moons"   # or "blobs"; or csv = "path"; or idx_images/idx_labels
    n = 1000
    noise = 0.1
    seed = 0

Exit codes: 0 success, 2 config error, 3 data/shape error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from . import model as nn
from .dataset import (
    DataFormatError,
    generate_blobs,
    generate_two_moons,
    load_csv,
    load_idx_images,
    make_split,
    save_csv,
    save_idx_images,
)
from .trainer import ConfigError, TrainConfig, evaluate, fit, run_experiment, summarize

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RUN_KEYS = {"n_labeled", "splits", "split_seed", "mode", "data", "test_data"}
REQUIRED = ("K", "n_labeled")
MODES = ("cyclecluster", "purely_graphical", "supervised")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"config: cannot read {path}: {exc}") from None
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            return tomllib.loads(text)
        return json.loads(text)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config: {path}: {exc}") from None


def parse_config(raw: dict, overrides=None):
    """Split a raw config dict into ``(TrainConfig, run_options)``."""
    raw = {**raw, **(overrides or {})}
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise CliError(EXIT_CONFIG, "config: missing required key " + ", ".join(f"`{k}`" for k in missing))
    run = {k: raw.pop(k) for k in list(raw) if k in RUN_KEYS}
    run.setdefault("splits", 5)
    run.setdefault("split_seed", 0)
    run.setdefault("mode", "cyclecluster")
    if run["mode"] not in MODES:
        raise CliError(EXIT_CONFIG, f"config: `mode` must be one of {', '.join(MODES)}")
    if not isinstance(run["splits"], int) or run["splits"] < 1:
        raise CliError(EXIT_CONFIG, "config: `splits` must be a positive integer")
    try:
        cfg = TrainConfig.from_dict(raw)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from None
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from None
    return cfg, run


def load_data(spec):
    """``spec`` is a dict from the config or a string from ``--data``:
    ``path.csv`` or ``images.idx,labels.idx``."""
    try:
        if isinstance(spec, str):
            if "," in spec:
                images, labels = spec.split(",", 1)
                return load_idx_images(images, labels)
            return load_csv(spec)
        if not isinstance(spec, dict):
            raise CliError(EXIT_CONFIG, "config: `data` must be a table")
        if "csv" in spec:
            return load_csv(spec["csv"])
        if "idx_images" in spec:
            return load_idx_images(spec["idx_images"], spec["idx_labels"])
        kind = spec.get("generator")
        if kind == "two_moons":
            return generate_two_moons(spec.get("n", 1000), spec.get("noise", 0.1), spec.get("seed", 0))
        if kind == "blobs":
            return generate_blobs(
                spec.get("n", 600), spec.get("classes", 3), spec.get("dim", 2),
                spec.get("separation", 10.0), spec.get("seed", 0), spec.get("std", 1.0),
            )
        raise CliError(EXIT_CONFIG, "config: `data` needs generator, csv or idx_images")
    except (OSError, DataFormatError) as exc:
        raise CliError(EXIT_DATA, f"data: {exc}") from None
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, f"config: data is missing key {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_DATA, f"data: {exc}") from None


def _data_for(args, run):
    spec = args.data if getattr(args, "data", None) else run.get("data")
    if spec is None:
        raise CliError(EXIT_CONFIG, "config: no data given (`data` table or --data)")
    pool = load_data(spec)
    test = None
    tspec = getattr(args, "test_data", None) or run.get("test_data")
    if tspec is not None:
        test = load_data(tspec)
        if test.dim != pool.dim:
            raise CliError(EXIT_DATA, f"data: test pool has d_in={test.dim}, train pool d_in={pool.dim}")
    return pool, test


def _splits(pool, run, n_labeled=None):
    n_l = run["n_labeled"] if n_labeled is None else n_labeled
    try:
        return [make_split(pool, n_l, run["split_seed"] + i) for i in range(run["splits"])]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config: `n_labeled`: {exc}") from None


def _overrides(args):
    out = {}
    if getattr(args, "seed", None) is not None:
        out.update(model_seed=args.seed, shuffle_seed=args.seed, kmeans_seed=args.seed,
                   split_seed=args.seed)
    if getattr(args, "purely_graphical", False):
        out["mode"] = "purely_graphical"
    return out


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    raw = load_config_file(args.config)
    cfg, run = parse_config(raw, _overrides(args))
    pool, test = _data_for(args, run)
    if cfg.K > pool.n:
        raise CliError(EXIT_CONFIG, f"config: `K`={cfg.K} exceeds the pool size {pool.n}")
    splits = _splits(pool, run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metric = "test_error" if test is not None else "unlabeled_error"
    manifest = {
        "version": __version__,
        "config": {**cfg.to_dict(), **{k: v for k, v in run.items() if k not in ("data", "test_data")}},
        "data": run.get("data") if not getattr(args, "data", None) else args.data,
        "dataset_fingerprint": pool.fingerprint(),
        "test_fingerprint": test.fingerprint() if test is not None else None,
        "outputs": {
            "epochs": "epochs.jsonl",
            "checkpoint": "checkpoint.json",
            "summary": "summary.json",
        },
    }
    _dump(out / "manifest.json", manifest)

    errors = []
    mode = run["mode"]
    with open(out / "epochs.jsonl", "w") as log:
        for i, split in enumerate(splits):
            p = pool.with_split(split)

            def write(report, i=i):
                log.write(json.dumps({"split": i, **report.to_json()}) + "\n")

            try:
                params, state, _ = fit(p, cfg, mode, test, on_epoch=write)
            except nn.NumericError as exc:
                epoch = getattr(exc, "epoch", None)
                raise CliError(
                    EXIT_NUMERIC, f"numeric failure in split {i}, epoch {epoch}: {exc}"
                ) from None
            if test is not None:
                errors.append(evaluate(params, test))
            else:
                errors.append(evaluate(params, p, split.unlabeled_ids))
    # checkpoint of the last split
    nn.save_checkpoint(
        out / "checkpoint.json", params, state,
        {"class_count": pool.class_count, "K": cfg.K, "d_in": pool.dim},
    )
    mean, std = summarize(errors)
    summary = {
        "mode": mode,
        "metric": metric,
        "mean_error": mean,
        "std_error": std,
        "errors": errors,
        "n_splits": len(splits),
        "n_labeled": run["n_labeled"],
        "K": cfg.K,
    }
    _dump(out / "summary.json", summary)
    print(f"{metric}: {mean:.4f} +- {std:.4f} over {len(splits)} split(s)")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params, _, meta = nn.load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_DATA, f"checkpoint: {exc}") from None
    pool = load_data(args.data)
    if pool.dim != params.input_dim:
        raise CliError(EXIT_DATA, f"data: expected d_in={params.input_dim}, got d_in={pool.dim}")
    C = meta.get("class_count", pool.class_count)
    if pool.targets.max() >= C:
        raise CliError(EXIT_DATA, f"data: labels exceed the checkpoint's {C} classes")
    from .dataset import Pool

    pool = Pool(pool.features, pool.targets, C)
    err = evaluate(params, pool)
    result = {"error_rate": err, "n": pool.n, "checkpoint": str(args.checkpoint)}
    print(f"error_rate: {err:.4f}")
    if args.out:
        _dump(args.out, result)
    return EXIT_OK


def _sweep_point(job):
    cfg_dict, run, pool, test, n_l, mode = job
    cfg = TrainConfig.from_dict(cfg_dict)
    splits = _splits(pool, run, n_l)
    res = run_experiment(cfg, pool, splits, test, mode=mode)
    return res.mean_error, res.std_error, res.errors


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_sweep(args) -> int:
    raw = load_config_file(args.config)
    cfg, run = parse_config(raw, _overrides(args))
    if args.splits is not None:
        run["splits"] = args.splits
    pool, test = _data_for(args, run)
    Ks = args.K or [cfg.K]
    n_ls = args.n_labeled or [run["n_labeled"]]
    if not Ks or not n_ls:
        raise CliError(EXIT_CONFIG, "sweep: need at least one grid point")
    for K in Ks:
        if not 1 <= K <= pool.n:
            raise CliError(EXIT_CONFIG, f"sweep: K={K} outside [1, {pool.n}]")
    base = cfg.to_dict()
    grid = []
    mode = "cyclecluster" if run["mode"] == "purely_graphical" else run["mode"]
    for n_l in n_ls:
        for K in Ks:
            grid.append(({**base, "K": K}, run, pool, test, n_l, mode))
        if args.purely_graphical:
            grid.append(({**base, "purely_graphical": True}, run, pool, test, n_l, "purely_graphical"))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_point, grid))
    else:
        results = [_sweep_point(job) for job in grid]
    rows = []
    for (cfg_d, _, _, _, n_l, m), (mean, std, errors) in zip(grid, results):
        rows.append({
            "K": cfg_d["K"] if m != "purely_graphical" else "purely_graphical",
            "n_l": n_l,
            "mean_error": mean,
            "std_error": std,
            "splits": len(errors),
        })
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["K", "n_l", "mean_error", "std_error", "splits"],
                                lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "mean_error": f"{r['mean_error']:.6f}", "std_error": f"{r['std_error']:.6f}"})
        text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        if args.kind == "two_moons":
            pool = generate_two_moons(args.n, args.noise, args.seed)
        else:
            pool = generate_blobs(args.n, args.classes, args.dim, args.separation, args.seed)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"gen-data: {exc}") from None
    if args.format == "idx":
        out = Path(args.out)
        save_idx_images(pool, out.with_suffix(".images.idx"), out.with_suffix(".labels.idx"))
    else:
        save_csv(pool, args.out)
    print(f"wrote {pool.n} samples, d_in={pool.dim}, C={pool.class_count}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyclecluster", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train over seeded splits and write run artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", help="CSV path or IMAGES,LABELS IDX pair (overrides config)")
    p.add_argument("--test-data", help="held-out pool, same formats as --data")
    p.add_argument("--seed", type=int, help="override every seed")
    p.add_argument("--purely-graphical", action="store_true", help="skip the clustering pass")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate of a checkpoint on a labeled pool")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the result as JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over K and/or label budgets")
    p.add_argument("--config", required=True)
    p.add_argument("--K", type=_int_list, help="comma-separated cluster counts")
    p.add_argument("--n-labeled", type=_int_list, help="comma-separated label budgets")
    p.add_argument("--splits", type=int)
    p.add_argument("--data")
    p.add_argument("--test-data")
    p.add_argument("--seed", type=int)
    p.add_argument("--purely-graphical", action="store_true", help="add a purely graphical baseline row")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="table file")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="write a synthetic pool")
    p.add_argument("--kind", choices=("two_moons", "blobs"), default="two_moons")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "idx"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
