"""Command-line entry point: ``flexsec {generate,train,compare,timing,plot}``.

Exit codes: 0 success, 2 configuration error, 3 missing artifact, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4
CELL_SEED_STRIDE = 1_000_003

log = logging.getLogger("flexsec")


class SchemaError(ValueError):
    """A CSV handed to ``plot`` lacks the columns its figure family needs."""


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with [sim] [solver] [model] [train] [experiment]")
    common.add_argument("--seed", type=int, help="base seed (overrides the relevant config seed)")
    common.add_argument("--out", type=Path, help="output directory (default: experiment.out)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--methods", help="comma-separated subset of gnn-csi,gnn-distance,classical,hd,max-power")
    common.add_argument("--mode", choices=("csi", "distance"), help="GNN eavesdropper input")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flexsec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write held-out realizations per grid cell")
    tr = sub.add_parser("train", parents=[common], help="train the pair GNN for grid cells")
    tr.add_argument("--cell", action="append", metavar="N,K",
                    help="train only this (pairs, eavesdroppers) cell; repeatable")
    tr.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    sub.add_parser("compare", parents=[common], help="ASSR table for every cell and method")
    sub.add_parser("timing", parents=[common], help="median runtimes over N and K sweeps")
    pl = sub.add_parser("plot", parents=[common], help="emit matplotlib scripts for result CSVs")
    pl.add_argument("csv", nargs="+", type=Path)
    return p


def _overrides(args):
    """CLI flags as (section, key, value) triples, applied after file and env."""
    out = []
    if args.seed is not None:
        out += [("sim", "seed", args.seed), ("train", "seed", args.seed),
                ("experiment", "test_seed", args.seed)]
    if args.out is not None:
        out.append(("experiment", "out", str(args.out)))
    if args.workers is not None:
        out.append(("experiment", "workers", args.workers))
    if args.methods is not None:
        out.append(("experiment", "methods", args.methods))
    if args.mode is not None:
        out.append(("model", "mode", args.mode))
    return out


def _provenance(cfg, seed):
    from .experiments import version_string
    return {"config_hash": cfg.digest(), "seed": seed, "version": version_string()}


def _write_csv(path, columns, rows, prov):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns + list(prov))
        w.writeheader()
        for row in rows:
            w.writerow({**row, **prov})


def _cell_sim(cfg, n_pairs, n_eves, seed=None):
    fields = dataclasses.asdict(cfg.sim)
    fields.update(n_pairs=n_pairs, n_eves=n_eves)
    if seed is not None:
        fields["seed"] = seed
    return type(cfg.sim)(**fields)


# -- generate ----------------------------------------------------------------------

def cmd_generate(cfg, args):
    from . import channel as ch
    from .experiments import dataset_path

    ex = cfg.experiment
    root = Path(ex.out)
    manifest_path = root / "manifest.json"
    previous = json.loads(manifest_path.read_text()) if manifest_path.exists() else None
    cells = []
    for idx, (n_pairs, n_eves) in enumerate(ex.cells()):
        seed = ex.test_seed + idx * CELL_SEED_STRIDE
        reals = ch.generate_many(_cell_sim(cfg, n_pairs, n_eves), ex.n_test, seed=seed)
        path = dataset_path(root, n_pairs, n_eves)
        path.parent.mkdir(parents=True, exist_ok=True)
        ch.save_dataset(path, reals)
        cells.append({"N": n_pairs, "K": n_eves, "count": ex.n_test, "seed": seed,
                      "file": str(path.relative_to(root)),
                      "sha256": hashlib.sha256(path.read_bytes()).hexdigest()})
        log.info("wrote %d realizations for N=%d K=%d", ex.n_test, n_pairs, n_eves)
    manifest = {**_provenance(cfg, ex.test_seed), "cells": cells, "config": cfg.to_dict()}
    if previous and previous.get("config_hash") == manifest["config_hash"] and \
            [c["sha256"] for c in previous.get("cells", [])] != [c["sha256"] for c in cells]:
        log.warning("config hash %s already names different data in %s",
                    manifest["config_hash"], manifest_path)
    manifest_path.write_text(json.dumps(manifest, indent=2, default=list))
    print(manifest_path)
    return EXIT_OK


def load_cell(root, n_pairs, n_eves):
    from .channel import load_dataset
    from .experiments import MissingArtifact, dataset_path

    path = dataset_path(root, n_pairs, n_eves)
    if not path.exists():
        raise MissingArtifact(f"no dataset for cell N={n_pairs}, K={n_eves} ({path}); run generate")
    return load_dataset(path)


# -- train -------------------------------------------------------------------------

def _parse_cells(items, default):
    if not items:
        return default
    out = []
    for item in items:
        try:
            n, k = (int(v) for v in item.split(","))
        except ValueError as exc:
            from .config import ConfigError
            raise ConfigError(f"--cell expects N,K, got {item!r}") from exc
        out.append((n, k))
    return out


def cmd_train(cfg, args):
    from .experiments import HISTORY_COLUMNS, MissingArtifact, checkpoint_path
    from .gnn import PairGNN
    from .secrecy import LN2
    from .training import train

    mode = cfg.model.mode
    root = Path(cfg.experiment.out)
    status = []
    for n_pairs, n_eves in _parse_cells(args.cell, cfg.experiment.cells()):
        sim = _cell_sim(cfg, n_pairs, n_eves)
        path = checkpoint_path(root, mode, n_pairs, n_eves)
        hist_path = path.with_suffix(".history.csv")
        model, start, rows = None, 0, []
        model_cfg = dataclasses.replace(cfg.model, n_eves=n_eves, area_side_m=sim.area_side_m)
        if args.resume:
            if not path.exists():
                raise MissingArtifact(f"cannot resume cell N={n_pairs}, K={n_eves}: {path} missing")
            model = PairGNN(model_cfg)
            extra = model.load(path)
            start = int(extra.get("next_epoch", 0))
            rows = extra.get("history", [])
            model_cfg = None
        prov = _provenance(cfg, cfg.train.seed)

        def on_epoch(row):
            rows.append({"epoch": row["epoch"], "train_loss": row["train_loss"],
                         "val_assr_nats": row["val_assr"], "val_assr_bits": row["val_assr"] / LN2,
                         "wall_seconds": row["seconds"]})
            _write_csv(hist_path, HISTORY_COLUMNS, rows, prov)

        model, hist = train(cfg.train, sim, mode, model_cfg=model_cfg, model=model,
                            start_epoch=start, on_epoch=on_epoch)
        early = len(hist) < cfg.train.epochs
        path.parent.mkdir(parents=True, exist_ok=True)
        model.save(path, extra={"next_epoch": start + len(hist), "history": rows,
                                "stopped_early": early, **prov})
        status.append(f"N={n_pairs} K={n_eves} {mode}: {len(hist)} epochs, "
                      f"{'early stop' if early else 'completed'}, checkpoint {path}")
    print("\n".join(status))
    return EXIT_OK


# -- compare -----------------------------------------------------------------------

def _compare_cell(job):
    root, cfg, n_pairs, n_eves = job
    from .experiments import GNN_MODES, assr_row, load_model, method_values

    reals = load_cell(root, n_pairs, n_eves)
    rows = []
    for method in cfg.experiment.methods:
        model = load_model(root, method, n_pairs, n_eves) if method in GNN_MODES else None
        rows.append(assr_row(n_pairs, n_eves, method,
                             method_values(method, reals, cfg.solver, model)))
    return rows


def cmd_compare(cfg, args):
    from .experiments import ASSR_COLUMNS

    root = Path(cfg.experiment.out)
    jobs = [(root, cfg, n, k) for n, k in cfg.experiment.cells()]
    if cfg.experiment.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.experiment.workers) as pool:
            results = list(pool.map(_compare_cell, jobs))
    else:
        results = [_compare_cell(j) for j in jobs]
    rows = [r for cell in results for r in cell]
    out = root / "compare.csv"
    manifest = root / "manifest.json"
    seed = json.loads(manifest.read_text())["seed"] if manifest.exists() else cfg.experiment.test_seed
    _write_csv(out, ASSR_COLUMNS, rows, _provenance(cfg, seed))
    print(out)
    return EXIT_OK


# -- timing ------------------------------------------------------------------------

def cmd_timing(cfg, args):
    from .experiments import GNN_MODES, TIMING_COLUMNS, checkpoint_path, timing_sweep
    from .gnn import PairGNN

    ex = cfg.experiment
    root = Path(ex.out)
    n_sweep = [(n, ex.timing_fixed_n_eves) for n in ex.timing_n_pairs]
    k_sweep = [(ex.timing_fixed_n_pairs, k) for k in ex.timing_n_eves if
               (ex.timing_fixed_n_pairs, k) not in n_sweep]
    models = {}
    for method, mode in GNN_MODES.items():
        path = checkpoint_path(root, mode, ex.timing_fixed_n_pairs, ex.timing_fixed_n_eves)
        if method in ex.methods and path.exists():
            models[method] = PairGNN.from_checkpoint(path)
    rows = timing_sweep(n_sweep + k_sweep, ex.methods, ex.timing_runs, cfg.sim, cfg.solver,
                        models, seed=ex.test_seed)
    out = root / "timing.csv"
    _write_csv(out, TIMING_COLUMNS, rows, _provenance(cfg, ex.test_seed))
    print(out)
    return EXIT_OK


# -- plot --------------------------------------------------------------------------

ASSR_PLOT = '''"""Grouped bars of ASSR per (N, K) cell and method."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {path!r}
with open(path) as fh:
    rows = list(csv.DictReader(fh))
cells = sorted({{(int(r["N"]), int(r["K"])) for r in rows}})
methods = list(dict.fromkeys(r["method"] for r in rows))
val = defaultdict(dict)
err = defaultdict(dict)
for r in rows:
    key = (int(r["N"]), int(r["K"]))
    val[r["method"]][key] = float(r["assr_bits"])
    err[r["method"]][key] = float(r["std_error"]) / 0.6931471805599453
width = 0.8 / len(methods)
fig, ax = plt.subplots(figsize=(1.2 * len(cells) + 3, 4))
for i, m in enumerate(methods):
    xs = [j + i * width for j in range(len(cells))]
    ax.bar(xs, [val[m].get(c, 0.0) for c in cells], width,
           yerr=[err[m].get(c, 0.0) for c in cells], label=m)
ax.set_xticks([j + 0.4 - width / 2 for j in range(len(cells))])
ax.set_xticklabels([f"{{2 * n}} users\\nK={{k}}" for n, k in cells])
ax.set_ylabel("ASSR (bits/channel use)")
ax.legend()
fig.tight_layout()
fig.savefig({stem!r} + ".png", dpi=150)
'''

TIMING_PLOT = '''"""Median runtime against N and against K on log-log axes."""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {path!r}
with open(path) as fh:
    rows = list(csv.DictReader(fh))
n_fixed, k_fixed = {n_fixed}, {k_fixed}
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, axis, fixed_col, fixed in ((axes[0], "N", "K", k_fixed), (axes[1], "K", "N", n_fixed)):
    series = defaultdict(list)
    for r in rows:
        if int(r[fixed_col]) == fixed:
            series[r["method"]].append((int(r[axis]), float(r["median_s"]), float(r["iqr_s"])))
    for m, pts in series.items():
        pts.sort()
        ax.errorbar([p[0] for p in pts], [p[1] for p in pts], yerr=[p[2] / 2 for p in pts],
                    marker="o", label=m)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("median seconds per instance")
    ax.legend()
fig.tight_layout()
fig.savefig({stem!r} + ".png", dpi=150)
'''


def _read_header(path):
    from .experiments import MissingArtifact

    if not path.exists():
        raise MissingArtifact(f"no CSV at {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        first = next(reader, None)
    return header or [], first is not None


def plot_script(path, n_fixed=4, k_fixed=2):
    """Return ``(script_name, source)`` for a compare or timing CSV."""
    from .experiments import ASSR_COLUMNS, TIMING_COLUMNS

    header, has_rows = _read_header(path)
    families = {"assr": (ASSR_COLUMNS, ASSR_PLOT), "timing": (TIMING_COLUMNS, TIMING_PLOT)}
    # pick the family whose columns overlap the header most
    name, (cols, template) = max(families.items(), key=lambda kv: len(set(kv[1][0]) & set(header)))
    missing = [c for c in cols if c not in header]
    if missing or not has_rows:
        what = f"missing columns {missing}" if missing else "no data rows"
        raise SchemaError(f"{path}: {what} for a {name} plot")
    stem = f"plot_{name}_{path.stem}"
    return stem + ".py", template.format(path=str(path), stem=stem, n_fixed=n_fixed,
                                         k_fixed=k_fixed)


def cmd_plot(cfg, args):
    out = Path(cfg.experiment.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.csv:
        name, src = plot_script(path, cfg.experiment.timing_fixed_n_pairs,
                                cfg.experiment.timing_fixed_n_eves)
        (out / name).write_text(src)
        print(out / name)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "compare": cmd_compare,
            "timing": cmd_timing, "plot": cmd_plot}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "timing":
        # single-threaded BLAS; only effective if numpy is not yet loaded
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"
        if args.workers not in (None, 1):
            log.warning("timing runs with a single worker; ignoring --workers %s", args.workers)
        args.workers = 1

    from .config import ConfigError, load_config
    from .experiments import MissingArtifact

    try:
        cfg = load_config(args.config, overrides=_overrides(args))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SchemaError) as exc:
        print(f"flexsec: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"flexsec: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - any other failure maps to one exit code
        log.debug("runtime failure", exc_info=True)
        print(f"flexsec: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
