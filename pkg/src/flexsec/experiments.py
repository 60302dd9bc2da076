"""Method evaluation, ASSR tables and runtime sweeps shared by the CLI and scripts."""
from __future__ import annotations

import math
import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import classical as cl
from .channel import SimConfig, generate_many
from .gnn import ModelConfig, PairGNN
from .secrecy import LN2, sum_secrecy

GNN_MODES = {"gnn-csi": "csi", "gnn-distance": "distance"}
ASSR_COLUMNS = ["N", "K", "method", "assr_nats", "assr_bits", "std_error", "n"]
TIMING_COLUMNS = ["N", "K", "method", "median_s", "iqr_s", "runs"]
HISTORY_COLUMNS = ["epoch", "train_loss", "val_assr_nats", "val_assr_bits", "wall_seconds"]
PROVENANCE_COLUMNS = ["config_hash", "seed", "version"]


class MissingArtifact(FileNotFoundError):
    """A dataset or checkpoint needed by a command is absent."""


def version_string():
    """Package version plus ``git describe`` output when run from a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def checkpoint_path(root, mode, n_pairs, n_eves):
    return Path(root) / "models" / f"{mode}_N{n_pairs}_K{n_eves}.ckpt"


def dataset_path(root, n_pairs, n_eves):
    return Path(root) / "data" / f"N{n_pairs}_K{n_eves}.bin"


def load_model(root, method, n_pairs, n_eves):
    path = checkpoint_path(root, GNN_MODES[method], n_pairs, n_eves)
    if not path.exists():
        raise MissingArtifact(f"no {method} checkpoint for cell N={n_pairs}, K={n_eves} ({path})")
    return PairGNN.from_checkpoint(path)


def method_values(method, reals, solver_cfg=None, model=None):
    """Per-instance clamped sum secrecy rates (nats) of one method."""
    if method in GNN_MODES:
        if model is None:
            raise ValueError(f"{method} needs a trained model")
        scheds = model.infer_batch(reals)
    elif method == "classical":
        scheds = [cl.solve(r, solver_cfg).schedule for r in reals]
    elif method == "hd":
        scheds = [cl.baseline_hd(r, solver_cfg) for r in reals]
    elif method == "max-power":
        scheds = [cl.baseline_max_power(r) for r in reals]
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.array([sum_secrecy(r, s) for r, s in zip(reals, scheds)])


def assr_row(n_pairs, n_eves, method, values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {"N": n_pairs, "K": n_eves, "method": method, "assr_nats": mean,
            "assr_bits": mean / LN2, "std_error": se, "n": n}


# -- timing ----------------------------------------------------------------------

def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def time_method(method, reals, solver_cfg=None, model=None, gnn_batch=64):
    """Wall-clock seconds per instance, one sample per realization.

    Classical and baseline samples are single solves. GNN samples time one
    batched inference over ``gnn_batch`` copies of the realization and divide
    by the batch size, which keeps interpreter overhead from masking how the
    per-instance work scales with N.
    """
    out = []
    for r in reals:
        if method in GNN_MODES:
            batch = [r] * gnn_batch
            model.infer_batch(batch[:1])  # warm caches for this shape
            out.append(_timed(lambda: model.infer_batch(batch)) / gnn_batch)
        elif method == "classical":
            out.append(_timed(lambda: cl.solve(r, solver_cfg)))
        elif method == "hd":
            out.append(_timed(lambda: cl.baseline_hd(r, solver_cfg)))
        elif method == "max-power":
            out.append(_timed(lambda: cl.baseline_max_power(r)))
        else:
            raise ValueError(f"unknown method {method!r}")
    return np.array(out)


def timing_row(n_pairs, n_eves, method, seconds):
    q1, med, q3 = np.percentile(seconds, [25, 50, 75])
    return {"N": n_pairs, "K": n_eves, "method": method, "median_s": float(med),
            "iqr_s": float(q3 - q1), "runs": len(seconds)}


def timing_sweep(cells, methods, runs, sim: SimConfig, solver_cfg=None, models=None, seed=0):
    """Median/IQR rows for every (N, K) cell and method.

    ``models`` maps a GNN method name to a model; without one an untrained
    model of the right shape is used, since inference cost does not depend on
    the weights. Realization generation happens outside the timed region.
    """
    rows = []
    models = models or {}
    for n_pairs, n_eves in cells:
        cell_sim = SimConfig(**{**sim.__dict__, "n_pairs": n_pairs, "n_eves": n_eves})
        reals = generate_many(cell_sim, runs, seed=seed)
        for method in methods:
            model = None
            if method in GNN_MODES:
                model = models.get(method)
                if model is None or model.cfg.n_eves != n_eves:
                    model = PairGNN(ModelConfig(mode=GNN_MODES[method], n_eves=n_eves,
                                                area_side_m=sim.area_side_m))
            rows.append(timing_row(n_pairs, n_eves, method,
                                   time_method(method, reals, solver_cfg, model)))
    return rows


def loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
