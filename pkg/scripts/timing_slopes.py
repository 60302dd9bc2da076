"""Median runtimes over the N and K sweeps plus their log-log slopes."""
import argparse

from flexsec.channel import SimConfig
from flexsec.experiments import loglog_slope, timing_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--fixed-n", type=int, default=4)
    ap.add_argument("--fixed-k", type=int, default=2)
    args = ap.parse_args()
    sim, methods = SimConfig(), ["gnn-csi", "classical"]
    sweeps = {
        "N": timing_sweep([(n, args.fixed_k) for n in (2, 4, 8, 16, 32)], methods, args.runs, sim),
        "K": timing_sweep([(args.fixed_n, k) for k in (2, 4, 8, 16)], methods, args.runs, sim),
    }
    for key, rows in sweeps.items():
        for m in methods:
            sel = [r for r in rows if r["method"] == m]
            meds = "  ".join(f"{r[key]}:{r['median_s']:.2e}" for r in sel)
            slope = loglog_slope([r[key] for r in sel], [r["median_s"] for r in sel])
            print(f"{m:<10} over {key}: slope {slope:5.2f}   {meds}")


if __name__ == "__main__":
    main()
