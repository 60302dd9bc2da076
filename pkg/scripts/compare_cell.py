"""Train both GNN variants on one (N, K) cell and print an ASSR table.

    python3 scripts/compare_cell.py --pairs 2 --eves 2 --epochs 100
"""
import argparse
import logging
import time

from flexsec.channel import SimConfig, generate_many
from flexsec.experiments import assr_row, method_values
from flexsec.secrecy import LN2
from flexsec.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=2)
    ap.add_argument("--eves", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--n-train", type=int, default=10000)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--test-seed", type=int, default=555_000)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sim = SimConfig(n_pairs=args.pairs, n_eves=args.eves, seed=args.seed)
    cfg = TrainConfig(n_train=args.n_train, epochs=args.epochs, seed=args.seed)
    test = generate_many(sim, args.n_test, seed=args.test_seed)

    rows = []
    for mode in ("csi", "distance"):
        t0 = time.perf_counter()
        model, hist = train(cfg, sim, mode)
        print(f"gnn-{mode}: {len(hist)} epochs in {time.perf_counter() - t0:.0f}s")
        vals = method_values(f"gnn-{mode}", test, model=model)
        rows.append(assr_row(args.pairs, args.eves, f"gnn-{mode}", vals))
    for method in ("classical", "hd", "max-power"):
        rows.append(assr_row(args.pairs, args.eves, method, method_values(method, test)))

    print(f"\nN={args.pairs} K={args.eves}, {args.n_test} held-out realizations")
    print(f"{'method':<14}{'nats':>8}{'bits':>8}{'s.e.':>8}")
    for r in rows:
        print(f"{r['method']:<14}{r['assr_nats']:8.3f}{r['assr_nats'] / LN2:8.3f}{r['std_error']:8.3f}")


if __name__ == "__main__":
    main()
