"""Train full and kernel-ablated fitting critics per seed and compare their test AP."""
import argparse
import json
import logging

from objaff import experiments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=experiments.ABLATION_STEPS)
    ap.add_argument("--out", default=None, help="optional JSON file for the per-seed rows")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    rows = experiments.ablation(tuple(args.seeds), args.steps)
    wins = 0
    for r in rows:
        win = r["full"]["ap"] >= r["ablated"]["ap"]
        wins += win
        print(f"seed {r['seed']}: full AP {r['full']['ap']:.2f}  ablated AP {r['ablated']['ap']:.2f}  "
              f"{'full >= ablated' if win else 'ablated ahead'}")
    print(f"full model at least as good on {wins}/{len(rows)} seeds")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
