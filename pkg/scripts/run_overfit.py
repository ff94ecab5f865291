"""Fit the full model to a small placement dataset and report the training F-score."""
import argparse
import json
import logging

from objaff import experiments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--max-steps", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    res = experiments.overfit_placement(args.trials, args.max_steps, args.seed)
    print(f"{res['trials']} trials ({res['positives']} positive): training F {res['f_score']:.1f} "
          f"after {res['steps']} steps in {res['seconds']:.0f} s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(res, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
