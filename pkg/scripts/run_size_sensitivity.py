"""Mean predicted cavity affordance for an object and its 2x-scaled copy on held-out cabinet scenes."""
import argparse
import json
import logging

from objaff import experiments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0, help="training seed of the full fitting model")
    ap.add_argument("--scenes", type=int, default=10)
    ap.add_argument("--factor", type=float, default=experiments.SIZE_FACTOR)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    model = experiments.trained_fitting_model("full", args.seed)
    rows = experiments.size_sensitivity(model, args.scenes, args.factor)
    drops = 0
    for r in rows:
        drop = r["scaled"] < r["base"]
        drops += drop
        print(f"scene {r['scene_seed']}: base {r['base']:.4f}  scaled {r['scaled']:.4f}  {'lower' if drop else 'not lower'}")
    print(f"scaled object lowers cavity affordance on {drops}/{len(rows)} scenes")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
