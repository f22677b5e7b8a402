"""Node/link/state counts while training on a growing prefix of the stream.

Writes one CSV row per step and reports where each count becomes
stationary (growth under 1% for 10 consecutive steps).

    python3 scripts/training_curve.py --steps 100 --noise 0 --out curve.csv
    python3 scripts/training_curve.py --ecommerce --prune 1000
"""

import argparse
import json
import sys

from isanalytics import synth
from isanalytics.behavior_model import prune_stale, train


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=float, default=23.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.005, help="sporadic event rate")
    p.add_argument("--ecommerce", action="store_true", help="add a shop with a fresh account per customer")
    p.add_argument("--prune", type=int, help="then drop states unused for this many experiences")
    p.add_argument("--out")
    a = p.parse_args(argv)

    if a.ecommerce:
        cfg = synth.scaled(synth.ecommerce_config(a.seed, a.days), noise_rate=a.noise)
    else:
        cfg = synth.GeneratorConfig(seed=a.seed, days=a.days, noise_rate=a.noise)
    events, _ = synth.generate(cfg)
    model, rep = train(events, steps=a.steps)
    if a.out:
        with open(a.out, "w", newline="") as fh:
            fh.write(rep.to_csv())
    else:
        sys.stdout.write(rep.to_csv())
    summary = {"events": len(events), "stationary_step": rep.stationary_step, "states": model.state_count()}
    if a.prune is not None:
        summary["pruned"] = prune_stale(model, a.prune)
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    main()
