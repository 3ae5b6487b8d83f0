"""Desk-scale run of all five ablation variants on the synthetic corpus.

Prints, per variant, the loss ratio (final / untrained) and the relative gain in
validation MPJPE, then the ablation table. Takes a couple of minutes with gru.
"""

import argparse
import json
import time

from td2ip.config import RunConfig
from td2ip.data import synth_generate
from td2ip.training import ablation_run, format_ablation_table, prepare_data


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="RunConfig JSON; defaults are the desk settings")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--sequences", type=int, default=200)
    ap.add_argument("--frames", type=int, default=40)
    ap.add_argument("--json", help="write per-variant numbers here")
    args = ap.parse_args()

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    seqs = synth_generate(args.data_seed, args.sequences, args.frames, cfg.joints, float(cfg.fps), "mixed")
    data = prepare_data(seqs, cfg.t_p, cfg.t_f, cfg.window_stride, cfg.normalize, cfg.val_fraction)
    print(f"{len(data.train)} training windows, {len(data.val)} validation windows, encoder {cfg.encoder}")

    t0 = time.perf_counter()
    rows = ablation_run(data, cfg.model_config(), cfg.train_config(), cfg.horizon_spec(), [cfg.seed],
                        cfg.average_over, on_variant=lambda v, s, logs: print(f"  done {v.name}"))
    elapsed = time.perf_counter() - t0

    for r in rows:
        ratio = r.final_loss[0] / r.initial_loss[0]
        gain = 1.0 - r.mpjpe[0] / r.untrained_mpjpe[0]
        print(f"{r.variant.name:>10}  L ratio {ratio:.3f}  val MPJPE {r.untrained_mpjpe[0]:.2f} -> {r.mpjpe[0]:.2f} mm"
              f"  ({gain:.1%})")
    print(format_ablation_table(rows), end="")
    print(f"{elapsed:.0f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"seconds": elapsed, "rows": [r.to_json() for r in rows]}, fh, indent=2)


if __name__ == "__main__":
    main()
