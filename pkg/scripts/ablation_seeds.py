"""Generate the synthetic corpus and run the ablation CLI over several seeds."""

import argparse
import sys

from td2ip.cli import main as td2ip


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/ablation")
    ap.add_argument("--config", help="RunConfig JSON passed through to the ablate command")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()

    data = f"{args.workdir}/data"
    force = ["--force"] if args.force else []
    code = td2ip(["gen", "--out", data, "--sequences", "200", "--frames", "40", "--joints", "8",
                  "--seed", "7"] + force)
    if code:
        return code
    cmd = ["-v", "ablate", "--data", data, "--out", f"{args.workdir}/out", "--seeds", *map(str, args.seeds)] + force
    if args.config:
        cmd += ["--config", args.config]
    return td2ip(cmd)


if __name__ == "__main__":
    sys.exit(main())
