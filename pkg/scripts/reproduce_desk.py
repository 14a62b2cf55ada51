"""Run every experiment family at desk scale into one output tree.

    python3 scripts/reproduce_desk.py --out runs/desk [--jobs N] [--only train,ibplane]

Each family writes its own subdirectory with CSV/JSON results, SVG charts and
a manifest.json that ``sib rerun`` accepts.
"""

import argparse
import sys

from sib.cli import main as sib

FAMILIES = {
    "train": ["train", "--variant", "svib", "--k", "0,1,2,3", "--seed", "0,1,2"],
    "ibplane": ["ibplane", "--variant", "svib", "--k", "2", "--seed", "0"],
    "dropout": ["dropout", "--variant", "svib", "--k", "6", "--seed", "0,1,2"],
    "verify-theorem": ["verify-theorem"],
    "estimate-mi": ["estimate-mi"],
}


def run(out: str, jobs: int, only: list[str]) -> int:
    worst = 0
    for name in only:
        argv = FAMILIES[name] + ["--out", f"{out}/{name}"]
        if jobs > 1 and name in ("train", "ibplane", "dropout"):
            argv += ["--jobs", str(jobs)]
        print(f"== {name}: sib {' '.join(argv)}", flush=True)
        worst = max(worst, sib(argv))
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", default=",".join(FAMILIES))
    a = ap.parse_args()
    sys.exit(run(a.out, a.jobs, [s for s in a.only.split(",") if s]))
