"""Run the scenario configs in ``configs/`` and report exit codes.

    python scripts/run_configs.py            # quick configs only
    python scripts/run_configs.py --all      # include the long ARP sweep and GRAPE design
    python scripts/run_configs.py bands ramsey
"""

import argparse
import sys
import time
from pathlib import Path

from latticectl.cli import main as latticectl

ROOT = Path(__file__).resolve().parent.parent
QUICK = ["bands", "depth_scan", "simulate_square", "arp_sweep_quick", "arp_3level", "ramsey", "compare"]
LONG = ["grape_design", "arp_sweep"]


def run(names, out_root: Path) -> int:
    worst = 0
    for name in names:
        cfg = ROOT / "configs" / f"{name}.yaml"
        t0 = time.perf_counter()
        code = latticectl(["run", str(cfg), "--out", str(out_root / name)])
        print(f"{name:18s} exit {code}  {time.perf_counter() - t0:8.1f} s")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", help="config stems; default: the quick set")
    ap.add_argument("--all", action="store_true", help="also run the long configs")
    ap.add_argument("--out", default=str(ROOT / "out"))
    args = ap.parse_args()
    names = args.names or (QUICK + LONG if args.all else QUICK)
    sys.exit(run(names, Path(args.out)))
