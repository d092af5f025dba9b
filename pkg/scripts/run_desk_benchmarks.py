"""Run the desk-scale benchmark grid and print the aggregate table.

Defaults reproduce the headline safety comparison: obstacle worlds at
n=6 and n=8, all five shield modes, 10 episodes each at the desk planner
profile.  Winning regions are cached next to the CSV so reruns only pay
for the episodes.
"""

import argparse
from pathlib import Path

from safepomcp.domains import GridSpec
from safepomcp.harness import (
    DESK_PROFILE,
    ExperimentConfig,
    ModelSource,
    run_experiment,
)
from safepomcp.pomcp import PlannerConfig
from safepomcp.shield import ShieldMode

FAMILIES = ("obstacle", "refuel", "rocksample")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", choices=FAMILIES, default="obstacle")
    parser.add_argument("--sizes", type=int, nargs="+", default=[6, 8],
                        help="grid side lengths (default: 6 8)")
    parser.add_argument("--modes", nargs="+",
                        default=[m.value for m in ShieldMode],
                        help="shield modes (default: all five)")
    parser.add_argument("--episodes", type=int, default=10)
    parser.add_argument("--seed-base", type=int, default=0)
    parser.add_argument("--quick", action="store_true",
                        help="200-simulation smoke profile instead of desk")
    parser.add_argument("--out-dir", default="bench_out",
                        help="directory for the CSV and region cache")
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    planner = (
        PlannerConfig(simulations=200, depth=50, particles=200)
        if args.quick else DESK_PROFILE
    )
    cfg = ExperimentConfig(
        sources=tuple(
            ModelSource(family=args.family, grid=GridSpec(n=n))
            for n in args.sizes
        ),
        modes=tuple(ShieldMode.from_name(name) for name in args.modes),
        planner=planner,
        episodes=args.episodes,
        seed_base=args.seed_base,
        cache_dir=str(out_dir / "cache"),
        output=str(out_dir / f"{args.family}_desk.csv"),
    )
    report = run_experiment(cfg)
    print(report.table_text(), end="")
    print(f"wrote {cfg.output}")


if __name__ == "__main__":
    main()
