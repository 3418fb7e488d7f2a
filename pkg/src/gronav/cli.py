"""Command-line entry point: ``gronav run ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .global_planner import GraphConstructionError
from .harness import ALIASES, VARIANTS, MethodVariant, RemoteConfig, emit_outputs, parse_variant, run_batch
from .scenarios import BUNDLED, bundled_path
from .world import ScenarioParseError, ScenarioValidationError, load_scenario


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists() or arg not in BUNDLED:
        return p
    return bundled_path(arg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gronav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a batch of seeded trials")
    run.add_argument("--scenario", required=True, help=f"scenario JSON path or bundled name ({', '.join(BUNDLED)})")
    run.add_argument(
        "--variant",
        action="append",
        choices=sorted(set(VARIANTS) | set(ALIASES)),
        help="method variant; repeat for several (default: full)",
    )
    run.add_argument("--backend", choices=("mock", "remote"), default="mock")
    run.add_argument("--trials", type=int, default=10)
    run.add_argument("--seed", type=int, default=0, help="base seed; trial i uses seed + i")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--plot", action="store_true", help="write trajectories.png")
    run.add_argument("--emit-marked-image", metavar="PATH", help="write the marked aerial PNG")
    run.add_argument("--trace", action="store_true", help="write per-trial JSON-lines traces under OUT/traces")
    run.add_argument("--workers", type=int, default=1, help="parallel trial processes (mock backend only)")
    run.add_argument("--vlm-url", default="http://localhost:8000/v1", help="chat-completions base URL")
    run.add_argument("--vlm-model", default="gpt-4o", help="model name sent to the remote endpoint")
    run.add_argument("--vlm-timeout", type=float, default=10.0)
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return 2
    try:
        sc = load_scenario(_scenario_path(args.scenario))
    except (OSError, ScenarioParseError, ScenarioValidationError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return 2
    remote = RemoteConfig(args.vlm_url, args.vlm_model, args.vlm_timeout) if args.backend == "remote" else None
    variants = [MethodVariant(parse_variant(v), args.backend, remote) for v in (args.variant or ["full"])]
    out = Path(args.out)
    try:
        batch = run_batch(
            sc,
            variants,
            args.trials,
            args.seed,
            workers=args.workers,
            trace_dir=out / "traces" if args.trace else None,
        )
        emit_outputs(sc, batch, out, plot=args.plot, marked_image=args.emit_marked_image)
    except (GraphConstructionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for row in batch.summary:
        print(
            f"{row.variant:13s} success={row.success_rate:.2f} "
            f"norm_len={row.norm_traj_length:.3f} imu={row.imu_energy:.1f}"
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    if args.command == "run":
        return cmd_run(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
