"""Command-line entry point: ``ctrlmac-cosim <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cosim import run_scenario
from .metrics import compute_metrics, emit_csv
from .plant import ModelError, PlantDivergence
from .queueing import delay_table
from .scenario import ScenarioError, parse_scenario
from .stability import build_augmented, max_allowable_delay
from .studies import run_study

log = logging.getLogger("ctrlmac_cosim")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _out(args, name: str) -> Path | None:
    if args.out_dir is None:
        return None
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def _emit(rows, args, name: str) -> None:
    target = _out(args, name)
    text = emit_csv(rows, target)
    if target is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {target}")


def cmd_simulate(args) -> int:
    spec = parse_scenario(Path(args.config).read_text())
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.capture_mode:
        spec = replace(spec, capture=replace(spec.capture, enabled=True))
    rep = compute_metrics(run_scenario(spec))
    if rep.empty:
        log.warning("no sensor events were generated")
    if rep.ul_reliability_over_100:
        log.warning("UL reliability above 100%% (%.2f)", rep.ul_reliability)
    _emit([rep.as_row(system=spec.protocol, seed=spec.seed)], args, f"{spec.name}.csv")
    return 0


def cmd_study(args) -> int:
    rows = run_study(args.study, seed=args.seed if args.seed is not None else 1,
                     capture=args.capture_mode, workers=args.workers,
                     protocols=args.protocols.split(","))
    _emit(rows, args, f"study{args.study}.csv")
    return 0


def cmd_analyze_queue(args) -> int:
    _emit(delay_table(args.lambda_grid, tuple(args.x_grid)), args, "queue.csv")
    return 0


def _systems(doc: dict):
    """Yield (label, A, B, K, sigma, rho, h) from a matrix or scenario document."""
    if "A" in doc:
        yield ("system", np.atleast_2d(doc["A"]), np.atleast_2d(doc["B"]), np.atleast_2d(doc["K"]),
               float(doc.get("sigma", 0.0)), float(doc.get("rho", 0.0)), float(doc["h"]))
        return
    spec = parse_scenario(json.dumps({k: v for k, v in doc.items() if k != "tau_grid"}))
    for i, d in enumerate(spec.dmas):
        m = d.model()
        yield (f"dma{i}", m.A, m.B, m.K, m.sigma, m.rho, m.h)


def cmd_stability(args) -> int:
    doc = json.loads(Path(args.system).read_text())
    rows = []
    for label, A, B, K, sigma, rho, h in _systems(doc):
        grid = args.tau_grid or doc.get("tau_grid") or list(np.linspace(0.0, h, 10, endpoint=False))
        try:
            sys_ = build_augmented(A, B, K, sigma, rho, h, 0.0)
        except ValueError as exc:
            raise ScenarioError(f"{label}: {exc}") from exc
        res = max_allowable_delay(sys_, [t for t in grid if t < h])
        for tau, ok in res.frontier:
            rows.append({"system": label, "h": h, "sigma": sigma, "tau_d": tau, "feasible": ok})
        log.info("%s: max allowable delay %s", label, res.max_tau_d)
    _emit(rows, args, "stability_frontier.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctrlmac-cosim",
                                description="LPWA wireless control co-simulation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=None, help="write CSV here instead of stdout")
    common.add_argument("--capture-mode", action="store_true",
                        help="resolve collisions with the SNR capture model")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run one scenario file")
    s.add_argument("config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("study", parents=[common], help="run a canned study grid")
    s.add_argument("study", type=int, choices=(1, 2, 3, 4))
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--protocols", default="ctrlmac,lorawanpp,wired")
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("analyze-queue", parents=[common], help="closed-form request delay table")
    s.add_argument("--lambda-grid", type=_floats, default=[12.0, 60.0, 136.0, 150.0],
                   help="offered loads in packets per minute")
    s.add_argument("--x-grid", type=_floats, default=[1.0, 5.0, 10.0])
    s.set_defaults(func=cmd_analyze_queue)

    s = sub.add_parser("stability", parents=[common], help="maximum allowable delay frontier")
    s.add_argument("--system", required=True, help="JSON with A, B, K, h (and sigma, rho) or a scenario")
    s.add_argument("--tau-grid", type=_floats, default=None)
    s.set_defaults(func=cmd_stability)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ModelError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except PlantDivergence as exc:
        print(f"plant diverged: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
