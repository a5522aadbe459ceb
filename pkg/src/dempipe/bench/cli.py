"""``dem`` command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical explosion,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..contact import TunnelingError
from ..integrator import SimulationExplosion
from .config import FULL_PARTICLE_COUNT, ConfigError, load_config
from .runner import compare_models, run
from .scenes import build_scene, min_pair_gap

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXPLOSION = 3
EXIT_IO = 4

# the overlap scan in ``dem scene`` is O(N^2); skip it above this size
GAP_SCAN_LIMIT = 20_000


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="key = value configuration file")
    common.add_argument("--workers", type=int, default=None, help="worker threads (default: DEM_WORKERS or CPU count)")
    common.add_argument("--full", action="store_true", help=f"use {FULL_PARTICLE_COUNT} particles")
    common.add_argument("--output", default=None, help="output directory (overrides output_dir)")

    p = argparse.ArgumentParser(prog="dem", description="Grid-based DEM benchmark runner.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run a scene until it settles")
    sub.add_parser("compare", parents=[common], help="run the scene under both contact models")
    scene = sub.add_parser("scene", parents=[common], help="build a scene and report its statistics")
    scene.add_argument("--dry-run", action="store_true", help="validate only (the default for this command)")
    return p


def _scene_report(cfg) -> dict:
    sc = build_scene(cfg)
    p = sc.particles
    lo, hi = sc.config.domain_min, sc.config.domain_max
    info = {
        "scene": cfg.scene,
        "particle_count": p.count,
        "walls": len(sc.walls),
        "grid_dims": [int(d) for d in sc.config.grid_dims],
        "cell_edge": [float(e) for e in sc.config.cell_edge],
        "domain_min": [float(v) for v in lo],
        "domain_max": [float(v) for v in hi],
        "min_surface_gap": min_pair_gap(p) if 1 < p.count <= GAP_SCAN_LIMIT else None,
    }
    info.update({k: v for k, v in sc.info.items() if k not in info})
    return info


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        overrides = {"workers": args.workers, "output_dir": args.output}
        if args.full:
            overrides["particle_count"] = FULL_PARTICLE_COUNT
        cfg = load_config(args.config, **overrides)
        if args.command == "scene":
            print(json.dumps(_scene_report(cfg), indent=2, default=float))
        elif args.command == "run":
            report = run(cfg, cfg.workers, cfg.output_dir)
            print(json.dumps(report.summary(), indent=2))
        else:
            cmp = compare_models(cfg, cfg.workers, cfg.output_dir)
            print(json.dumps(cmp.summary(), indent=2))
    except ConfigError as exc:
        print(f"dem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationExplosion, TunnelingError) as exc:
        print(f"dem: simulation exploded: {exc}", file=sys.stderr)
        return EXIT_EXPLOSION
    except OSError as exc:
        print(f"dem: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
