"""Command-line interface: ``mmelev {simulate,fuse,export,bench,plugins}``.

On failure the last stderr line reads ``error: <category>: <message>``
and the exit code is 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MapError

EXIT_ERROR = 1


def _floats(n):
    def parse(s):
        vals = [float(x) for x in s.replace(",", " ").split()]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers")
        return vals
    return parse


def _ints(s):
    try:
        return [int(x) for x in s.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def cmd_simulate(args):
    from .config import load_mapping_config, load_sensor_config
    from .scene import load_scene
    from .simulate import simulate, write_run

    scene = load_scene(args.scene)
    sensors = load_sensor_config(args.sensors)
    mapping = load_mapping_config(args.config)
    gmap, logs = simulate(scene, sensors, mapping, args.steps, workers=args.workers)
    manifest = {
        "command": "simulate", "scene": str(args.scene), "sensors": str(args.sensors),
        "config": str(args.config), "steps": args.steps, "workers": args.workers, "seed": sensors.seed,
    }
    path = write_run(args.out, gmap, logs, manifest)
    print(f"wrote {path} ({int(gmap.valid_mask.sum())} valid cells)")


def cmd_fuse(args):
    from .config import load_mapping_config
    from .grid import create_map
    from .io import read_cloud, read_image, read_map, write_map
    from .pipeline import prepare_layers, update_from_cloud, update_from_image
    from .sensors import Pose

    mapping = load_mapping_config(args.config)
    if args.map:
        gmap = read_map(args.map)
    else:
        gmap = create_map(mapping.geometry, mapping.layers)
    configs = mapping.for_source(args.source)
    if not configs and args.source not in mapping.sources:
        raise MapError(f"source {args.source!r} not in config; known: {', '.join(mapping.sources) or 'none'}")
    prepare_layers(gmap, configs)
    if args.cloud:
        pose = Pose.from_rpy(*np.radians(args.rpy), translation=args.translation)
        update_from_cloud(gmap, read_cloud(args.cloud), pose, configs, mapping.sigma_z2, args.workers)
    else:
        update_from_image(gmap, read_image(args.image), configs, args.workers)
    write_map(gmap, args.out)
    print(f"wrote {args.out}")


def cmd_export(args):
    from .io import export_csv, export_png, read_map

    gmap = read_map(args.map)
    names = args.layer.split(",")
    if args.format == "csv":
        if len(names) != 1:
            raise MapError("csv export takes a single layer")
        export_csv(gmap, names[0], args.out)
    else:
        export_png(gmap, names if len(names) > 1 else names[0], args.out)
    print(f"wrote {args.out}")


def cmd_bench(args):
    from .bench import run_bench, write_scaling_csv, write_stage_csv

    res = run_bench(
        map_cells=args.map_cells, n_points=args.points, layer_counts=args.layers,
        stage_layers=args.stage_layers, iterations=args.iterations, workers=args.workers,
        algorithm=args.algorithm, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stage_csv(res.stages, out / "stages.csv")
    if res.scaling:
        write_scaling_csv(res.scaling, out / "scaling.csv")
    (out / "report.json").write_text(json.dumps(res.report(), indent=2) + "\n")
    for s in res.stages:
        print(f"{s.stage:18s} {s.mean_ms:9.3f} +- {s.std_ms:7.3f} ms  ({s.iters} iters)")
    if res.total:
        print(f"{'total update':18s} {res.total.mean_ms:9.3f} +- {res.total.std_ms:7.3f} ms")
    if res.fit:
        print(f"multimodal_update ~ {res.fit.slope:.4f} ms/layer + {res.fit.intercept:.4f} ms, R^2 = {res.fit.r2:.4f}")


def cmd_plugins(args):
    from .config import load_mapping_config
    from .io import read_map, write_map
    from .plugins import run_plugins

    mapping = load_mapping_config(args.config)
    specs = mapping.plugins
    if args.only:
        wanted = args.only.split(",")
        specs = [s for s in specs if s.name in wanted]
        missing = set(wanted) - {s.name for s in specs}
        if missing:
            raise MapError(f"plugins not in config: {sorted(missing)}")
    gmap = read_map(args.map)
    run_plugins(gmap, specs)
    write_map(gmap, args.out)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmelev", description="Multi-modal robot-centric elevation mapping.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def workers(sp):
        sp.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")

    s = sub.add_parser("simulate", help="render a scene along a trajectory and build a map")
    s.add_argument("--scene", required=True, help="scene description file")
    s.add_argument("--sensors", required=True, help="sensor/trajectory YAML")
    s.add_argument("--config", required=True, help="mapping YAML (map, sources, plugins)")
    s.add_argument("--steps", type=int, default=1)
    s.add_argument("--out", required=True, help="output directory")
    workers(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fuse", help="fuse one MMPC1 cloud or MMIM1 image into a map")
    s.add_argument("--config", required=True)
    s.add_argument("--source", required=True, help="source name in the mapping config")
    s.add_argument("--map", help="input MMEM1 map; a blank map from the config when omitted")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--cloud")
    g.add_argument("--image")
    s.add_argument("--translation", type=_floats(3), default=[0.0, 0.0, 0.0], help="cloud sensor position 'x,y,z'")
    s.add_argument("--rpy", type=_floats(3), default=[0.0, 0.0, 0.0], help="cloud sensor roll,pitch,yaw in degrees")
    s.add_argument("--out", required=True)
    workers(s)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("export", help="export a map layer as PNG or CSV")
    s.add_argument("--map", required=True)
    s.add_argument("--layer", required=True, help="layer name, or three comma-separated names for RGB PNG")
    s.add_argument("--format", choices=("png", "csv"), default="png")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("bench", help="per-stage timings and layer-scaling fit")
    s.add_argument("--map-cells", type=int, default=250)
    s.add_argument("--points", type=int, default=230_400)
    s.add_argument("--layers", type=_ints, default=[1, 2, 4, 8, 16, 20], help="layer counts to sweep")
    s.add_argument("--stage-layers", type=int, default=8)
    s.add_argument("--iterations", type=int, default=30)
    s.add_argument("--algorithm", default="exponential", choices=("latest", "exponential", "gaussian"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    workers(s)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plugins", help="run configured plugins on a map file")
    s.add_argument("--map", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--only", help="comma-separated plugin names")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plugins)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: invalid-argument: --workers must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        args.func(args)
    except MapError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: io-error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as e:
        print(f"error: invalid-argument: {e}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
