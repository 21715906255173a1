"""Command-line entry points.

Every failure exits nonzero with a single machine-readable JSON object
on stderr: {"error": <message>, "type": <exception class>}.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import pipeline, server as server_mod
from .treegen import GrowthParams, grow_tree, save_tree


class _JsonErrorParser(argparse.ArgumentParser):
    """argparse parser whose usage errors are JSON on stderr."""

    def error(self, message):
        print(json.dumps({"error": message, "type": "UsageError"}), file=sys.stderr)
        self.exit(2)


def _build_parser() -> argparse.ArgumentParser:
    parser = _JsonErrorParser(prog="vesselgen",
                              description="Synthetic vascular dataset toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)

    p = sub.add_parser("generate", help="generate a dataset from a config file")
    p.add_argument("--config", required=True, help="DatasetConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None, help="parallel workers")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--postprocess", action="store_true",
                   help="remove small components from predictions first")
    p.add_argument("--min-volume", type=int, default=30,
                   help="component size threshold used with --postprocess")
    p.add_argument("--report", required=True, help="where to write the report JSON")

    p = sub.add_parser("preview", help="write a maximum-intensity projection image")
    p.add_argument("--in", dest="volume", required=True, help="input .nii.gz volume")
    p.add_argument("--axis", default="z", help="projection axis: x, y, or z")
    p.add_argument("--out", required=True, help="output image path (e.g. .png)")

    p = sub.add_parser("grow", help="grow a single tree and save it as JSON")
    p.add_argument("--params", default=None,
                   help="GrowthParams JSON file (missing fields use defaults)")
    p.add_argument("--seed", type=int, required=True, help="tree seed (u64)")
    p.add_argument("--out", required=True, help="output tree JSON path")

    p = sub.add_parser("print-config", help="print a full dataset config with defaults")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk",
                   help="desk: 150+15 samples; paper: 15000+1500")

    p = sub.add_parser("serve", help="serve patches over HTTP")
    p.add_argument("--config", default=None, help="ServerConfig JSON file")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="master seed override")

    return parser


def _cmd_generate(args) -> int:
    config = pipeline.load_config(args.config)
    manifest_path, stats = pipeline.generate_dataset(
        config, out_dir=args.out, workers=args.workers)
    print(json.dumps({"manifest": str(manifest_path), "stats": stats.to_dict()}, indent=2))
    return 0


def _cmd_eval(args) -> int:
    report = pipeline.evaluate(args.pred, args.gt, postprocess=args.postprocess,
                               min_volume=args.min_volume)
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(report["aggregate"], indent=2, sort_keys=True))
    return 0


def _cmd_preview(args) -> int:
    pipeline.preview_mip(args.volume, axis=args.axis, out_path=args.out)
    print(json.dumps({"written": args.out}))
    return 0


def _cmd_grow(args) -> int:
    if args.params is not None:
        with open(args.params, "r", encoding="utf-8") as f:
            params = pipeline._dataclass_from(GrowthParams, json.load(f))
    else:
        params = GrowthParams()
    tree = grow_tree(params, args.seed)
    save_tree(tree, args.out)
    print(json.dumps({
        "written": args.out,
        "nodes": len(tree.nodes),
        "segments": len(tree.segments),
    }))
    return 0


def _cmd_print_config(args) -> int:
    config = pipeline.desk_config() if args.scale == "desk" else pipeline.paper_config()
    print(json.dumps(pipeline.config_to_dict(config), indent=2, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as f:
            config = server_mod.server_config_from_dict(json.load(f))
    else:
        config = server_mod.ServerConfig()
    overrides = {}
    if args.host is not None:
        overrides["host"] = args.host
    if args.port is not None:
        overrides["port"] = args.port
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
    server_mod.serve(config)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "preview": _cmd_preview,
    "grow": _cmd_grow,
    "print-config": _cmd_print_config,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:
        print(json.dumps({"error": str(e), "type": type(e).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
