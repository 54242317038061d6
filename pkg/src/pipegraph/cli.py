"""Command-line front end: run, synth and diff subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .errors import PipegraphError
from .graph import DiffReport, export, graph_diff, graph_to_dict, load_graph
from .ingest import load_scene
from .pipeline import run_pipeline
from .synth import (
    BUILTIN_SCENES,
    NoiseSpec,
    generate,
    load_scene_spec,
    write_synthetic_scene,
)

logger = logging.getLogger("pipegraph")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EMPTY = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pipegraph",
        description="Reconstruct a hydraulic-system graph from a scene bundle",
    )
    parser.add_argument("--version", action="version", version=f"pipegraph {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline on a scene bundle")
    run.add_argument("--scene", required=True, help="scene bundle directory")
    run.add_argument("--config", help="config file (flat key = value text)")
    run.add_argument("--out", required=True, help="output graph JSON path")
    run.add_argument("--dot", help="also write a DOT rendering here")
    run.add_argument("--dump-ply", help="directory for per-object PLY dumps")

    synth = sub.add_parser("synth", help="generate a synthetic scene bundle")
    synth.add_argument("spec", help="builtin name (system1) or scene spec JSON file")
    synth.add_argument("--out", required=True, help="output bundle directory")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--drop-prob", type=float, default=0.0)
    synth.add_argument("--depth-sigma", type=float, default=0.0)
    synth.add_argument("--keypoint-sigma", type=float, default=0.0)
    synth.add_argument("--mask-jitter", type=float, default=0.0)
    synth.add_argument("--spurious-rate", type=float, default=0.0)
    synth.add_argument("--width", type=int, help="override image width (builtins only)")
    synth.add_argument("--height", type=int, help="override image height (builtins only)")

    diff = sub.add_parser("diff", help="compare a predicted graph against ground truth")
    diff.add_argument("predicted", help="predicted graph JSON")
    diff.add_argument("truth", help="ground-truth graph JSON")
    diff.add_argument("--pos-tol", type=float, default=0.25,
                      help="node matching distance tolerance, meters")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config) if args.config else PipelineConfig()
        config.validate()
    except (PipegraphError, OSError) as exc:
        logger.error("config: %s", exc)
        return EXIT_ERROR
    try:
        bundle = load_scene(args.scene)
    except PipegraphError as exc:
        logger.error("ingest: %s", exc)
        return EXIT_ERROR

    graph, objects, _stats = run_pipeline(bundle, config, dump_dir=args.dump_ply)
    if not objects:
        logger.error("pipeline: no objects survived either branch")
        return EXIT_EMPTY

    payload = graph_to_dict(graph)
    payload["metadata"] = {
        "artifact": "pipegraph",
        "version": __version__,
        "scene": str(args.scene),
        "config": dict(sorted(config.to_dict().items())),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %s (%d nodes, %d edges)", out, len(graph.nodes), len(graph.edges))

    if args.dot:
        Path(args.dot).write_bytes(export(graph, "dot"))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec in BUILTIN_SCENES:
        overrides = {}
        if args.width:
            overrides["width"] = args.width
        if args.height:
            overrides["height"] = args.height
        spec = BUILTIN_SCENES[args.spec](**overrides)
    elif Path(args.spec).is_file():
        try:
            spec = load_scene_spec(args.spec)
        except PipegraphError as exc:
            logger.error("scene spec: %s", exc)
            return EXIT_ERROR
    else:
        logger.error(
            "unknown scene '%s' (builtins: %s)", args.spec, ", ".join(sorted(BUILTIN_SCENES))
        )
        return EXIT_ERROR
    noise = NoiseSpec(
        depth_sigma=args.depth_sigma,
        keypoint_sigma=args.keypoint_sigma,
        mask_boundary_jitter=args.mask_jitter,
        drop_detection_prob=args.drop_prob,
        spurious_detection_rate=args.spurious_rate,
    )
    scene = generate(spec, noise, seed=args.seed)
    write_synthetic_scene(scene, args.out)
    logger.info(
        "wrote %s: %d images, %d truth nodes", args.out,
        len(scene.bundle.images), len(scene.truth.nodes),
    )
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    try:
        predicted = load_graph(args.predicted)
        truth = load_graph(args.truth)
    except (PipegraphError, OSError) as exc:
        logger.error("diff: %s", exc)
        return EXIT_ERROR
    report: DiffReport = graph_diff(predicted, truth, args.pos_tol)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run":
        return cmd_run(args)
    if args.command == "synth":
        return cmd_synth(args)
    return cmd_diff(args)


if __name__ == "__main__":
    sys.exit(main())
