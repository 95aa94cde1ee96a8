"""Run with: python -m conveyor_vla <command> (or the `cvla` script, also installed as `a1`)."""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import uvicorn

from conveyor_vla.config import get_settings, load_ablation_config, load_train_config
from conveyor_vla.errors import ConveyorVLAError, TrainingDivergedError
from conveyor_vla.lpt import balance_metrics, build_plan
from conveyor_vla.masking import build_blockwise_mask, format_mask
from conveyor_vla.models.layout import SegmentLayout
from conveyor_vla.models.plan import DatasetMeta
from conveyor_vla.persistence import load_manifest
from conveyor_vla.services.ablation_service import run_ablation
from conveyor_vla.services.evaluation_service import EvaluationService
from conveyor_vla.services.training_service import train
from conveyor_vla.sim import generate_dataset

logger = logging.getLogger("conveyor_vla")


def _load_dataset_metas(path: Path) -> list[DatasetMeta]:
    """JSON list of DatasetMeta objects or of dataset directories."""
    entries = json.loads(Path(path).read_text())
    metas = []
    for entry in entries:
        if isinstance(entry, str):
            manifest = load_manifest(Path(entry))
            metas.append(
                DatasetMeta(
                    id=manifest.name,
                    size=float(manifest.frame_count),
                    path=entry,
                    sampling_weight=manifest.sampling_weight,
                )
            )
        else:
            metas.append(DatasetMeta.model_validate(entry))
    return metas


def cmd_gen_data(args: argparse.Namespace) -> int:
    manifest = generate_dataset(
        Path(args.out),
        episodes=args.episodes,
        seed=args.seed,
        tier=args.tier,
        n_objects=args.objects,
        name=args.name,
        workers=args.workers,
        sampling_weight=args.weight,
    )
    print(manifest.model_dump_json(indent=2, exclude={"norm_stats"}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    overrides = {"no_foresight": True if args.no_foresight else None}
    overrides["from_scratch"] = True if args.from_scratch else None
    config = load_train_config(Path(args.config), **overrides)
    try:
        result = train(config)
    except TrainingDivergedError as e:
        logger.error("%s", e)
        return 3
    logger.info("Saved %s after %d steps", result.checkpoint, result.steps)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    service = EvaluationService.from_checkpoint(
        Path(args.ckpt), euler_steps=args.euler_steps, workers=args.workers
    )
    summary, _ = service.evaluate_suite(
        args.settings,
        args.tiers,
        out_dir=Path(args.out) if args.out else None,
        dump_foresight=Path(args.dump_foresight) if args.dump_foresight else None,
        chunks_csv=Path(args.chunks_csv) if args.chunks_csv else None,
    )
    print(summary.model_dump_json(indent=2))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_ablation_config(
        Path(args.config) if args.config else None,
        output_dir=args.out,
        eval_settings=args.settings,
        workers=args.workers,
        seed=args.seed,
    )
    try:
        report = run_ablation(config)
    except TrainingDivergedError as e:
        logger.error("%s", e)
        return 3
    print(report.model_dump_json(indent=2, exclude={"variants", "euler_sweep"}))
    return 0 if report.passed else 1


def cmd_lpt_plan(args: argparse.Namespace) -> int:
    plan = build_plan(_load_dataset_metas(Path(args.manifest)), args.workers, base_seed=args.seed)
    metrics = balance_metrics(plan)
    out = {**plan.model_dump(mode="json"), "balance": metrics.model_dump(mode="json")}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_mask_dump(args: argparse.Namespace) -> int:
    layout = SegmentLayout(
        n_prefix=args.prefix, n_gen=args.gen, n_state=args.state, n_action=args.action
    )
    print(format_mask(build_blockwise_mask(layout)))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    settings = get_settings()
    uvicorn.run(
        "conveyor_vla.main:app",
        host=args.host or settings.host,
        port=args.port or settings.port,
        reload=args.reload,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvla", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an expert demonstration dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tier", default="moving", help="belt-speed tier from defaults.yaml")
    p.add_argument("--objects", type=int, default=None, help="objects per scene")
    p.add_argument("--name", default=None, help="dataset name (directory name by default)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--weight", type=float, default=1.0, help="mixture sampling weight")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config", required=True, help="JSON or YAML TrainConfig")
    p.add_argument("--no-foresight", action="store_true", help="drop the generation block")
    p.add_argument("--from-scratch", action="store_true", help="ignore init_checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--settings", type=int, default=None, help="settings per tier")
    p.add_argument("--tiers", nargs="+", default=None)
    p.add_argument("--euler-steps", type=int, default=None)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--dump-foresight", default=None, help="directory for PGM triplets")
    p.add_argument("--chunks-csv", default=None, help="file for sampled action chunks")
    p.add_argument("--out", default=None, help="directory for results.csv and summary.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the full model with its ablations")
    p.add_argument("--config", default=None, help="JSON or YAML overrides of the ablation defaults")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--settings", type=int, default=None, help="settings per tier")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("lpt-plan", help="print the worker assignment for a dataset list")
    p.add_argument("--manifest", required=True, help="JSON list of datasets or dataset dirs")
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lpt_plan)

    p = sub.add_parser("mask-dump", help="print the blockwise attention mask")
    p.add_argument("--prefix", type=int, required=True)
    p.add_argument("--gen", type=int, default=0)
    p.add_argument("--state", type=int, default=1)
    p.add_argument("--action", type=int, required=True)
    p.set_defaults(func=cmd_mask_dump)

    p = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--reload", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=get_settings().log_level.upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConveyorVLAError, ValueError, FileNotFoundError, KeyError) as e:
        logger.error("%s failed: %s", args.command, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
