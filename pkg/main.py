import argparse
import asyncio
import logging
import os
import sys
import warnings

warnings.filterwarnings("ignore", category=DeprecationWarning)

from pydantic import ValidationError

from core.config import Config
from core.errors import ConfigurationError, StrataError
from core.formats import read_keyvalue
from core.logging_config import setup_logging
from core.models import ExperimentSpec, FitConfig, LossConfig
from core.ui import UI

logger = logging.getLogger("STRATA.Main")


def _load_spec(path: str) -> ExperimentSpec:
    try:
        return ExperimentSpec.from_keyvalue(read_keyvalue(path), base_dir=os.path.dirname(os.path.abspath(path)))
    except (ValidationError, ValueError) as e:
        raise ConfigurationError(f"{path}: {e}") from e


def _cmd_run(args) -> int:
    from modules.experiments import run_experiment

    spec = _load_spec(args.spec)
    out_dir = args.out or spec.out or os.path.join(Config.RUNS_DIR, os.path.splitext(os.path.basename(args.spec))[0])
    workers = Config.resolve_workers(args.workers, spec.workers)
    seed = args.seed
    if seed is None and os.getenv("STRATA_SEED"):
        seed = Config.SEED
    UI.info(f"EXPERIMENT {args.spec} -> {out_dir}")
    return asyncio.run(run_experiment(spec, out_dir, workers=workers, dry_run=args.dry_run, seed_override=seed))


def _cmd_selfcheck(args) -> int:
    from modules.experiments import run_selfcheck

    UI.info("SELFCHECK")
    results = run_selfcheck(args.group or None)
    UI.print_check_summary(results)
    return 0 if all(msg is None for msg in results.values()) else 1


def _cmd_render_masks(args) -> int:
    from modules.decomposition import read_mask_bundle, write_mask_composite

    bundle = os.path.join(args.fit, "masks.pgm")
    if not os.path.isfile(bundle):
        UI.error(f"No mask bundle in {args.fit}")
        return 1
    masks = read_mask_bundle(bundle)
    write_mask_composite(args.out, masks, seed=args.seed)
    UI.info(f"{masks.shape[0]} channel(s) composited to {args.out}")
    return 0


def _cmd_render_depth(args) -> int:
    from core.formats import read_pfm
    from modules.evaluation import write_inverse_depth

    depth_file = args.depth if os.path.isfile(args.depth) else os.path.join(args.depth, "depth.pfm")
    if not os.path.isfile(depth_file):
        UI.error(f"No depth map at {args.depth}")
        return 1
    depth = read_pfm(depth_file)
    write_inverse_depth(args.out, depth, vmax_percentile=args.percentile)
    UI.info(f"Inverse depth ({depth.shape[1]}x{depth.shape[0]}) rendered to {args.out}")
    return 0


def _cmd_generate(args) -> int:
    from modules.synth import export_scene, generate_scene, load_scene_config

    scene = generate_scene(load_scene_config(args.config))
    written = export_scene(scene, args.out)
    if scene.degenerate_objects:
        UI.warning(f"Motion indistinguishable from ego-motion: {', '.join(scene.degenerate_objects)}")
    for name, digest in written.items():
        UI.highlight(name, f"sha256 {digest[:16]}")
    UI.info(f"Scene bundle written to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    from modules.evaluation import depth_metrics, mask_iou, moving_region
    from modules.optim import fit_scene, jsonl_logger, save_fit
    from modules.synth import generate_scene, load_scene_config

    cfg_scene = load_scene_config(args.config)
    scene = generate_scene(cfg_scene)
    cfg = FitConfig.with_schedule(
        args.schedule,
        K=args.k, steps=args.steps, seed=Config.resolve_seed(args.seed),
        init=args.init, checkpoint_every=args.checkpoint_every, engine=args.engine,
        pose_noise_rotation=args.pose_noise[0], pose_noise_translation=args.pose_noise[1],
        loss=LossConfig(
            use_depth_ordering=not args.no_ordering,
            mask_smooth_weight=Config.ABLATION_MASK_SMOOTH_WEIGHT if args.no_ordering else 0.0,
            auto_mask=args.auto_mask,
        ),
    )
    out_dir = args.out or os.path.join(Config.RUNS_DIR, f"{cfg_scene.name}-k{cfg.K}")
    os.makedirs(out_dir, exist_ok=True)
    loss_log = os.path.join(out_dir, "loss.jsonl")
    if os.path.exists(loss_log):
        os.remove(loss_log)

    UI.info(f"FIT {cfg_scene.name}: K={cfg.K}, {cfg.steps} steps")
    result = fit_scene(scene, cfg, on_step=jsonl_logger(loss_log), run_dir=out_dir)
    save_fit(result, out_dir, color_seed=cfg.seed)

    rows = [{"region": "all", **depth_metrics(result.depth, scene.gt_depth).model_dump(by_alias=True)}]
    moving = moving_region(scene.gt_labels)
    if moving.any():
        rows.append({"region": "moving", **depth_metrics(result.depth, scene.gt_depth, moving).model_dump(by_alias=True)})
        iou, channels = mask_iou(result.masks, moving)
        UI.highlight("Mask IoU", f"{iou:.4f} (channels {', '.join(map(str, channels))})")
    UI.print_metrics_table(f"{cfg_scene.name} K={cfg.K}", rows, ["region"] + list(rows[0])[1:])
    UI.highlight("Artifacts", out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="STRATA: depth and multi-rigid-motion decomposition by view synthesis",
        formatter_class=argparse.RawTextHelpFormatter
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $LOG_LEVEL or INFO)")
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    # 1. Experiment grid
    p_run = subparsers.add_parser("run", help="Run every (scene, K, ablation, seed) cell of an experiment spec")
    p_run.add_argument("--spec", required=True, help="Key-value experiment spec")
    p_run.add_argument("--out", default=None, help="Run directory (default: spec 'out' or runs/<spec name>)")
    p_run.add_argument("--workers", type=int, default=None, help="Parallel fits (default: $STRATA_WORKERS or spec)")
    p_run.add_argument("--seed", type=int, default=None, help="Override the spec's seed list with one seed")
    p_run.add_argument("--dry-run", action="store_true", help="Print planned cells and exit")

    # 2. Invariant suite
    p_check = subparsers.add_parser("selfcheck", help="Fast invariant suite (gradients, oracle, metrics)")
    p_check.add_argument("--group", action="append", default=None,
                         help="Run only this group (repeatable)")

    # 3. Mask composite
    p_masks = subparsers.add_parser("render-masks", help="Composite a fit's mask bundle into one PPM")
    p_masks.add_argument("--fit", required=True, help="Fit directory containing masks.pgm")
    p_masks.add_argument("--out", required=True, help="Output PPM path")
    p_masks.add_argument("--seed", type=int, default=0, help="Channel color seed")

    p_depth = subparsers.add_parser("render-depth", help="Render a depth map (PFM) as colorized inverse depth")
    p_depth.add_argument("--depth", required=True, help="depth.pfm, or a fit / scene directory containing one")
    p_depth.add_argument("--out", required=True, help="Output PPM path")
    p_depth.add_argument("--percentile", type=float, default=95.0, help="Inverse-depth percentile mapped to full color")

    # 4. Scene export
    p_gen = subparsers.add_parser("generate", help="Render a scene config to frames, depth and masks")
    p_gen.add_argument("--config", required=True, help="Scene config (.cfg)")
    p_gen.add_argument("--out", required=True, help="Output directory")

    # 5. Single fit
    p_fit = subparsers.add_parser("fit", help="Fit one scene and print its metrics")
    p_fit.add_argument("--config", required=True, help="Scene config (.cfg)")
    p_fit.add_argument("--k", type=int, default=2, help="Number of motion components")
    p_fit.add_argument("--steps", type=int, default=500, help="Optimization steps")
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--init", choices=["default", "ground-truth", "perturbed"], default="default",
                       help="perturbed: ego motion plus --pose-noise, flat depth")
    p_fit.add_argument("--pose-noise", type=float, nargs=2, default=(0.0, 0.0), metavar=("RAD", "UNITS"),
                       help="Initial pose noise: rotation (radians) and translation (scene units)")
    p_fit.add_argument("--no-ordering", action="store_true", help="Plain softmax masks plus mask smoothing")
    p_fit.add_argument("--auto-mask", action="store_true", help="Drop pixels the unwarped sources explain better")
    p_fit.add_argument("--checkpoint-every", type=int, default=0)
    p_fit.add_argument("--schedule", choices=["direct", "reference"], default="direct",
                       help="Learning-rate schedule (reference: 1e-4 dropping to 1e-5, one rate for all blocks)")
    p_fit.add_argument("--engine", choices=["dense", "tape"], default="dense",
                       help="Objective evaluator (tape records every scalar; slow, for cross-checks)")
    p_fit.add_argument("--out", default=None)

    return parser


COMMANDS = {
    "run": _cmd_run,
    "selfcheck": _cmd_selfcheck,
    "render-masks": _cmd_render_masks,
    "render-depth": _cmd_render_depth,
    "generate": _cmd_generate,
    "fit": _cmd_fit,
}


def main(argv=None) -> int:
    UI.setup_terminal()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        UI.print_banner()
        parser.print_help()
        return 0

    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print(f"\n{UI.Y}[!] Operation aborted by user.{UI.RESET}")
        return 130
    except StrataError as e:
        UI.error(f"{type(e).__name__}: {e}")
        logger.debug("Failure detail", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
