"""Command-line harness: pretraining, probing, ablations, gradient checks,
crop inspection, and checkpoint tooling.

Exit codes: 0 success, 2 invalid configuration, 3 checkpoint errors,
1 other failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_checkpoint, restore_model, \
    save_checkpoint
from .config import ConfigError, PRESETS, RunConfig, config_from_json
from .downstream import ProbeConfig, evaluate, raw_pixel_probe, scene_split
from .gradcheck import check_all_primitives, finite_difference_check
from .masking import make_mask_plan
from .model import SeasonalMAE
from .pretrain import ScenePool, build_views, default_axes, run_ablation_matrix, \
    run_progressive, write_metrics_csv
from .synthdata import CropKind, CropStrategy, sample_crops

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3

GRADCHECK_TOLERANCE = 1e-4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="JSON run config; overlays the preset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (env SEAMO_OUT overrides the default)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seasonmim")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("pretrain", "run progressive two-stage pretraining"),
        ("finetune", "fine-tune a pretrained checkpoint on the synthetic task"),
        ("probe", "linear-probe a pretrained checkpoint"),
        ("ablate", "run the strategy and temporal-length ablation matrix"),
        ("gradcheck", "finite-difference check of every primitive"),
        ("crop-demo", "emit sampled crop windows for all three strategies"),
        ("inspect-ckpt", "validate and summarize a checkpoint"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("finetune", "probe", "inspect-ckpt"):
            p.add_argument("--ckpt", type=Path, required=True)
        if name in ("finetune", "probe"):
            p.add_argument("--train-scenes", type=int, default=48)
            p.add_argument("--test-scenes", type=int, default=24)
            p.add_argument("--epochs", type=int, default=None)
        if name == "gradcheck":
            p.add_argument("--seeds", type=int, default=10,
                           help="number of random instances per primitive")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = PRESETS[args.preset](seed=0)
    if args.config is not None:
        cfg = config_from_json(Path(args.config).read_text())
    if args.seed is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        from .config import config_from_dict
        cfg = config_from_dict(d)
    return cfg


def resolve_out(args) -> Path:
    out = args.out
    env = os.environ.get("SEAMO_OUT")
    if env:
        out = Path(env)
    if out is None:
        out = Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    out = resolve_out(args)
    t0 = time.perf_counter()
    result = run_progressive(cfg)
    wall = time.perf_counter() - t0
    (out / "config.json").write_text(cfg.to_json())
    write_metrics_csv(result.stage1_metrics, out / "metrics_stage1.csv")
    write_metrics_csv(result.stage2_metrics, out / "metrics_stage2.csv")
    save_checkpoint(result.stage1_model, out / "ckpt_stage1.bin",
                    step=len(result.stage1_metrics), stage="single_time",
                    optimizer=result.stage1_model.optimizer_state)
    save_checkpoint(result.model, out / "ckpt_stage2.bin",
                    step=len(result.stage2_metrics), stage="multi_time",
                    optimizer=result.model.optimizer_state)
    summary = {
        "wall_s": wall,
        "warm_started_params": len(result.warm_started),
        "final_loss_stage1": result.stage1_metrics[-1]["loss_total"]
        if result.stage1_metrics else None,
        "final_loss_stage2": result.stage2_metrics[-1]["loss_total"]
        if result.stage2_metrics else None,
    }
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"pretrain: done in {wall:.1f}s, artifacts in {out}")
    return EXIT_OK


def _cmd_probe_like(args, mode: str) -> int:
    data = load_checkpoint(args.ckpt)
    model = restore_model(data)
    cfg = model.cfg
    if args.seed is not None:
        probe_seed = args.seed
    else:
        probe_seed = cfg.seed
    out = resolve_out(args)
    pool = ScenePool(cfg)
    train, test = scene_split(cfg, args.train_scenes, args.test_scenes)
    probe_cfg = ProbeConfig(mode=mode, seed=probe_seed)
    if args.epochs is not None:
        probe_cfg.epochs = args.epochs
    report = evaluate(probe_cfg, model, pool, train, test)
    report["raw_pixel_baseline"] = raw_pixel_probe(cfg, pool, train, test,
                                                   ProbeConfig(seed=probe_seed))
    path = out / f"{mode}_report.json"
    path.write_text(json.dumps(report, indent=2))
    print(f"{mode}: accuracy={report['accuracy']:.4f} "
          f"(raw-pixel baseline {report['raw_pixel_baseline']:.4f}), "
          f"report in {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = resolve_out(args)
    d = cfg.to_dict()
    # ablation rows use a reduced budget; quality numbers come from `pretrain`
    d["geometry"]["num_scenes"] = min(d["geometry"]["num_scenes"], 16)
    d["stage1"]["epochs"] = min(d["stage1"]["epochs"], 1)
    d["stage2"]["epochs"] = min(d["stage2"]["epochs"], 2)
    from .config import config_from_dict
    cfg = config_from_dict(d)
    rows = run_ablation_matrix(cfg, default_axes(), out / "ablation.csv")
    errors = [r for r in rows if r["error"]]
    print(f"ablate: {len(rows)} rows ({len(errors)} errors) in {out / 'ablation.csv'}")
    return EXIT_OK


def end_to_end_gradcheck(seed: int = 0) -> float:
    """Finite differences on sampled parameter coordinates of the full loss."""
    from .config import config_from_dict, desk_preset

    d = desk_preset(seed).to_dict()
    d["geometry"].update({"h_full": 16, "w_full": 16, "crop_h": 8, "crop_w": 8,
                          "patch": 4, "t_seasons": 2, "num_scenes": 4})
    d["model"].update({"embed_dim": 8, "depth": 1, "heads": 2, "decoder_depth": 1,
                       "decoder_dim": 8, "decoder_heads": 2})
    d["tm"]["heads"] = 2
    cfg = config_from_dict(d)
    model = SeasonalMAE(cfg)
    model.init_params(seed)
    pool = ScenePool(cfg)
    rng = np.random.default_rng(seed)
    views = build_views(pool.scene(0), cfg, 2, pool.stats(), rng)
    plan = make_mask_plan(model.num_tokens, 2, cfg.model.mask_ratio, seed)

    def loss_fn() -> Tensor:
        return model.pretrain_loss(views, plan).total

    with ad.Tape() as tape:
        loss = loss_fn()
    ad.backward(tape, loss)

    h = 1e-5
    worst = 0.0
    coord_rng = np.random.default_rng(seed + 1)
    names = sorted(model.params)
    for name in coord_rng.choice(names, size=6, replace=False):
        p = model.params[name]
        flat = p.data.ravel()
        i = int(coord_rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn().item()
        flat[i] = orig - h
        f_minus = loss_fn().item()
        flat[i] = orig
        fd = (f_plus - f_minus) / (2 * h)
        an = p.grad.ravel()[i]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1.0)
        worst = max(worst, rel)
    return worst


def cmd_gradcheck(args) -> int:
    worst: dict[str, float] = {}
    for seed in range(args.seeds):
        for name, err in check_all_primitives(seed=seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
    ok = True
    for name in sorted(worst):
        status = "ok" if worst[name] < GRADCHECK_TOLERANCE else "FAIL"
        ok = ok and worst[name] < GRADCHECK_TOLERANCE
        print(f"gradcheck {name}: max rel err {worst[name]:.3e} [{status}]")
    e2e = max(end_to_end_gradcheck(seed=s) for s in range(min(args.seeds, 5)))
    status = "ok" if e2e < GRADCHECK_TOLERANCE else "FAIL"
    ok = ok and e2e < GRADCHECK_TOLERANCE
    print(f"gradcheck end_to_end_loss: max rel err {e2e:.3e} [{status}]")
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_crop_demo(args) -> int:
    cfg = resolve_config(args)
    out = resolve_out(args)
    g = cfg.geometry
    seed = cfg.seed
    demo = {}
    for kind in CropKind:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 57]))
        strategy = CropStrategy(kind=kind, min_rate=cfg.crop.min_rate,
                                max_rate=cfg.crop.max_rate)
        windows = sample_crops(g.h_full, g.w_full, g.t_seasons, strategy,
                               g.crop_h, g.crop_w, rng)
        demo[kind.value] = [
            {"season": w.season, "top": w.top, "left": w.left,
             "height": w.height, "width": w.width} for w in windows]
    text = json.dumps(demo, indent=2)
    (out / "crop_demo.json").write_text(text)
    print(text)
    return EXIT_OK


def cmd_inspect_ckpt(args) -> int:
    data = load_checkpoint(args.ckpt)
    n_values = sum(int(np.prod(v.shape)) for v in data.params.values())
    print(json.dumps({
        "stage": data.stage,
        "step": data.step,
        "n_params": len(data.params),
        "n_values": n_values,
        "has_optimizer": data.optimizer is not None,
        "strategy": data.config.strategy,
        "embed_dim": data.config.model.embed_dim,
    }, indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pretrain":
            return cmd_pretrain(args)
        if args.command == "probe":
            return _cmd_probe_like(args, "linear_probe")
        if args.command == "finetune":
            return _cmd_probe_like(args, "fine_tune")
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "crop-demo":
            return cmd_crop_demo(args)
        if args.command == "inspect-ckpt":
            return cmd_inspect_ckpt(args)
        print(f"error: unknown command {args.command}", file=sys.stderr)
        return EXIT_FAILURE
    except ConfigError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"error: checkpoint: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
