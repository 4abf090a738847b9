"""Progressive two-stage pretraining driver and the ablation matrix."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ConfigError, RunConfig, StrategyKind, config_from_dict
from .decoder import total_pretrain_loss
from .masking import make_mask_plan
from .model import SceneView, SeasonalMAE
from .optim import OptimizerState, adamw_step
from .synthdata import ChannelStats, CropKind, CropStrategy, Scene, SceneConfig, \
    compute_channel_stats, extract_crop, generate_scene, normalize, sample_crops

# rng stream tags
_TAG_AUG = 23
_TAG_MASK = 29
_TAG_ORDER = 7

_STAGE_TAGS = {"single_time": 1, "multi_time": 2}

# strategy used for the single-time stage of each run strategy
_STAGE1_STRATEGY = {
    StrategyKind.UNIMODAL: StrategyKind.UNIMODAL,
    StrategyKind.MULTIMODAL: StrategyKind.MULTIMODAL,
    StrategyKind.SIAMESE: StrategyKind.SIAMESE,
    StrategyKind.SIAMESE_TEMPORAL: StrategyKind.SIAMESE,
    StrategyKind.UNIMODAL_TEMPORAL: StrategyKind.UNIMODAL,
    StrategyKind.MULTIMODAL_TEMPORAL: StrategyKind.MULTIMODAL,
    StrategyKind.MULTIMODAL_TEMPORAL_TM: StrategyKind.MULTIMODAL,
}

METRICS_COLUMNS = ("step", "lr", "loss_total", "loss_opt", "loss_sar")
ABLATION_COLUMNS = ("config_id", "axis", "value", "final_loss", "probe_acc",
                    "wall_s", "error")


class StageError(ValueError):
    pass


@dataclass
class ScenePool:
    """Deterministic scene universe shared by all stages of a run."""

    cfg: RunConfig

    def __post_init__(self):
        g = self.cfg.geometry
        self.scene_cfg = SceneConfig(t_seasons=g.t_seasons, c_opt=g.c_opt,
                                     c_sar=g.c_sar, h_full=g.h_full,
                                     w_full=g.w_full, num_classes=g.num_classes)
        self._cache: dict[int, Scene] = {}
        self._stats: tuple[ChannelStats, ChannelStats] | None = None

    def scene(self, seed: int) -> Scene:
        if seed not in self._cache:
            self._cache[seed] = generate_scene(seed, self.scene_cfg)
        return self._cache[seed]

    def stats(self) -> tuple[ChannelStats, ChannelStats]:
        """Per-channel normalization stats from a small calibration prefix."""
        if self._stats is None:
            n = min(8, self.cfg.geometry.num_scenes)
            opt = np.stack([self.scene(i).optical for i in range(n)])
            sar = np.stack([self.scene(i).sar for i in range(n)])
            self._stats = (compute_channel_stats(opt), compute_channel_stats(sar))
        return self._stats


def stage_scene_seeds(cfg: RunConfig, stage_kind: str) -> list[int]:
    """Single-time trains on the first quarter of the scene-seed range."""
    n = cfg.geometry.num_scenes
    if stage_kind == "single_time":
        return list(range(math.ceil(0.25 * n)))
    if stage_kind == "multi_time":
        return list(range(n))
    raise StageError(f"unknown stage kind '{stage_kind}'")


def build_views(scene: Scene, cfg: RunConfig, t_eff: int,
                stats: tuple[ChannelStats, ChannelStats],
                rng: np.random.Generator) -> list[SceneView]:
    """Crop, normalize, and randomly h-flip the first t_eff seasons."""
    g = cfg.geometry
    strategy = CropStrategy(kind=CropKind(cfg.crop.kind),
                            min_rate=cfg.crop.min_rate, max_rate=cfg.crop.max_rate)
    windows = sample_crops(g.h_full, g.w_full, t_eff, strategy,
                           g.crop_h, g.crop_w, rng)
    stats_opt, stats_sar = stats
    views = []
    for t, win in enumerate(windows):
        opt = normalize(extract_crop(scene.optical[t], win, g.crop_h, g.crop_w),
                        stats_opt)
        sar = normalize(extract_crop(scene.sar[t], win, g.crop_h, g.crop_w),
                        stats_sar)
        if rng.random() < 0.5:  # flip shared by both modalities of the season
            opt = opt[:, :, ::-1].copy()
            sar = sar[:, :, ::-1].copy()
        views.append(SceneView(optical=opt, sar=sar))
    return views


def _mask_seed(cfg_seed: int, stage_tag: int, epoch: int, scene_seed: int) -> int:
    ss = np.random.SeedSequence([cfg_seed, stage_tag, epoch, scene_seed, _TAG_MASK])
    return int(ss.generate_state(1)[0])


def run_stage(model: SeasonalMAE, pool: ScenePool, stage_kind: str,
              epochs: int, batch_size: int) -> list[dict]:
    """Train the model for one stage; returns per-step metric rows."""
    cfg = model.cfg
    if stage_kind not in _STAGE_TAGS:
        raise StageError(f"unknown stage kind '{stage_kind}'")
    stage_tag = _STAGE_TAGS[stage_kind]
    if stage_kind == "single_time" and model.strategy.temporal:
        raise StageError("single_time stage requires a non-temporal strategy")
    t_eff = cfg.geometry.t_seasons if (stage_kind == "multi_time"
                                       and model.strategy.temporal) else 1
    if epochs == 0:
        return []

    seeds = stage_scene_seeds(cfg, stage_kind)
    steps_per_epoch = math.ceil(len(seeds) / batch_size)
    total_steps = epochs * steps_per_epoch
    warmup = min(max(int(round(cfg.optim.warmup_frac * total_steps)), 0),
                 total_steps - 1)
    opt_state = OptimizerState(base_lr=cfg.optim.base_lr,
                               weight_decay=cfg.optim.weight_decay,
                               warmup_steps=warmup, total_steps=total_steps,
                               betas=(cfg.optim.beta1, cfg.optim.beta2),
                               eps=cfg.optim.eps)
    stats = pool.stats()
    metrics: list[dict] = []
    step = 0
    for epoch in range(epochs):
        order_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, stage_tag, epoch, _TAG_ORDER]))
        order = order_rng.permutation(len(seeds))
        for b in range(steps_per_epoch):
            batch = [seeds[i] for i in order[b * batch_size:(b + 1) * batch_size]]
            lr = opt_state.current_lr()
            t0 = time.perf_counter()
            with ad.Tape() as tape:
                totals, opts, sars = [], 0.0, 0.0
                for scene_seed in batch:
                    aug_rng = np.random.default_rng(np.random.SeedSequence(
                        [cfg.seed, stage_tag, epoch, scene_seed, _TAG_AUG]))
                    views = build_views(pool.scene(scene_seed), cfg, t_eff,
                                        stats, aug_rng)
                    plan = make_mask_plan(
                        model.num_tokens, t_eff, cfg.model.mask_ratio,
                        _mask_seed(cfg.seed, stage_tag, epoch, scene_seed))
                    breakdown = model.pretrain_loss(views, plan)
                    totals.append(breakdown.total)
                    opts += breakdown.optical
                    sars += breakdown.sar
                loss = ad.scale(total_pretrain_loss(totals), 1.0 / len(batch))
            ad.backward(tape, loss)
            adamw_step(opt_state, model.params)
            metrics.append({
                "step": step,
                "lr": lr,
                "loss_total": loss.item(),
                "loss_opt": opts / len(batch),
                "loss_sar": sars / len(batch),
            })
            step += 1
            _ = time.perf_counter() - t0  # wall time reported per run, not per step
    model.optimizer_state = opt_state
    return metrics


@dataclass
class ProgressiveResult:
    model: SeasonalMAE
    stage1_model: SeasonalMAE
    stage1_metrics: list[dict]
    stage2_metrics: list[dict]
    warm_started: list[str]


def run_progressive(cfg: RunConfig, pool: ScenePool | None = None) -> ProgressiveResult:
    """Stage 1 single-time pretraining, then warm-started multi-time stage 2."""
    cfg.validate()
    pool = pool or ScenePool(cfg)
    strategy = StrategyKind(cfg.strategy)

    cfg1 = config_from_dict({**cfg.to_dict(),
                             "strategy": _STAGE1_STRATEGY[strategy].value})
    model1 = SeasonalMAE(cfg1)
    model1.init_params()
    metrics1 = run_stage(model1, pool, "single_time", cfg.stage1.epochs,
                         cfg.stage1.batch_size)

    model2 = SeasonalMAE(cfg)
    model2.init_params()
    warm = model2.warm_start(model1.params)
    metrics2 = run_stage(model2, pool, "multi_time", cfg.stage2.epochs,
                         cfg.stage2.batch_size)
    return ProgressiveResult(model=model2, stage1_model=model1,
                             stage1_metrics=metrics1, stage2_metrics=metrics2,
                             warm_started=warm)


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in METRICS_COLUMNS})


# ---------------------------------------------------------------------------
# ablation matrix
# ---------------------------------------------------------------------------

def apply_axis_override(cfg: RunConfig, axis: str, value) -> RunConfig:
    d = cfg.to_dict()
    if axis == "strategy":
        d["strategy"] = value
    elif axis == "temporal_length":
        d["geometry"]["t_seasons"] = int(value)
    elif axis == "crop_kind":
        d["crop"]["kind"] = value
    elif axis == "crop_min_rate":
        d["crop"]["min_rate"] = float(value)
    elif axis == "tm_variant":
        d["tm"]["variant"] = value
    elif axis == "decoder_depth":
        d["model"]["decoder_depth"] = int(value)
    elif axis == "mask_ratio":
        d["model"]["mask_ratio"] = float(value)
    elif axis == "norm_target":
        d["model"]["norm_target"] = bool(value)
    elif axis == "pos_embed":
        d["model"]["pos_embed"] = value
    else:
        raise ConfigError(f"axes.{axis}", "unknown ablation axis")
    return config_from_dict(d)


def default_axes() -> list[tuple[str, list]]:
    return [
        ("strategy", [s.value for s in StrategyKind]),
        ("temporal_length", [1, 2, 3, 4]),
    ]


def config_id(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()[:12]


def run_ablation_row(cfg: RunConfig, probe_seeds_train: int = 48,
                     probe_seeds_test: int = 24) -> tuple[float, float]:
    """One pretraining run plus a linear probe; returns (final_loss, probe_acc)."""
    from .downstream import ProbeConfig, evaluate, scene_split

    pool = ScenePool(cfg)
    result = run_progressive(cfg, pool)
    rows = result.stage2_metrics or result.stage1_metrics
    final_loss = rows[-1]["loss_total"] if rows else float("nan")
    train, test = scene_split(cfg, probe_seeds_train, probe_seeds_test)
    report = evaluate(ProbeConfig(mode="linear_probe", seed=cfg.seed),
                      result.model, pool, train, test)
    return final_loss, report["accuracy"]


def run_ablation_matrix(base_cfg: RunConfig, axes: list[tuple[str, list]],
                        out_path) -> list[dict]:
    """One row per (axis, value) override; row-level errors never abort the run."""
    rows = []
    for axis, values in axes:
        for value in values:
            row = {"axis": axis, "value": value, "config_id": "",
                   "final_loss": "", "probe_acc": "", "wall_s": "", "error": ""}
            t0 = time.perf_counter()
            try:
                cfg = apply_axis_override(base_cfg, axis, value)
                row["config_id"] = config_id(cfg)
                final_loss, probe_acc = run_ablation_row(cfg)
                row["final_loss"] = repr(final_loss)
                row["probe_acc"] = repr(probe_acc)
            except (ConfigError, StageError, ValueError) as e:
                row["error"] = str(e)
            row["wall_s"] = f"{time.perf_counter() - t0:.3f}"
            rows.append(row)
    with open(out_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
