"""Linear probing and fine-tuning of the pretrained encoder.

The featurizer and probe follow the sklearn estimator protocol (fit /
transform / predict / get_params) so frozen-backbone evaluation composes
with the wider ecosystem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .model import SceneView, SeasonalMAE
from .optim import OptimizerState, adamw_step
from .pretrain import ScenePool
from .synthdata import Scene, normalize


class SplitError(ValueError):
    pass


@dataclass
class ProbeConfig:
    mode: str = "linear_probe"  # or "fine_tune"
    pooling: str = "mean"
    epochs: int = 40
    lr: float = 1e-2
    batch_size: int = 16
    modality: str = "joint"
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("linear_probe", "fine_tune"):
            raise SplitError(f"unknown probe mode '{self.mode}'")
        if self.pooling != "mean":
            raise SplitError("only mean pooling is supported")


def scene_split(cfg: RunConfig, n_train: int, n_test: int) -> tuple[list[int], list[int]]:
    """Disjoint train/test scene seeds, placed after the pretraining range."""
    start = cfg.geometry.num_scenes
    train = list(range(start, start + n_train))
    test = list(range(start + n_train, start + n_train + n_test))
    return train, test


def probe_view(scene: Scene, cfg: RunConfig, pool: ScenePool) -> SceneView:
    """Deterministic center crop of season 0, both modalities, no masking."""
    g = cfg.geometry
    top = (g.h_full - g.crop_h) // 2
    left = (g.w_full - g.crop_w) // 2
    stats_opt, stats_sar = pool.stats()
    opt = normalize(scene.optical[0, :, top:top + g.crop_h, left:left + g.crop_w],
                    stats_opt)
    sar = normalize(scene.sar[0, :, top:top + g.crop_h, left:left + g.crop_w],
                    stats_sar)
    return SceneView(optical=opt, sar=sar)


class FrozenEncoderFeaturizer(BaseEstimator, TransformerMixin):
    """Mean-pooled encoder features from frozen pretrained weights."""

    def __init__(self, model: SeasonalMAE, pool: ScenePool, modality: str = "joint"):
        self.model = model
        self.pool = pool
        self.modality = modality

    def fit(self, X, y=None):
        return self

    def transform(self, X: list[Scene]) -> np.ndarray:
        feats = []
        for scene in X:
            view = probe_view(scene, self.model.cfg, self.pool)
            feats.append(self.model.encode_features(view, self.modality).data[0])
        return np.stack(feats)


class RawPixelFeaturizer(BaseEstimator, TransformerMixin):
    """Baseline: flattened normalized pixels of the probe view, no encoder."""

    def __init__(self, cfg: RunConfig, pool: ScenePool):
        self.cfg = cfg
        self.pool = pool

    def fit(self, X, y=None):
        return self

    def transform(self, X: list[Scene]) -> np.ndarray:
        feats = []
        for scene in X:
            view = probe_view(scene, self.cfg, self.pool)
            feats.append(np.concatenate([view.optical.ravel(), view.sar.ravel()]))
        return np.stack(feats)


class LinearProbeClassifier(BaseEstimator, ClassifierMixin):
    """Single linear layer trained with cross-entropy and AdamW."""

    def __init__(self, num_classes: int, epochs: int = 40, lr: float = 1e-2,
                 batch_size: int = 16, weight_decay: float = 0.0, seed: int = 0):
        self.num_classes = num_classes
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.intp)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 101]))
        dim = X.shape[1]
        params = {
            "head.w": Tensor(0.01 * rng.standard_normal((dim, self.num_classes)),
                             requires_grad=True),
            "head.b": Tensor(np.zeros(self.num_classes), requires_grad=True),
        }
        steps_per_epoch = math.ceil(len(X) / self.batch_size)
        total = max(self.epochs * steps_per_epoch, 2)
        opt = OptimizerState(base_lr=self.lr, weight_decay=self.weight_decay,
                             warmup_steps=min(max(total // 10, 0), total - 1),
                             total_steps=total)
        for epoch in range(self.epochs):
            order = np.random.default_rng(np.random.SeedSequence(
                [self.seed, 103, epoch])).permutation(len(X))
            for b in range(steps_per_epoch):
                idx = order[b * self.batch_size:(b + 1) * self.batch_size]
                with ad.Tape() as tape:
                    logits = ad.linear(Tensor(X[idx]), params["head.w"],
                                       params["head.b"])
                    loss = ad.softmax_cross_entropy(logits, y[idx])
                ad.backward(tape, loss)
                adamw_step(opt, params)
        self.coef_ = params["head.w"].data.copy()
        self.intercept_ = params["head.b"].data.copy()
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    def score(self, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(X) == np.asarray(y)).mean())


def _fine_tune(model: SeasonalMAE, pool: ScenePool, cfg: ProbeConfig,
               scenes: list[Scene], labels: np.ndarray) -> tuple[Tensor, Tensor]:
    """Update all model parameters plus a fresh head with cross-entropy."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 107]))
    dim = model.cfg.model.embed_dim
    head_w = Tensor(0.01 * rng.standard_normal((dim, model.cfg.geometry.num_classes)),
                    requires_grad=True)
    head_b = Tensor(np.zeros(model.cfg.geometry.num_classes), requires_grad=True)
    trainable = dict(model.params)
    trainable["probe.head.w"] = head_w
    trainable["probe.head.b"] = head_b
    views = [probe_view(s, model.cfg, pool) for s in scenes]

    steps_per_epoch = math.ceil(len(scenes) / cfg.batch_size)
    total = max(cfg.epochs * steps_per_epoch, 2)
    opt = OptimizerState(base_lr=cfg.lr, weight_decay=0.0,
                         warmup_steps=min(max(total // 10, 0), total - 1),
                         total_steps=total)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(np.random.SeedSequence(
            [cfg.seed, 109, epoch])).permutation(len(scenes))
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            with ad.Tape() as tape:
                pooled = ad.concat_rows(
                    [model.encode_features(views[i], cfg.modality) for i in idx])
                logits = ad.linear(pooled, head_w, head_b)
                loss = ad.softmax_cross_entropy(logits, labels[idx])
            ad.backward(tape, loss)
            adamw_step(opt, trainable)
    return head_w, head_b


def evaluate(probe_cfg: ProbeConfig, model: SeasonalMAE, pool: ScenePool,
             train_seeds: list[int], test_seeds: list[int]) -> dict:
    """Train a probe on disjoint scene splits and report top-1 test accuracy."""
    probe_cfg.validate()
    if set(train_seeds) & set(test_seeds):
        raise SplitError("train/test scene seeds overlap")
    train_scenes = [pool.scene(s) for s in train_seeds]
    test_scenes = [pool.scene(s) for s in test_seeds]
    y_train = np.array([s.latent_label for s in train_scenes], dtype=np.intp)
    y_test = np.array([s.latent_label for s in test_scenes], dtype=np.intp)
    degenerate = len(set(y_train.tolist()) | set(y_test.tolist())) < 2

    if probe_cfg.mode == "linear_probe":
        before = model.param_snapshot()
        featurizer = FrozenEncoderFeaturizer(model, pool, probe_cfg.modality)
        x_train = featurizer.transform(train_scenes)
        x_test = featurizer.transform(test_scenes)
        clf = LinearProbeClassifier(model.cfg.geometry.num_classes,
                                    epochs=probe_cfg.epochs, lr=probe_cfg.lr,
                                    batch_size=probe_cfg.batch_size,
                                    seed=probe_cfg.seed)
        clf.fit(x_train, y_train)
        accuracy = clf.score(x_test, y_test)
        after = model.param_snapshot()
        changed = [k for k in before if not np.array_equal(before[k], after[k])]
        if changed:
            raise SplitError(f"linear probe mutated encoder parameters: {changed}")
    else:
        head_w, head_b = _fine_tune(model, pool, probe_cfg,
                                    train_scenes, y_train)
        featurizer = FrozenEncoderFeaturizer(model, pool, probe_cfg.modality)
        logits = featurizer.transform(test_scenes) @ head_w.data + head_b.data
        accuracy = float((logits.argmax(axis=1) == y_test).mean())

    return {
        "mode": probe_cfg.mode,
        "accuracy": accuracy,
        "n_test": len(test_seeds),
        "seed": probe_cfg.seed,
        "degenerate": degenerate,
    }


def raw_pixel_probe(cfg: RunConfig, pool: ScenePool, train_seeds: list[int],
                    test_seeds: list[int], probe_cfg: ProbeConfig) -> float:
    """Accuracy of the probe trained on raw pixels (encoder bypassed)."""
    if set(train_seeds) & set(test_seeds):
        raise SplitError("train/test scene seeds overlap")
    featurizer = RawPixelFeaturizer(cfg, pool)
    train_scenes = [pool.scene(s) for s in train_seeds]
    test_scenes = [pool.scene(s) for s in test_seeds]
    x_train = featurizer.transform(train_scenes)
    x_test = featurizer.transform(test_scenes)
    y_train = np.array([s.latent_label for s in train_scenes], dtype=np.intp)
    y_test = np.array([s.latent_label for s in test_scenes], dtype=np.intp)
    clf = LinearProbeClassifier(cfg.geometry.num_classes, epochs=probe_cfg.epochs,
                                lr=probe_cfg.lr, batch_size=probe_cfg.batch_size,
                                seed=probe_cfg.seed)
    clf.fit(x_train, y_train)
    return clf.score(x_test, y_test)
