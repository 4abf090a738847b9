"""Full model assembly: parameters, the per-scene pretraining forward pass,
and downstream feature extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig, StrategyKind
from .decoder import DecoderConfig, decode, init_decoder_params, mim_loss, \
    total_pretrain_loss
from .embedding import init_learnable_position_embedding, patch_count, \
    patch_embed, patchify, sinusoidal_position_embedding
from .encoder import EncoderConfig, encode, encode_single, init_encoder_params, \
    xavier_uniform
from .fusion import TMConfig, TMVariant, init_tm_params, tm_fuse
from .masking import MaskPlan, apply_mask

_INIT_TAG = 11


class ArchitectureError(ValueError):
    pass


@dataclass
class SceneView:
    """One season's cropped, normalized, flipped pair of modality rasters."""
    optical: np.ndarray  # (C_O, crop_h, crop_w)
    sar: np.ndarray      # (C_R, crop_h, crop_w)


@dataclass
class LossBreakdown:
    total: Tensor
    optical: float
    sar: float


class SeasonalMAE:
    """Season-aware multimodal masked autoencoder at a fixed architecture."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        g, m = cfg.geometry, cfg.model
        self.num_tokens = patch_count(g.crop_h, g.crop_w, g.patch)
        self.patch_dim_opt = g.c_opt * g.patch * g.patch
        self.patch_dim_sar = g.c_sar * g.patch * g.patch
        self.strategy = StrategyKind(cfg.strategy)
        self.encoder_cfg = EncoderConfig(depth=m.depth, heads=m.heads,
                                         embed_dim=m.embed_dim,
                                         mlp_ratio=m.mlp_ratio)
        self.decoder_cfg = DecoderConfig(depth=m.decoder_depth, dim=m.decoder_dim,
                                         heads=m.decoder_heads,
                                         mlp_ratio=m.mlp_ratio,
                                         normalize_target=m.norm_target)
        self.tm_cfg = TMConfig(variant=TMVariant(cfg.tm.variant),
                               heads=cfg.tm.heads,
                               decouple_combine=cfg.tm.decouple_combine)
        self.params: dict[str, Tensor] = {}
        self.optimizer_state = None
        self._sin_pos = sinusoidal_position_embedding(self.num_tokens, m.embed_dim)

    @property
    def tm_active(self) -> bool:
        return self.strategy.tm_enabled and self.tm_cfg.variant is not TMVariant.DISABLED

    def init_params(self, seed: int | None = None) -> None:
        seed = self.cfg.seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_TAG]))
        m = self.cfg.model
        p = self.params
        p.clear()
        p["embed.opt.w"] = Tensor(xavier_uniform(rng, (self.patch_dim_opt, m.embed_dim)),
                                  requires_grad=True)
        p["embed.opt.b"] = Tensor(np.zeros(m.embed_dim), requires_grad=True)
        p["embed.sar.w"] = Tensor(xavier_uniform(rng, (self.patch_dim_sar, m.embed_dim)),
                                  requires_grad=True)
        p["embed.sar.b"] = Tensor(np.zeros(m.embed_dim), requires_grad=True)
        if m.pos_embed == "learnable":
            p["pos.table"] = init_learnable_position_embedding(
                self.num_tokens, m.embed_dim, rng)
        init_encoder_params(p, "enc", self.encoder_cfg, rng)
        if self.tm_active:
            init_tm_params(p, "tm", self.tm_cfg, m.embed_dim, rng)
        init_decoder_params(p, "dec.opt", self.decoder_cfg, m.embed_dim,
                            self.patch_dim_opt, rng)
        init_decoder_params(p, "dec.sar", self.decoder_cfg, m.embed_dim,
                            self.patch_dim_sar, rng)

    # -- embedding ---------------------------------------------------------

    def _pos(self) -> Tensor:
        if self.cfg.model.pos_embed == "learnable":
            return self.params["pos.table"]
        return Tensor(self._sin_pos)

    def embed(self, image: np.ndarray, modality: str) -> Tensor:
        """Patch-embed one cropped season image and add positional encoding."""
        key = "opt" if modality == "optical" else "sar"
        tokens = patch_embed(image, self.params[f"embed.{key}.w"],
                             self.params[f"embed.{key}.b"], self.cfg.geometry.patch)
        return ad.add(tokens, self._pos())

    # -- pretraining forward -----------------------------------------------

    def pretrain_loss(self, views: list[SceneView], plan: MaskPlan) -> LossBreakdown:
        """Masked reconstruction loss for one scene under the run's strategy."""
        mode = self.strategy.mode
        visible_opt, visible_sar = [], []
        for t, view in enumerate(views):
            tok_o = self.embed(view.optical, "optical")
            vis_o, _ = apply_mask(tok_o, plan, t)
            visible_opt.append(vis_o)
            if mode != "unimodal":
                tok_r = self.embed(view.sar, "sar")
                vis_r, _ = apply_mask(tok_r, plan, t)
                visible_sar.append(vis_r)

        features: list[tuple[Tensor, Tensor | None]] = []
        for t in range(len(views)):
            if mode == "joint":
                f_o, f_r = encode(visible_opt[t], visible_sar[t],
                                  self.encoder_cfg, self.params)
            elif mode == "siamese":
                f_o = encode_single(visible_opt[t], self.encoder_cfg, self.params)
                f_r = encode_single(visible_sar[t], self.encoder_cfg, self.params)
            else:
                f_o = encode_single(visible_opt[t], self.encoder_cfg, self.params)
                f_r = None
            features.append((f_o, f_r))

        if self.tm_active and mode == "joint":
            features = tm_fuse([(o, r) for o, r in features], self.tm_cfg,
                               self.params)

        terms: list[Tensor] = []
        loss_opt = 0.0
        loss_sar = 0.0
        norm = self.decoder_cfg.normalize_target
        for t, view in enumerate(views):
            h_o, h_r = features[t]
            target_o = patchify(view.optical, self.cfg.geometry.patch)[plan.masked[t]]
            pred_o = decode(h_o, plan, t, self.decoder_cfg, self.params, "dec.opt")
            term_o = mim_loss(pred_o, target_o, norm)
            terms.append(term_o)
            loss_opt += term_o.item()
            if h_r is not None:
                target_r = patchify(view.sar, self.cfg.geometry.patch)[plan.masked[t]]
                pred_r = decode(h_r, plan, t, self.decoder_cfg, self.params, "dec.sar")
                term_r = mim_loss(pred_r, target_r, norm)
                terms.append(term_r)
                loss_sar += term_r.item()
        return LossBreakdown(total=total_pretrain_loss(terms),
                             optical=loss_opt, sar=loss_sar)

    # -- downstream features -------------------------------------------------

    def encode_features(self, view: SceneView, modality: str = "joint") -> Tensor:
        """Mean-pooled encoder features of an unmasked view, shape (1, D)."""
        if modality == "joint":
            tok_o = self.embed(view.optical, "optical")
            tok_r = self.embed(view.sar, "sar")
            f_o, f_r = encode(tok_o, tok_r, self.encoder_cfg, self.params)
            return ad.mean_rows(ad.concat_rows([f_o, f_r]))
        if modality == "optical":
            tokens = self.embed(view.optical, "optical")
        elif modality == "sar":
            tokens = self.embed(view.sar, "sar")
        else:
            raise ArchitectureError(f"unknown modality '{modality}'")
        return ad.mean_rows(encode_single(tokens, self.encoder_cfg, self.params))

    # -- state management ----------------------------------------------------

    def load_params(self, source: dict[str, Tensor], strict: bool = True) -> None:
        """Copy matching parameters in; error before mutating on any mismatch."""
        mismatched = [name for name, t in source.items()
                      if name in self.params and self.params[name].shape != t.shape]
        if mismatched:
            raise ArchitectureError(
                f"shape-incompatible warm start for parameters: {sorted(mismatched)}")
        if strict:
            missing = sorted(set(self.params) - set(source))
            extra = sorted(set(source) - set(self.params))
            if missing or extra:
                raise ArchitectureError(
                    f"parameter sets differ (missing={missing}, extra={extra})")
        for name, t in source.items():
            if name in self.params:
                self.params[name].data = t.data.copy()

    def warm_start(self, source: dict[str, Tensor]) -> list[str]:
        """Adopt embedding/encoder (and any other matching) weights.

        Returns the warm-started parameter names; new parameters (fresh TM
        blocks, new decoder shapes) keep their fresh initialization.
        """
        self.load_params({k: v for k, v in source.items() if k in self.params},
                         strict=False)
        return sorted(set(source) & set(self.params))

    def param_snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}
