"""Training loop and losses for the latent-space face editor.

Each step samples fresh faces from the frozen backend, picks one feature
per face and a standard-normal target for it, applies the editor, and
scores the edit with three terms:

  pixel term      MSE between original and edited image
  feature term    MSE between original and edited last-block feature maps
  semantic term   squared error of the edited feature against its target,
                  plus a correlation-relaxed penalty on all others moving

The relaxation multiplies each off-target penalty by (1 - lambda_cor *
|corr(i, j)|): features that naturally co-vary with the edited one are
allowed to move.  Only editor parameters receive updates; the backend is
checksummed before and after to prove it stayed frozen.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from faceshape.editor import (
    EditorConfig,
    EditPipeline,
    FaceEditor,
    save_checkpoint,
    load_checkpoint,
)
from faceshape.errors import FrozenBackboneError, TrainingDivergedError
from faceshape.landmarks import FEATURE_COUNT
from faceshape.stats import FeatureStats, correlation_matrix, fit_stats
from faceshape.world import (
    BackendDescriptor,
    LandmarkSource,
    SyntheticFaceBackend,
    build_backend,
)


@dataclass
class LossWeights:
    lambda_pix: float = 1.0
    lambda_feat: float = 3.0
    lambda_sff: float = 0.005
    lambda_reg: float = 0.1
    lambda_cor: float = 1.0

    def __post_init__(self):
        for name in ("lambda_pix", "lambda_feat", "lambda_sff",
                     "lambda_reg", "lambda_cor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("lambda_pix", "lambda_feat", "lambda_sff",
                 "lambda_reg", "lambda_cor")}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


@dataclass
class TrainingConfig:
    backend: BackendDescriptor = field(default_factory=BackendDescriptor)
    weights: LossWeights = field(default_factory=LossWeights)
    steps: int = 5000
    batch_size: int = 16
    lr: float = 2e-5
    seed: int = 0
    landmark_mode: str = "oracle"
    stats_samples: int = 10000
    log_every: int = 100
    num_layers: int = 4
    num_heads: int = 4

    def editor_config(self) -> EditorConfig:
        return EditorConfig(n_styles=self.backend.n_styles,
                            style_dim=self.backend.style_dim,
                            num_layers=self.num_layers,
                            num_heads=self.num_heads)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("steps", "batch_size", "lr", "seed", "landmark_mode",
              "stats_samples", "log_every", "num_layers", "num_heads")}
        d["backend"] = self.backend.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        backend = BackendDescriptor.from_dict(d.pop("backend"))
        weights = LossWeights.from_dict(d.pop("weights"))
        return cls(backend=backend, weights=weights, **d)

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SampleBatch:
    """One training batch of faces with per-face edit assignments."""

    w: torch.Tensor            # (B, n, d) latents, no grad history
    feature_ids: torch.Tensor  # (B,) long
    targets: torch.Tensor      # (B,) standardized target values
    m_original: torch.Tensor   # (B, 23) standardized features of the faces
    image: torch.Tensor        # (B, 1, H, W) original render
    block_features: torch.Tensor  # (B, 6, H, W) original part maps

    def __len__(self):
        return self.w.shape[0]


def sample_batch(backend: SyntheticFaceBackend, stats: FeatureStats,
                 batch_size: int, gen: torch.Generator,
                 landmark_source: LandmarkSource | None = None) -> SampleBatch:
    """Draw a fresh training batch from the backend.

    z ~ N(0,1), feature index uniform over the catalog, target value
    standard normal in standardized feature units.
    """
    source = landmark_source or LandmarkSource()
    dtype = backend.dtype
    z = torch.randn(batch_size, backend.descriptor.style_dim,
                    generator=gen, dtype=dtype)
    feature_ids = torch.randint(0, FEATURE_COUNT, (batch_size,), generator=gen)
    targets = torch.randn(batch_size, generator=gen, dtype=dtype)
    with torch.no_grad():
        w = backend.map_latent(z)
        synth = backend.synthesize(w, render=True)
        landmarks = source.landmarks(synth)
        raw = backend.features_from_landmarks(landmarks)
        mean = torch.tensor(stats.mean, dtype=dtype)
        std = torch.tensor(stats.std, dtype=dtype)
        m_original = (raw - mean) / std
    return SampleBatch(w=w, feature_ids=feature_ids, targets=targets,
                       m_original=m_original, image=synth.image,
                       block_features=synth.block_features)


def loss_pix(image: torch.Tensor, image_edit: torch.Tensor) -> torch.Tensor:
    """Mean squared pixel difference."""
    if image.shape != image_edit.shape:
        raise ValueError(f"image shapes differ: {tuple(image.shape)} vs"
                         f" {tuple(image_edit.shape)}")
    return torch.mean((image - image_edit) ** 2)


def loss_feat(feats: torch.Tensor, feats_edit: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over last-block feature maps."""
    if feats.shape != feats_edit.shape:
        raise ValueError(f"feature shapes differ: {tuple(feats.shape)} vs"
                         f" {tuple(feats_edit.shape)}")
    return torch.mean((feats - feats_edit) ** 2)


def loss_sff(m_pred: torch.Tensor, feature_ids: torch.Tensor,
             targets: torch.Tensor, m_original: torch.Tensor,
             corr: torch.Tensor, lambda_reg: float,
             lambda_cor: float) -> torch.Tensor:
    """Semantic face feature loss with correlation relaxation.

    Per sample with edited feature j:

        (m_pred[j] - target)^2
        + lambda_reg * sum_{i != j} (m_pred[i] - m_original[i])^2
                                    * max(0, 1 - lambda_cor * |corr(i, j)|)

    All feature values are in standardized units; the off-target anchor is
    the original face, so untouched features are pulled back to where they
    started.  Returned value is the batch mean.
    """
    B = m_pred.shape[0]
    idx = torch.arange(B)
    primary = (m_pred[idx, feature_ids] - targets) ** 2
    relax = torch.clamp(1.0 - lambda_cor * corr[feature_ids].abs(), min=0.0)
    keep = 1.0 - torch.nn.functional.one_hot(
        feature_ids, m_pred.shape[1]).to(m_pred.dtype)
    off_target = ((m_pred - m_original) ** 2) * relax * keep
    per_sample = primary + lambda_reg * off_target.sum(dim=1)
    return per_sample.mean()


def total_loss(weights: LossWeights, image, image_edit, feats, feats_edit,
               m_pred, feature_ids, targets, m_original, corr):
    """Weighted sum of the three loss terms; returns (total, parts dict)."""
    lp = loss_pix(image, image_edit)
    lf = loss_feat(feats, feats_edit)
    ls = loss_sff(m_pred, feature_ids, targets, m_original, corr,
                  weights.lambda_reg, weights.lambda_cor)
    total = (weights.lambda_pix * lp + weights.lambda_feat * lf
             + weights.lambda_sff * ls)
    return total, {"pix": lp, "feat": lf, "sff": ls}


def fit_backend_stats(backend: SyntheticFaceBackend, n_samples: int = 10000,
                      seed: int = 1234, batch: int = 256):
    """Sample faces from the backend and fit feature statistics on them."""
    chunks = []
    remaining = n_samples
    part = 0
    with torch.no_grad():
        while remaining > 0:
            n = min(batch, remaining)
            z = backend.sample_latent(n, seed + part)
            out = backend.synthesize(backend.map_latent(z), render=False)
            chunks.append(backend.features_from_landmarks(out.landmarks)
                          .to(torch.float64).numpy())
            remaining -= n
            part += 1
    raw = np.concatenate(chunks, axis=0)
    return fit_stats(raw), correlation_matrix(raw)


class _MetricsLog:
    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a")
        else:
            self._fh = None

    def write(self, record: dict):
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()


def train(config: TrainingConfig, out_path, stats: FeatureStats | None = None,
          correlation: np.ndarray | None = None, detector=None,
          metrics_path=None, resume_from=None, progress: bool = False):
    """Run the full training loop and write a checkpoint to ``out_path``.

    Returns the trained EditPipeline.  When ``stats`` is omitted they are
    fitted from the backend first.  ``resume_from`` continues a previous
    run bit-for-bit: optimizer state, RNG state and step counter are
    restored from the checkpoint's training state.
    """
    backend = build_backend(config.backend)
    checksum_before = backend.parameter_checksum()

    if stats is None or correlation is None:
        stats, correlation = fit_backend_stats(
            backend, config.stats_samples, seed=config.seed * 7919 + 17)
    corr_t = torch.tensor(np.asarray(correlation), dtype=backend.dtype)
    mean_t = torch.tensor(stats.mean, dtype=backend.dtype)
    std_t = torch.tensor(stats.std, dtype=backend.dtype)

    source = LandmarkSource(config.landmark_mode, detector)
    if source.needs_render() and (detector is None
                                  or int(detector.trained_steps) == 0):
        raise ValueError("landmark_mode='learned' requires a trained detector")

    torch.manual_seed(config.seed)
    editor = FaceEditor(config.editor_config()).to(backend.dtype)
    opt = torch.optim.Adam(editor.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed + 1)
    start_step = 0

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        state = payload.get("training_state")
        if state is None:
            raise ValueError(f"{resume_from}: checkpoint has no training state")
        editor.load_state_dict(payload["editor_state"])
        opt.load_state_dict(state["optimizer"])
        gen.set_state(state["generator"])
        start_step = state["step"]

    log = _MetricsLog(metrics_path)
    try:
        for step in range(start_step, config.steps):
            batch = sample_batch(backend, stats, config.batch_size, gen, source)
            current = batch.m_original[
                torch.arange(len(batch)), batch.feature_ids]
            w_edit, s, k = editor.manipulate(
                batch.w, batch.feature_ids, current, batch.targets)
            synth = backend.synthesize(w_edit, render=True)
            landmarks = source.landmarks(synth)
            raw = backend.features_from_landmarks(landmarks)
            m_pred = (raw - mean_t) / std_t
            loss, parts = total_loss(
                config.weights, batch.image, synth.image,
                batch.block_features, synth.block_features,
                m_pred, batch.feature_ids, batch.targets,
                batch.m_original, corr_t)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: pix={parts['pix']}"
                    f" feat={parts['feat']} sff={parts['sff']}", step=step)
            opt.zero_grad()
            loss.backward()
            opt.step()

            record = {
                "step": step,
                "total": float(loss.detach()),
                "pix": float(parts["pix"].detach()),
                "feat": float(parts["feat"].detach()),
                "sff": float(parts["sff"].detach()),
                "mean_abs_k": float(k.detach().abs().mean()),
                "mean_dir_norm": float(
                    s.detach().flatten(1).norm(dim=1).mean()),
            }
            log.write(record)
            if progress and (step + 1) % max(1, config.log_every) == 0:
                print(f"step {step + 1}/{config.steps}"
                      f" total {record['total']:.5f}"
                      f" pix {record['pix']:.5f}"
                      f" feat {record['feat']:.5f}"
                      f" sff {record['sff']:.4f}")
    finally:
        log.close()

    checksum_after = backend.parameter_checksum()
    if checksum_after != checksum_before:
        raise FrozenBackboneError(
            "backend parameters changed during training"
            f" ({checksum_before[:12]} -> {checksum_after[:12]})")

    with torch.no_grad():
        editor.trained_steps.fill_(config.steps)
    editor.eval()
    save_checkpoint(
        out_path, editor, config.backend, stats, correlation,
        training_config=config.to_dict(),
        training_state={
            "optimizer": opt.state_dict(),
            "generator": gen.get_state(),
            "step": config.steps,
        })
    return EditPipeline(editor=editor, backend=backend, stats=stats,
                        correlation=np.asarray(correlation),
                        training_config=config.to_dict())
