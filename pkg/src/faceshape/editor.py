"""Transformer editor and scaling network for latent-space face edits.

One edit moves a layer-wise latent along a learned, feature-specific
direction:

    w_edit = w + k * s

The direction s comes from a transformer encoder that reads the n style
vectors of w plus a learned embedding of the feature being edited; the
scalar k comes from a small MLP fed the current and target feature values
(standardized units) together with the same feature embedding.  k is a
free scalar, so edits move in both directions along s.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from faceshape.errors import NotReadyError
from faceshape.landmarks import FEATURE_COUNT
from faceshape.stats import FeatureStats
from faceshape.world import BackendDescriptor, SyntheticFaceBackend, build_backend

CHECKPOINT_FORMAT = "faceshape-checkpoint v1"


@dataclass
class EditorConfig:
    """Architecture knobs for the editor pair."""

    n_styles: int = 4
    style_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    ffn_dim: int | None = None    # defaults to 4 * style_dim
    scale_hidden: int = 32

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.style_dim
        if self.style_dim % self.num_heads:
            raise ValueError("style_dim must be divisible by num_heads")

    def to_dict(self) -> dict:
        return {
            "n_styles": self.n_styles, "style_dim": self.style_dim,
            "num_layers": self.num_layers, "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim, "scale_hidden": self.scale_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditorConfig":
        return cls(**d)


@dataclass
class EditResult:
    """One (possibly iterative) edit of a batch of latents."""

    w: torch.Tensor               # (B, n, d) input latents
    w_edit: torch.Tensor          # (B, n, d) edited latents
    direction: torch.Tensor       # (B, n, d) s, direction of the final round
    scale: torch.Tensor           # (B,) k of the final round
    feature_id: int
    target: torch.Tensor          # (B,) target value, standardized units
    before: torch.Tensor          # (B, 23) standardized features before
    after: torch.Tensor           # (B, 23) standardized features after
    rounds: list = field(default_factory=list)  # per-round (w, k) trace


class FaceEditor(nn.Module):
    """Predicts an edit direction and step size for one semantic feature."""

    def __init__(self, config: EditorConfig):
        super().__init__()
        self.config = config
        d = config.style_dim
        self.feature_embedding = nn.Embedding(FEATURE_COUNT, d)
        self.position_embedding = nn.Parameter(
            torch.zeros(config.n_styles + 1, d))
        nn.init.normal_(self.position_embedding, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=config.num_heads, dim_feedforward=config.ffn_dim,
            dropout=0.0, batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=config.num_layers, enable_nested_tensor=False)
        self.out_proj = nn.Linear(d, d)
        self.scale_net = nn.Sequential(
            nn.Linear(d + 2, config.scale_hidden), nn.ReLU(),
            nn.Linear(config.scale_hidden, config.scale_hidden), nn.ReLU(),
            nn.Linear(config.scale_hidden, 1))
        self.register_buffer("trained_steps", torch.zeros((), dtype=torch.long))

    def predict_direction(self, w: torch.Tensor, feature_id) -> torch.Tensor:
        """w (B, n, d) -> s (B, n, d) for the given feature.

        The token sequence is the n style vectors with the feature
        embedding appended as the last token; the transformer output at
        that extra position is dropped, the rest maps through a linear
        projection to per-style offsets.
        """
        B, n, d = w.shape
        if (n, d) != (self.config.n_styles, self.config.style_dim):
            raise ValueError(
                f"expected (B, {self.config.n_styles}, {self.config.style_dim})"
                f" latents, got {tuple(w.shape)}")
        fid = self._feature_ids(feature_id, B, w.device)
        emb = self.feature_embedding(fid).unsqueeze(1)
        tokens = torch.cat([w, emb], dim=1) + self.position_embedding
        encoded = self.encoder(tokens)
        return self.out_proj(encoded[:, :n, :])

    def predict_scale(self, current, target, feature_id) -> torch.Tensor:
        """Standardized (current, target) values -> signed step size k (B,)."""
        current = torch.as_tensor(current)
        target = torch.as_tensor(target)
        if current.ndim == 0:
            current = current.unsqueeze(0)
        if target.ndim == 0:
            target = target.unsqueeze(0)
        B = current.shape[0]
        fid = self._feature_ids(feature_id, B, current.device)
        emb = self.feature_embedding(fid)
        dtype = emb.dtype
        inp = torch.cat([current.to(dtype).unsqueeze(1),
                         target.to(dtype).unsqueeze(1), emb], dim=1)
        return self.scale_net(inp).squeeze(1)

    def manipulate(self, w: torch.Tensor, feature_id, current, target):
        """Apply one edit step: returns (w_edit, direction, k)."""
        s = self.predict_direction(w, feature_id)
        k = self.predict_scale(current, target, feature_id)
        w_edit = w + k.view(-1, 1, 1) * s
        return w_edit, s, k

    def _feature_ids(self, feature_id, batch, device) -> torch.Tensor:
        if isinstance(feature_id, int):
            if not 0 <= feature_id < FEATURE_COUNT:
                raise ValueError(f"feature_id must be in 0..{FEATURE_COUNT - 1},"
                                 f" got {feature_id}")
            return torch.full((batch,), feature_id, dtype=torch.long,
                              device=device)
        fid = torch.as_tensor(feature_id, dtype=torch.long, device=device)
        if fid.shape != (batch,):
            raise ValueError(f"feature ids must be scalar or length {batch}")
        if int(fid.min()) < 0 or int(fid.max()) >= FEATURE_COUNT:
            raise ValueError("feature ids out of range")
        return fid

    def zero_manipulation_(self):
        """Force the no-op edit (s = 0 for every input); used in tests."""
        with torch.no_grad():
            self.out_proj.weight.zero_()
            self.out_proj.bias.zero_()
        return self


class EditPipeline:
    """Editor + frozen backend + feature statistics, wired for inference."""

    def __init__(self, editor: FaceEditor, backend: SyntheticFaceBackend,
                 stats: FeatureStats, correlation: np.ndarray,
                 training_config: dict | None = None):
        self.editor = editor
        self.backend = backend
        self.stats = stats
        self.correlation = np.asarray(correlation, dtype=np.float64)
        self.training_config = training_config or {}
        dtype = backend.dtype
        self._mean = torch.tensor(stats.mean, dtype=dtype)
        self._std = torch.tensor(stats.std, dtype=dtype)

    def measure(self, w: torch.Tensor) -> torch.Tensor:
        """w (B, n, d) -> standardized features (B, 23)."""
        out = self.backend.synthesize(w, render=False)
        raw = self.backend.features_from_landmarks(out.landmarks)
        return (raw - self._mean) / self._std

    def edit(self, w: torch.Tensor, feature_id: int, target,
             rounds: int = 1, allow_untrained: bool = False) -> EditResult:
        """Move feature ``feature_id`` of each face toward ``target``.

        target is in standardized units (scalar or (B,)).  rounds > 1
        re-measures and re-applies the editor, which shrinks the residual
        edit error.  Inference only; no gradients are recorded.
        """
        if int(self.editor.trained_steps) == 0 and not allow_untrained:
            raise NotReadyError("editor has not been trained; pass"
                                " allow_untrained=True to override")
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        with torch.no_grad():
            before = self.measure(w)
            target_t = torch.as_tensor(target, dtype=w.dtype)
            if target_t.ndim == 0:
                target_t = target_t.expand(w.shape[0]).clone()
            current_w = w
            trace = []
            for _ in range(rounds):
                current_val = self.measure(current_w)[:, feature_id]
                current_w, s, k = self.editor.manipulate(
                    current_w, feature_id, current_val, target_t)
                trace.append((current_w, s, k))
            after = self.measure(current_w)
        return EditResult(w=w, w_edit=current_w, direction=s, scale=k,
                          feature_id=feature_id, target=target_t,
                          before=before, after=after, rounds=trace)

    def iterative_edit(self, w: torch.Tensor, feature_id: int, target,
                       rounds: int = 3,
                       allow_untrained: bool = False) -> EditResult:
        """edit() with iterative re-measurement, three rounds by default."""
        return self.edit(w, feature_id, target, rounds=rounds,
                         allow_untrained=allow_untrained)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, editor: FaceEditor, backend_descriptor: BackendDescriptor,
                    stats: FeatureStats, correlation: np.ndarray,
                    training_config: dict | None = None,
                    training_state: dict | None = None):
    """Atomically write everything needed to reload the edit pipeline.

    Feature statistics and the correlation matrix are embedded (not
    referenced by path) so a checkpoint is portable on its own.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "backend": backend_descriptor.to_dict(),
        "editor_config": editor.config.to_dict(),
        "editor_state": editor.state_dict(),
        "stats": {
            "mean": stats.mean, "std": stats.std,
            "slider_lo": stats.slider_lo, "slider_hi": stats.slider_hi,
            "sample_count": stats.sample_count,
        },
        "correlation": np.asarray(correlation, dtype=np.float64),
        "training_config": training_config or {},
        "trained_steps": int(editor.trained_steps),
    }
    payload["config_hash"] = _config_hash({
        "backend": payload["backend"],
        "editor_config": payload["editor_config"],
        "training_config": payload["training_config"],
    })
    if training_state is not None:
        payload["training_state"] = training_state
    path = os.fspath(path)
    tmp = path + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(os.fspath(path), map_location="cpu",
                         weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    return payload


def load_pipeline(path) -> EditPipeline:
    """Rebuild backend + editor + stats from a checkpoint file."""
    payload = load_checkpoint(path)
    descriptor = BackendDescriptor.from_dict(payload["backend"])
    backend = build_backend(descriptor)
    editor = FaceEditor(EditorConfig.from_dict(payload["editor_config"]))
    editor.load_state_dict(payload["editor_state"])
    editor = editor.to(descriptor.torch_dtype())
    editor.eval()
    st = payload["stats"]
    stats = FeatureStats(mean=st["mean"], std=st["std"],
                         slider_lo=st["slider_lo"], slider_hi=st["slider_hi"],
                         sample_count=st["sample_count"])
    return EditPipeline(editor=editor, backend=backend, stats=stats,
                        correlation=payload["correlation"],
                        training_config=payload["training_config"])
