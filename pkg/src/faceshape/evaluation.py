"""Evaluation metrics and the ablation harness for trained editors.

Protocol: sample held-out faces, apply several independent single-feature
edits per face (random feature, standard-normal target), then aggregate

  pixel error    mean absolute difference between original and edited image
  edit error     |measured value of the edited feature - target|
  entanglement   mean absolute drift of every feature that was not edited

All values are in standardized feature units except pixel error.
"""

from __future__ import annotations

import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from faceshape.editor import EditPipeline, load_pipeline
from faceshape.landmarks import FEATURE_COUNT

EVAL_CHUNK = 50


def pixel_error(image, image_edit) -> float:
    """Mean absolute pixel difference between two image batches."""
    image = torch.as_tensor(image)
    image_edit = torch.as_tensor(image_edit)
    if image.shape != image_edit.shape:
        raise ValueError(f"image shapes differ: {tuple(image.shape)} vs"
                         f" {tuple(image_edit.shape)}")
    return float((image - image_edit).abs().mean())


def edit_error(measured: float, target: float) -> float:
    """Absolute miss of the edited feature against its target."""
    return abs(float(measured) - float(target))


def entanglement(measured, original, feature_id: int) -> float:
    """Mean absolute drift over all features other than the edited one."""
    measured = np.asarray(measured, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if measured.shape != original.shape:
        raise ValueError("feature vectors must have matching shapes")
    keep = np.ones(measured.shape[-1], dtype=bool)
    keep[feature_id] = False
    return float(np.mean(np.abs(measured[..., keep] - original[..., keep])))


@dataclass
class EvalReport:
    """Aggregated metrics for one evaluation run."""

    pixel_error: float
    edit_error: float
    entanglement: float
    mean_requested: float        # mean |target - original value|
    n_faces: int
    edits_per_face: int
    rounds: int
    seed: int
    tag: str = ""
    per_edit: dict = field(default_factory=dict, repr=False)
    extra_metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "pixel_error": self.pixel_error,
            "edit_error": self.edit_error,
            "entanglement": self.entanglement,
            "mean_requested": self.mean_requested,
            "n_faces": self.n_faces,
            "edits_per_face": self.edits_per_face,
            "rounds": self.rounds,
            "seed": self.seed,
            "extra_metrics": self.extra_metrics,
        }

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        tmp.replace(path)


def evaluate(pipeline, n_faces: int = 1000, edits_per_face: int = 5,
             seed: int = 900000, rounds: int = 1, tag: str = "",
             extra_metrics: dict | None = None) -> EvalReport:
    """Run the random-edit protocol against a pipeline or checkpoint path.

    Each face receives ``edits_per_face`` independent edits (the face is
    reset in between).  ``rounds`` > 1 re-applies the editor iteratively
    before measuring, matching the iterative-editing variant.  Extra
    metric callables (name -> f(image, image_edit) -> float) can be
    plugged in; they are averaged alongside the built-ins.
    """
    if isinstance(pipeline, (str, Path)):
        pipeline = load_pipeline(pipeline)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    backend = pipeline.backend
    editor = pipeline.editor
    dtype = backend.dtype
    mean_t = torch.tensor(pipeline.stats.mean, dtype=dtype)
    std_t = torch.tensor(pipeline.stats.std, dtype=dtype)
    gen = torch.Generator().manual_seed(seed)

    edit_errs, entangles, requested, pixels = [], [], [], []
    extra_vals = {name: [] for name in (extra_metrics or {})}
    remaining = n_faces
    while remaining > 0:
        B = min(EVAL_CHUNK, remaining)
        remaining -= B
        z = torch.randn(B, backend.descriptor.style_dim, generator=gen,
                        dtype=dtype)
        with torch.no_grad():
            w = backend.map_latent(z)
            synth0 = backend.synthesize(w, render=True)
            raw0 = backend.features_from_landmarks(synth0.landmarks)
            m0 = (raw0 - mean_t) / std_t
        idx = torch.arange(B)
        for _ in range(edits_per_face):
            ids = torch.randint(0, FEATURE_COUNT, (B,), generator=gen)
            targets = torch.randn(B, generator=gen, dtype=dtype)
            cur_w = w
            with torch.no_grad():
                current = m0[idx, ids]
                for _round in range(rounds):
                    cur_w, _s, _k = editor.manipulate(cur_w, ids, current,
                                                      targets)
                    synth_r = backend.synthesize(
                        cur_w, render=(_round == rounds - 1))
                    raw_r = backend.features_from_landmarks(synth_r.landmarks)
                    m_r = (raw_r - mean_t) / std_t
                    current = m_r[idx, ids]
            m1 = m_r
            edit_errs.append((m1[idx, ids] - targets).abs().numpy())
            keep = np.ones((B, FEATURE_COUNT))
            keep[idx.numpy(), ids.numpy()] = 0.0
            drift = np.abs((m1 - m0).numpy()) * keep
            entangles.append(drift.sum(axis=1) / (FEATURE_COUNT - 1))
            requested.append((targets - m0[idx, ids]).abs().numpy())
            pix = (synth_r.image - synth0.image).abs().mean(dim=(1, 2, 3))
            pixels.append(pix.numpy())
            for name, fn in (extra_metrics or {}).items():
                extra_vals[name].append(float(fn(synth0.image, synth_r.image)))

    per_edit = {
        "edit_error": np.concatenate(edit_errs),
        "entanglement": np.concatenate(entangles),
        "requested": np.concatenate(requested),
        "pixel_error": np.concatenate(pixels),
    }
    report = EvalReport(
        pixel_error=float(per_edit["pixel_error"].mean()),
        edit_error=float(per_edit["edit_error"].mean()),
        entanglement=float(per_edit["entanglement"].mean()),
        mean_requested=float(per_edit["requested"].mean()),
        n_faces=n_faces, edits_per_face=edits_per_face, rounds=rounds,
        seed=seed, tag=tag, per_edit=per_edit,
        extra_metrics={name: float(np.mean(vals)) if vals else float("nan")
                       for name, vals in extra_vals.items()})
    for value in (report.pixel_error, report.edit_error, report.entanglement):
        if not np.isfinite(value):
            raise ValueError(f"non-finite metric in evaluation: {report}")
    return report


ABLATION_VARIANTS = ("pix0", "feat0", "reg0", "cor0", "full", "full3x")


def _variant_config(base, variant: str):
    """Derive a variant's training config from the base one."""
    from faceshape.training import LossWeights, TrainingConfig
    cfg = TrainingConfig.from_dict(base.to_dict())
    w = cfg.weights.to_dict()
    if variant == "pix0":
        w["lambda_pix"] = 0.0
    elif variant == "feat0":
        w["lambda_feat"] = 0.0
    elif variant == "reg0":
        w["lambda_reg"] = 0.0
    elif variant == "cor0":
        w["lambda_cor"] = 0.0
    elif variant in ("full", "full3x"):
        pass
    else:
        raise ValueError(f"unknown ablation variant {variant!r}")
    cfg.weights = LossWeights.from_dict(w)
    return cfg


def ablation_suite(base_config, out_dir, variants=ABLATION_VARIANTS,
                   seeds=None, n_faces: int = 200, edits_per_face: int = 5,
                   eval_seed: int = 900000, progress: bool = False) -> dict:
    """Train and evaluate loss-term ablations with shared seeds.

    ``full3x`` reuses the ``full`` checkpoint and only changes evaluation
    to three iterative rounds, so one seed costs five training runs.
    Failures are recorded per variant instead of aborting the suite.
    Returns {variant: {seed: EvalReport-dict-or-error}} and writes a
    comparison table plus a machine-readable record file to ``out_dir``.
    """
    from faceshape.training import TrainingConfig, train

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if seeds is None:
        seeds = (base_config.seed,)
    results: dict = {v: {} for v in variants}

    for seed in seeds:
        full_ckpt = out_dir / f"full_seed{seed}.pt"
        for variant in variants:
            tag = f"{variant}_seed{seed}"
            try:
                if variant == "full3x":
                    if not full_ckpt.exists():
                        raise RuntimeError("full variant unavailable for 3x")
                    report = evaluate(str(full_ckpt), n_faces, edits_per_face,
                                      seed=eval_seed, rounds=3, tag=tag)
                else:
                    cfg = _variant_config(base_config, variant)
                    cfg.seed = seed
                    ckpt = out_dir / f"{variant}_seed{seed}.pt"
                    if progress:
                        print(f"training {tag} ...", flush=True)
                    train(cfg, ckpt,
                          metrics_path=out_dir / f"{variant}_seed{seed}.jsonl")
                    report = evaluate(str(ckpt), n_faces, edits_per_face,
                                      seed=eval_seed, rounds=1, tag=tag)
                results[variant][seed] = report.to_dict()
                if progress:
                    print(f"  {tag}: edit={report.edit_error:.4f}"
                          f" pix={report.pixel_error:.4f}"
                          f" ent={report.entanglement:.4f}", flush=True)
            except Exception as exc:
                results[variant][seed] = {
                    "tag": tag, "error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc(),
                }

    records = out_dir / "ablation_records.json"
    tmp = records.with_name(records.name + ".tmp")
    tmp.write_text(json.dumps(results, indent=2) + "\n")
    tmp.replace(records)
    (out_dir / "ablation_table.txt").write_text(format_ablation_table(results))
    return results


def format_ablation_table(results: dict) -> str:
    header = f"{'variant':10s} {'seed':>5s} {'edit_err':>9s} {'pixel':>8s} {'entangle':>9s}"
    lines = [header, "-" * len(header)]
    for variant, by_seed in results.items():
        for seed, rec in sorted(by_seed.items()):
            if "error" in rec:
                lines.append(f"{variant:10s} {seed:>5d}  FAILED: {rec['error']}")
            else:
                lines.append(
                    f"{variant:10s} {seed:>5d} {rec['edit_error']:9.4f}"
                    f" {rec['pixel_error']:8.4f} {rec['entanglement']:9.4f}")
    return "\n".join(lines) + "\n"


def untrained_reference_error(pipeline: EditPipeline, n_faces: int = 200,
                              edits_per_face: int = 5,
                              seed: int = 900000) -> float:
    """Edit error of doing nothing: E|target - original| on the same protocol.

    This is the floor any trained editor must beat; with standard-normal
    originals and targets it sits near 2/sqrt(pi) = 1.128.
    """
    backend = pipeline.backend
    dtype = backend.dtype
    mean_t = torch.tensor(pipeline.stats.mean, dtype=dtype)
    std_t = torch.tensor(pipeline.stats.std, dtype=dtype)
    gen = torch.Generator().manual_seed(seed)
    vals = []
    remaining = n_faces
    while remaining > 0:
        B = min(EVAL_CHUNK, remaining)
        remaining -= B
        z = torch.randn(B, backend.descriptor.style_dim, generator=gen,
                        dtype=dtype)
        with torch.no_grad():
            w = backend.map_latent(z)
            out = backend.synthesize(w, render=False)
            raw = backend.features_from_landmarks(out.landmarks)
            m0 = (raw - mean_t) / std_t
        idx = torch.arange(B)
        for _ in range(edits_per_face):
            ids = torch.randint(0, FEATURE_COUNT, (B,), generator=gen)
            targets = torch.randn(B, generator=gen, dtype=dtype)
            vals.append((targets - m0[idx, ids]).abs().numpy())
    return float(np.concatenate(vals).mean())
