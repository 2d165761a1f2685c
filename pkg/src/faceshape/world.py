"""Synthetic differentiable face generator used as the frozen editing backend.

The backend mimics the pieces the editor needs from a real GAN stack:

  latent z  -> mapping MLP -> layer-wise latent w+ (n identical rows)
  w+        -> decoder MLP -> 26 bounded face-shape parameters
  params    -> analytic layout of 98 landmarks (differentiable)
  landmarks -> soft line-drawing rasterizer -> grayscale image + group maps

Everything is built from a single seed with hand-rolled initialization, so
a descriptor fully reproduces the world.  All modules stay frozen during
editor training; gradients still flow through them to the latent input.

The rasterizer draws each face part as a set of Gaussian stroke points
sampled along the landmark polylines.  Each stroke point is a fixed
convex combination of two landmarks, so the whole image is smooth in the
landmark positions.  Per-part accumulation maps double as coarse
"feature maps" for learning a landmark detector.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from faceshape.errors import NotReadyError
from faceshape.landmarks import LANDMARK_COUNT, feature_weight_matrix

BACKEND_FORMAT = "faceshape-backend v1"

PARAM_SPECS = [
    # name, low, high
    ("face_cx", 0.44, 0.56),
    ("face_cy", 0.40, 0.50),
    ("face_hw", 0.26, 0.36),
    ("jaw_ratio", 0.80, 0.98),
    ("chin_ratio", 0.24, 0.42),
    ("chin_drop", 0.32, 0.42),
    ("chin_pinch", -0.025, 0.025),
    ("eye_dx", 0.10, 0.16),
    ("eye_dy", -0.02, 0.03),
    ("eye_hw", 0.030, 0.060),
    ("eye_open", 0.008, 0.028),
    ("gaze_x", -0.5, 0.5),
    ("gaze_y", -0.4, 0.4),
    ("brow_lift", 0.035, 0.070),
    ("brow_hw", 0.045, 0.080),
    ("brow_thick", 0.006, 0.018),
    ("brow_arch", 0.002, 0.022),
    ("nose_hw", 0.030, 0.060),
    ("nose_len", 0.10, 0.16),
    ("nose_tip_lift", 0.005, 0.028),
    ("philtrum", 0.035, 0.065),
    ("mouth_hw", 0.045, 0.085),
    ("mouth_open", 0.0, 0.035),
    ("lip_upper", 0.008, 0.022),
    ("lip_lower", 0.008, 0.024),
    ("mouth_corner", -0.018, 0.018),
]
PARAM_COUNT = len(PARAM_SPECS)

GROUP_NAMES = ["contour", "brows", "eyes", "nose", "mouth", "pupils"]

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class BackendDescriptor:
    """Everything needed to rebuild a backend bit-for-bit."""

    kind: str = "synthetic"
    seed: int = 0
    n_styles: int = 4
    style_dim: int = 64
    height: int = 64
    width: int = 64
    stroke_sigma: float = 1.5
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind != "synthetic":
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        for field in ("n_styles", "style_dim", "height", "width"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")

    def torch_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = {"format": BACKEND_FORMAT}
        d.update(asdict(self))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackendDescriptor":
        d = dict(d)
        fmt = d.pop("format", BACKEND_FORMAT)
        if fmt != BACKEND_FORMAT:
            raise ValueError(f"unsupported backend format {fmt!r}")
        return cls(**d)

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "BackendDescriptor":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SynthesisOutput:
    """One forward pass through the generator."""

    face_params: torch.Tensor          # (B, 26)
    landmarks: torch.Tensor            # (B, 98, 2)
    image: torch.Tensor | None         # (B, 1, H, W) in [0, 1)
    block_features: torch.Tensor | None  # (B, 6, H, W) pre-squash part maps


def _init_linear(layer: nn.Linear, gen: torch.Generator, gain: float = 1.0):
    std = gain / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.normal_(0.0, std, generator=gen)
        layer.bias.zero_()


def _subdivided_rows(rows, indices, subdiv, closed):
    """Append stroke rows for a polyline: (weight on a, weight on b) pairs."""
    pts = list(indices)
    segs = list(zip(pts, pts[1:]))
    if closed:
        segs.append((pts[-1], pts[0]))
    for a, b in segs:
        for k in range(subdiv):
            f = k / subdiv
            rows.append((a, b, f))
    if not closed:
        rows.append((pts[-1], pts[-1], 0.0))


def _build_stroke_layout():
    """Stroke interpolation rows plus per-group slices and weights."""
    rows = []

    def span(fn):
        start = len(rows)
        fn()
        return start, len(rows)

    contour = span(lambda: _subdivided_rows(rows, range(0, 33), 3, closed=False))
    brows = span(lambda: (_subdivided_rows(rows, range(33, 42), 2, closed=True),
                          _subdivided_rows(rows, range(42, 51), 2, closed=True)))
    eyes = span(lambda: (_subdivided_rows(rows, range(60, 68), 2, closed=True),
                         _subdivided_rows(rows, range(68, 76), 2, closed=True)))
    nose = span(lambda: (_subdivided_rows(rows, range(51, 55), 3, closed=False),
                         _subdivided_rows(rows, range(55, 60), 3, closed=False)))
    mouth = span(lambda: (_subdivided_rows(rows, range(76, 88), 2, closed=True),
                          _subdivided_rows(rows, range(88, 96), 2, closed=True)))
    pupils = span(lambda: (rows.append((96, 96, 0.0)), rows.append((97, 97, 0.0))))

    matrix = np.zeros((len(rows), LANDMARK_COUNT), dtype=np.float64)
    for r, (a, b, f) in enumerate(rows):
        matrix[r, a] += 1.0 - f
        matrix[r, b] += f
    weights = np.full(len(rows), 0.35, dtype=np.float64)
    weights[pupils[0]:pupils[1]] = 3.0
    slices = dict(zip(GROUP_NAMES, [contour, brows, eyes, nose, mouth, pupils]))
    return matrix, weights, slices


class SyntheticFaceBackend(nn.Module):
    """Frozen synthetic generator: latent -> face image with known landmarks."""

    def __init__(self, descriptor: BackendDescriptor):
        super().__init__()
        self.descriptor = descriptor
        d = descriptor.style_dim
        gen = torch.Generator().manual_seed(descriptor.seed)

        self.mapping = nn.Sequential(
            nn.Linear(d, d), nn.Tanh(), nn.Linear(d, d),
        )
        flat = descriptor.n_styles * d
        self.decoder = nn.Sequential(
            nn.Linear(flat, 96), nn.Tanh(),
            nn.Linear(96, 96), nn.Tanh(),
            nn.Linear(96, PARAM_COUNT),
        )
        for layer in (self.mapping[0], self.mapping[2],
                      self.decoder[0], self.decoder[2]):
            _init_linear(layer, gen)
        _init_linear(self.decoder[4], gen, gain=2.5)

        lo = torch.tensor([s[1] for s in PARAM_SPECS], dtype=torch.float64)
        hi = torch.tensor([s[2] for s in PARAM_SPECS], dtype=torch.float64)
        self.register_buffer("param_lo", lo)
        self.register_buffer("param_hi", hi)

        matrix, weights, slices = _build_stroke_layout()
        self.group_slices = slices
        self.register_buffer("stroke_matrix", torch.from_numpy(matrix))
        self.register_buffer("stroke_weights", torch.from_numpy(weights))
        self.register_buffer(
            "pixel_x", (torch.arange(descriptor.width, dtype=torch.float64) + 0.5)
            / descriptor.width)
        self.register_buffer(
            "pixel_y", (torch.arange(descriptor.height, dtype=torch.float64) + 0.5)
            / descriptor.height)
        self.register_buffer(
            "feature_weights", torch.from_numpy(feature_weight_matrix()))

        # fixed angular tables for the layout
        t = torch.linspace(0.0, 1.0, 33, dtype=torch.float64)
        self.register_buffer("contour_t", t)
        self.register_buffer("contour_cos", torch.cos(math.pi * t))
        self.register_buffer("contour_sin", torch.sin(math.pi * t))
        v = (2.0 * t - 1.0).abs()
        self.register_buffer("contour_b0", v * v)
        self.register_buffer("contour_b1", 2.0 * v * (1.0 - v))
        self.register_buffer("contour_b2", (1.0 - v) * (1.0 - v))
        self.register_buffer("contour_pinch", torch.exp(-(((t - 0.5) / 0.09) ** 2)))
        self.register_buffer("brow_s5", torch.tensor([-1.0, -0.5, 0.0, 0.5, 1.0],
                                                     dtype=torch.float64))
        self.register_buffer("brow_s4l", torch.tensor([1.0, 0.5, 0.0, -0.5],
                                                      dtype=torch.float64))
        self.register_buffer("brow_s4r", torch.tensor([0.5, 0.0, -0.5, -1.0],
                                                      dtype=torch.float64))
        psi = torch.arange(8, dtype=torch.float64) * (math.pi / 4.0)
        self.register_buffer("ring8_cos", torch.cos(psi))
        self.register_buffer("ring8_up", torch.clamp(torch.sin(psi), min=0.0))
        self.register_buffer("ring8_dn", torch.clamp(-torch.sin(psi), min=0.0))
        self.register_buffer("ring8_cc", torch.cos(psi) ** 2)
        phi = torch.arange(12, dtype=torch.float64) * (math.pi / 6.0)
        self.register_buffer("ring12_cos", torch.cos(phi))
        self.register_buffer("ring12_up", torch.clamp(torch.sin(phi), min=0.0))
        self.register_buffer("ring12_dn", torch.clamp(-torch.sin(phi), min=0.0))
        self.register_buffer("ring12_cc", torch.cos(phi) ** 2)

        self.to(descriptor.torch_dtype())
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    @property
    def dtype(self):
        return self.descriptor.torch_dtype()

    def sample_latent(self, n_faces: int, seed: int) -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(n_faces, self.descriptor.style_dim,
                           generator=gen, dtype=self.dtype)

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        """z (B, d) -> w+ (B, n_styles, d): one style vector repeated per layer."""
        if z.ndim != 2 or z.shape[1] != self.descriptor.style_dim:
            raise ValueError(
                f"expected (B, {self.descriptor.style_dim}) latents, got {tuple(z.shape)}")
        w = self.mapping(z)
        return w.unsqueeze(1).expand(-1, self.descriptor.n_styles, -1)

    def face_params(self, wplus: torch.Tensor) -> torch.Tensor:
        n, d = self.descriptor.n_styles, self.descriptor.style_dim
        if wplus.ndim != 3 or wplus.shape[1:] != (n, d):
            raise ValueError(
                f"expected (B, {n}, {d}) layer-wise latents, got {tuple(wplus.shape)}")
        raw = self.decoder(wplus.reshape(wplus.shape[0], n * d))
        unit = torch.sigmoid(raw)
        return self.param_lo + (self.param_hi - self.param_lo) * unit

    def landmarks_from_params(self, p: torch.Tensor) -> torch.Tensor:
        """(B, 26) bounded face parameters -> (B, 98, 2) landmark layout."""
        B = p.shape[0]
        col = {name: p[:, i:i + 1] for i, (name, _, _) in enumerate(PARAM_SPECS)}
        cx, cy = col["face_cx"], col["face_cy"]
        out = p.new_zeros(B, LANDMARK_COUNT, 2)

        # jawline: half-width blends temple -> jaw -> chin, y dips to the chin
        half_w = col["face_hw"] * (self.contour_b0
                                   + self.contour_b1 * col["jaw_ratio"]
                                   + self.contour_b2 * col["chin_ratio"])
        out[:, 0:33, 0] = cx - half_w * self.contour_cos
        out[:, 0:33, 1] = (cy + col["chin_drop"] * self.contour_sin
                           + col["chin_pinch"] * self.contour_pinch)

        ey = cy + col["eye_dy"]
        ex_l, ex_r = cx - col["eye_dx"], cx + col["eye_dx"]
        by = ey - col["brow_lift"]
        arch5 = col["brow_arch"] * (1.0 - self.brow_s5 ** 2)
        out[:, 33:38, 0] = ex_l + self.brow_s5 * col["brow_hw"]
        out[:, 33:38, 1] = by - arch5
        out[:, 38:42, 0] = ex_l + self.brow_s4l * col["brow_hw"]
        out[:, 38:42, 1] = (by - col["brow_arch"] * (1.0 - self.brow_s4l ** 2)
                            + col["brow_thick"])
        out[:, 42:47, 0] = ex_r + self.brow_s5 * col["brow_hw"]
        out[:, 42:47, 1] = by - arch5
        out[:, 47:51, 0] = ex_r + self.brow_s4r * col["brow_hw"]
        out[:, 47:51, 1] = (by - col["brow_arch"] * (1.0 - self.brow_s4r ** 2)
                            + col["brow_thick"])

        nose_top = ey + 0.02
        base_y = nose_top + col["nose_len"]
        out[:, 51:55, 0] = cx
        out[:, 51, 1] = nose_top[:, 0]
        out[:, 52, 1] = (nose_top + col["nose_len"] / 3.0)[:, 0]
        out[:, 53, 1] = (nose_top + 2.0 * col["nose_len"] / 3.0)[:, 0]
        out[:, 54, 1] = (base_y - col["nose_tip_lift"])[:, 0]
        out[:, 55:60, 0] = cx + self.brow_s5 * col["nose_hw"]
        out[:, 55:60, 1] = base_y

        eye_y = (ey - col["eye_open"] * self.ring8_up
                 + col["eye_open"] * self.ring8_dn)
        out[:, 60:68, 0] = ex_l - col["eye_hw"] * self.ring8_cos
        out[:, 60:68, 1] = eye_y
        out[:, 68:76, 0] = ex_r - col["eye_hw"] * self.ring8_cos
        out[:, 68:76, 1] = eye_y

        my = base_y + col["philtrum"]
        half_open = col["mouth_open"] / 2.0
        up = half_open + col["lip_upper"]
        dn = half_open + col["lip_lower"]
        outer_hw = 1.15 * col["mouth_hw"]
        out[:, 76:88, 0] = cx - outer_hw * self.ring12_cos
        out[:, 76:88, 1] = (my - up * self.ring12_up + dn * self.ring12_dn
                            - col["mouth_corner"] * self.ring12_cc)
        out[:, 88:96, 0] = cx - col["mouth_hw"] * self.ring8_cos
        out[:, 88:96, 1] = (my - half_open * self.ring8_up
                            + half_open * self.ring8_dn
                            - col["mouth_corner"] * self.ring8_cc)

        out[:, 96, 0] = (ex_l + col["gaze_x"] * col["eye_hw"])[:, 0]
        out[:, 97, 0] = (ex_r + col["gaze_x"] * col["eye_hw"])[:, 0]
        pupil_y = (ey + col["gaze_y"] * col["eye_open"])[:, 0]
        out[:, 96, 1] = pupil_y
        out[:, 97, 1] = pupil_y
        return out

    def render(self, landmarks: torch.Tensor):
        """(B, 98, 2) landmarks -> image (B,1,H,W) and part maps (B,6,H,W)."""
        B = landmarks.shape[0]
        H, W = self.descriptor.height, self.descriptor.width
        stroke = torch.einsum("sp,bpa->bsa", self.stroke_matrix, landmarks)
        sig_x = self.descriptor.stroke_sigma / W
        sig_y = self.descriptor.stroke_sigma / H
        dx = self.pixel_x.view(1, 1, W) - stroke[:, :, 0:1]
        dy = self.pixel_y.view(1, 1, H) - stroke[:, :, 1:2]
        gx = torch.exp(-(dx * dx) / (2.0 * sig_x * sig_x))
        gy = torch.exp(-(dy * dy) / (2.0 * sig_y * sig_y))
        gy = gy * self.stroke_weights.view(1, -1, 1)
        maps = []
        for name in GROUP_NAMES:
            a, b = self.group_slices[name]
            maps.append(torch.bmm(gy[:, a:b].transpose(1, 2), gx[:, a:b]))
        block = torch.stack(maps, dim=1)
        image = 1.0 - torch.exp(-block.sum(dim=1, keepdim=True))
        return image, block

    def synthesize(self, wplus: torch.Tensor, render: bool = True) -> SynthesisOutput:
        params = self.face_params(wplus)
        landmarks = self.landmarks_from_params(params)
        image = block = None
        if render:
            image, block = self.render(landmarks)
        return SynthesisOutput(face_params=params, landmarks=landmarks,
                               image=image, block_features=block)

    def features_from_landmarks(self, landmarks: torch.Tensor) -> torch.Tensor:
        """(B, 98, 2) -> (B, 23) raw semantic features, differentiable."""
        return torch.einsum("fpa,bpa->bf", self.feature_weights, landmarks)

    def parameter_checksum(self) -> str:
        """sha256 over mapping+decoder weights; used to prove frozenness."""
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def build_backend(descriptor: BackendDescriptor) -> SyntheticFaceBackend:
    if descriptor.kind != "synthetic":
        raise ValueError(f"unknown backend kind {descriptor.kind!r}")
    return SyntheticFaceBackend(descriptor)


class LandmarkSource:
    """Resolves landmarks for a synthesis result.

    oracle mode passes through the exact analytic landmarks carried on the
    synthesis output (fast, default).  learned mode runs a trained
    convolutional detector on the rendered image, exercising the realistic
    topology including detector imperfection.  Both are differentiable.
    """

    def __init__(self, mode: str = "oracle", detector=None):
        if mode not in ("oracle", "learned"):
            raise ValueError(f"mode must be 'oracle' or 'learned', got {mode!r}")
        self.mode = mode
        self.detector = detector

    def landmarks(self, synth: SynthesisOutput) -> torch.Tensor:
        if self.mode == "oracle":
            return synth.landmarks
        if self.detector is None or int(self.detector.trained_steps) == 0:
            raise NotReadyError(
                "learned landmark mode requires a trained detector")
        if synth.image is None:
            raise ValueError("learned landmark mode needs a rendered image")
        return self.detector(synth.image)

    def needs_render(self) -> bool:
        return self.mode == "learned"


class LandmarkDetector(nn.Module):
    """Convolutional landmark regressor: per-landmark heatmaps + soft-argmax.

    A coordconv stem produces one 98-channel heatmap stack at half input
    resolution; spatial softmax turns each channel into a distribution and
    the predicted position is its expected coordinate.  The expectation is
    continuous, so predictions are sub-pixel and fully differentiable.
    """

    SOFTMAX_TEMPERATURE = 4.0

    def __init__(self, height: int = 64, width: int = 64):
        super().__init__()
        self.height, self.width = height, width
        self.conv = nn.Sequential(
            nn.Conv2d(3, 32, 5, stride=2, padding=2), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=1, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, stride=1, padding=1), nn.ReLU(),
            nn.Conv2d(64, LANDMARK_COUNT, 3, stride=1, padding=1),
        )
        hh, hw = height // 2, width // 2
        hy = (torch.arange(hh, dtype=torch.float32) + 0.5) / hh
        hx = (torch.arange(hw, dtype=torch.float32) + 0.5) / hw
        gy, gx = torch.meshgrid(hy, hx, indexing="ij")
        self.register_buffer("heat_x", gx.reshape(-1))
        self.register_buffer("heat_y", gy.reshape(-1))
        ys = (torch.arange(height, dtype=torch.float32) + 0.5) / height
        xs = (torch.arange(width, dtype=torch.float32) + 0.5) / width
        cy, cx = torch.meshgrid(ys, xs, indexing="ij")
        self.register_buffer("coord_grid", torch.stack([cx, cy]).unsqueeze(0))
        self.register_buffer("trained_steps", torch.zeros((), dtype=torch.long))

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        B = image.shape[0]
        grid = self.coord_grid.expand(B, -1, -1, -1).to(image.dtype)
        heat = self.conv(torch.cat([image, grid], dim=1))
        prob = torch.softmax(heat.reshape(B, LANDMARK_COUNT, -1)
                             * self.SOFTMAX_TEMPERATURE, dim=-1)
        x = (prob * self.heat_x).sum(-1)
        y = (prob * self.heat_y).sum(-1)
        return torch.stack([x, y], dim=-1)

    def detect(self, image: torch.Tensor) -> torch.Tensor:
        if int(self.trained_steps) == 0:
            raise NotReadyError("landmark detector has not been trained yet")
        with torch.no_grad():
            return self.forward(image)


def train_landmark_detector(backend: SyntheticFaceBackend, steps: int = 500,
                            batch_size: int = 64, dataset_size: int = 4096,
                            lr: float = 2e-3, seed: int = 0,
                            log_every: int = 0) -> LandmarkDetector:
    """Fit a detector on rendered (image, landmark) pairs from the backend.

    Synthesis dominates the cost, so a fixed dataset is generated once and
    the regressor runs plain minibatch MSE with cosine learning-rate decay.
    The returned detector is frozen (eval mode, no gradients to its own
    parameters) so it can sit inside a larger differentiable pipeline.
    """
    images, targets = [], []
    with torch.no_grad():
        remaining = dataset_size
        chunk = 0
        while remaining > 0:
            n = min(64, remaining)
            z = backend.sample_latent(n, seed * 100003 + chunk)
            synth = backend.synthesize(backend.map_latent(z))
            images.append(synth.image)
            targets.append(synth.landmarks)
            remaining -= n
            chunk += 1
    images = torch.cat(images)
    targets = torch.cat(targets)

    torch.manual_seed(seed)
    det = LandmarkDetector(backend.descriptor.height, backend.descriptor.width)
    det = det.to(backend.dtype)
    opt = torch.optim.Adam(det.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    gen = torch.Generator().manual_seed(seed + 1)
    for step in range(steps):
        idx = torch.randint(0, images.shape[0], (batch_size,), generator=gen)
        pred = det(images[idx])
        loss = torch.mean((pred - targets[idx]) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log_every and (step + 1) % log_every == 0:
            print(f"detector step {step + 1}/{steps} loss {loss.item():.3e}")
    with torch.no_grad():
        det.trained_steps.fill_(steps)
    det.eval()
    for p in det.parameters():
        p.requires_grad_(False)
    return det


def detection_error(backend: SyntheticFaceBackend, det: LandmarkDetector,
                    n_faces: int = 256, seed: int = 999) -> float:
    """Mean Euclidean distance between detected and true landmarks."""
    z = backend.sample_latent(n_faces, seed)
    with torch.no_grad():
        synth = backend.synthesize(backend.map_latent(z))
        pred = det.detect(synth.image)
        dist = torch.linalg.norm(pred - synth.landmarks, dim=-1)
    return float(dist.mean())
