"""98-point landmark schema and the 23 semantic face features.

Landmarks follow the standard WFLW ordering: 0-32 face contour, 33-41 /
42-50 eyebrows, 51-59 nose, 60-67 / 68-75 eyes, 76-95 mouth (outer ring
then inner ring), 96-97 pupils.  Coordinates are normalized image
coordinates in [0, 1], origin top-left, y increasing downward.

Every semantic feature is a linear combination of landmark coordinates,
so each one is differentiable with a constant gradient.  Features fall
into three categories:

* absolute-distance  -- encode absolute landmark positions in the image
  (pupil position x/y, eyebrow height, mouth height, chin length); they
  shift under head translation.
* relative-distance  -- distances between landmarks; translation
  invariant.
* relative-anchor-distance -- relate two landmarks to a third anchor
  (eyebrow/chin/mouth shape); also translation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

LANDMARK_COUNT = 98
FEATURE_COUNT = 23

X, Y = 0, 1

ABSOLUTE = "absolute-distance"
RELATIVE = "relative-distance"
ANCHOR = "relative-anchor-distance"


@dataclass(frozen=True)
class FeatureDefinition:
    """One semantic face feature: a named linear form over landmark coords.

    ``terms`` is a tuple of (coefficient, landmark index, axis) triples;
    the feature value is ``sum(c * lm[i, axis] for c, i, axis in terms)``.
    """

    feature_id: int
    name: str
    category: str
    terms: tuple[tuple[float, int, int], ...]

    def expression(self) -> str:
        """Human-readable formula, e.g. ``x64 - x60 + x72 - x68``."""
        parts = []
        for coeff, idx, axis in self.terms:
            var = f"{'xy'[axis]}{idx}"
            if not parts:
                parts.append(var if coeff > 0 else f"-{var}")
            else:
                parts.append(f"{'+' if coeff > 0 else '-'} {var}")
        return " ".join(parts)

    def landmark_indices(self) -> tuple[int, ...]:
        return tuple(sorted({idx for _, idx, _ in self.terms}))


def _d(name, category, plus, minus=()):
    """Build a definition from lists of (index, axis) terms."""
    terms = tuple([(1.0, i, a) for i, a in plus] + [(-1.0, i, a) for i, a in minus])
    return name, category, terms


_CATALOG_ROWS = [
    _d("Eye width", RELATIVE, [(64, X), (72, X)], [(60, X), (68, X)]),
    _d("Eye distance", RELATIVE, [(68, X), (72, X)], [(60, X), (64, X)]),
    _d("Eye openness", RELATIVE, [(66, Y), (74, Y)], [(62, Y), (70, Y)]),
    _d("Pupil position x", ABSOLUTE, [(96, X), (97, X)]),
    _d("Pupil position y", ABSOLUTE, [(96, Y), (97, Y)]),
    _d("Eyebrow height", ABSOLUTE, [(i, Y) for i in range(33, 51)]),
    _d("Eyebrow width", RELATIVE, [(37, X), (46, X)], [(33, X), (42, X)]),
    _d("Eyebrow thickness", RELATIVE,
       [(41, Y), (38, Y), (50, Y), (47, Y)],
       [(34, Y), (37, Y), (42, Y), (45, Y)]),
    _d("Eyebrow shape", ANCHOR,
       [(33, Y), (37, Y), (42, Y), (46, Y)],
       [(35, Y), (35, Y), (44, Y), (44, Y)]),
    _d("Nose width", RELATIVE, [(59, X)], [(55, X)]),
    _d("Nose length", RELATIVE, [(57, Y)], [(51, Y)]),
    _d("Nose pointiness", RELATIVE, [(57, Y)], [(54, Y)]),
    _d("Mouth height", ABSOLUTE, [(i, Y) for i in range(76, 89)]),
    _d("Mouth width", RELATIVE, [(92, X)], [(88, X)]),
    _d("Mouth openness", RELATIVE, [(94, Y)], [(90, Y)]),
    _d("Mouth shape", ANCHOR, [(76, Y), (82, Y)], [(90, Y), (90, Y)]),
    _d("Upper lip thickness", RELATIVE, [(90, Y)], [(79, Y)]),
    _d("Lower lip thickness", RELATIVE, [(85, Y)], [(94, Y)]),
    _d("Chin length", ABSOLUTE, [(16, Y)]),
    _d("Chin width", RELATIVE, [(18, X)], [(14, X)]),
    _d("Chin shape", ANCHOR, [(14, Y), (18, Y)], [(16, Y), (16, Y)]),
    _d("Jaw width", RELATIVE, [(23, X)], [(9, X)]),
    _d("Temple width", RELATIVE, [(32, X)], [(0, X)]),
]

_CATALOG = tuple(
    FeatureDefinition(i, name, category, terms)
    for i, (name, category, terms) in enumerate(_CATALOG_ROWS)
)


def feature_catalog() -> list[FeatureDefinition]:
    """The 23 semantic face feature definitions in stable id order."""
    return list(_CATALOG)


def feature_names() -> list[str]:
    return [f.name for f in _CATALOG]


def feature_definition(feature_id: int) -> FeatureDefinition:
    if not 0 <= feature_id < FEATURE_COUNT:
        raise ValueError(f"feature_id must be in 0..{FEATURE_COUNT - 1}, got {feature_id}")
    return _CATALOG[feature_id]


def feature_weight_matrix(dtype=np.float64) -> np.ndarray:
    """Dense (23, 98, 2) coefficient tensor W with features = sum(W * lm).

    Row f is also the (constant) gradient of feature f with respect to
    every landmark coordinate.
    """
    w = np.zeros((FEATURE_COUNT, LANDMARK_COUNT, 2), dtype=dtype)
    for f in _CATALOG:
        for coeff, idx, axis in f.terms:
            w[f.feature_id, idx, axis] += coeff
    return w


_WEIGHTS = feature_weight_matrix()


@dataclass
class LandmarkSet:
    """98 named 2-D points for one face, in normalized image coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (LANDMARK_COUNT, 2):
            raise ValueError(f"expected ({LANDMARK_COUNT}, 2) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        self.points = pts

    @classmethod
    def from_flat(cls, values, image_size=None) -> "LandmarkSet":
        """Build from a flat x0 y0 ... x97 y97 sequence.

        ``image_size`` = (width, height) converts pixel coordinates to the
        normalized frame.
        """
        flat = np.asarray(list(values), dtype=np.float64)
        if flat.size != 2 * LANDMARK_COUNT:
            raise ValueError(f"expected {2 * LANDMARK_COUNT} values, got {flat.size}")
        pts = flat.reshape(LANDMARK_COUNT, 2)
        if image_size is not None:
            width, height = image_size
            pts = pts / np.array([float(width), float(height)])
        return cls(pts)

    def translated(self, dx: float, dy: float) -> "LandmarkSet":
        return LandmarkSet(self.points + np.array([dx, dy]))


def _as_points(lm) -> np.ndarray:
    if isinstance(lm, LandmarkSet):
        return lm.points
    return np.asarray(lm, dtype=np.float64)


def compute_feature(lm, feature_id: int) -> float:
    """Evaluate one semantic feature on a landmark set."""
    definition = feature_definition(feature_id)
    pts = _as_points(lm)
    return float(sum(coeff * pts[idx, axis] for coeff, idx, axis in definition.terms))


def compute_all_features(lm) -> np.ndarray:
    """Evaluate all 23 features; element i equals compute_feature(lm, i)."""
    pts = _as_points(lm)
    return np.einsum("fpa,pa->f", _WEIGHTS, pts)


def compute_feature_matrix(points: np.ndarray) -> np.ndarray:
    """Batched evaluation: (N, 98, 2) points -> (N, 23) raw features."""
    pts = np.asarray(points, dtype=np.float64)
    return np.einsum("fpa,npa->nf", _WEIGHTS, pts)


def read_landmark_file(path, image_size=None) -> list[LandmarkSet]:
    """Read landmark records, one face per line.

    Each line holds 196 whitespace- or comma-separated floats in WFLW
    ordering (x0 y0 ... x97 y97).  ``image_size`` = (width, height)
    converts pixel coordinates to the normalized frame.
    """
    sets = []
    text = Path(path).read_text()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        try:
            values = [float(v) for v in fields]
        except ValueError as exc:
            raise ValueError(f"{path}:{line_no}: non-numeric landmark field") from exc
        if len(values) != 2 * LANDMARK_COUNT:
            raise ValueError(
                f"{path}:{line_no}: expected {2 * LANDMARK_COUNT} values, got {len(values)}"
            )
        sets.append(LandmarkSet.from_flat(values, image_size=image_size))
    return sets
