"""Constellations: generation, normalization, moments and file I/O.

A constellation is an ordered list of M symbols, each with N complex
dimensions (N=1 throughout this project; dual-polarization figures are
reported as twice the per-polarization value).  Point order is the label
order used by the training one-hot indices.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstellationFormatError

FORMAT_VERSION = 1

#: QAM orders accepted by new_qam (square grids only).
SUPPORTED_QAM_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class Moments:
    """Standardized absolute moments of a constellation.

    mu2 is the mean symbol power; mu4 and mu6 are normalized so that a
    circular complex Gaussian gives (mu4, mu6) = (2, 6) regardless of scale.
    """

    mu2: float
    mu4: float
    mu6: float


@dataclass(frozen=True)
class Constellation:
    """Ordered set of modulation symbols.

    points has shape (M,) complex for n_complex_dims == 1, else (M, N).
    """

    points: np.ndarray
    n_complex_dims: int = 1
    normalized: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        if pts.ndim == 1:
            pts = pts if self.n_complex_dims == 1 else pts.reshape(-1, self.n_complex_dims)
        object.__setattr__(self, "points", pts)
        if self.order < 2:
            raise ValueError(f"constellation needs at least 2 points, got {self.order}")
        if not np.all(np.isfinite(pts.view(float))):
            raise ValueError("constellation points must be finite")

    @property
    def order(self) -> int:
        return self.points.shape[0]

    def symbol_power(self) -> np.ndarray:
        """Per-symbol power |x|^2, summed over complex dimensions."""
        p = np.abs(self.points) ** 2
        return p if self.points.ndim == 1 else p.sum(axis=1)

    def min_distance(self) -> float:
        """Minimum pairwise Euclidean distance between symbols."""
        pts = self.points.reshape(self.order, -1)
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = np.sum(np.abs(diff) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(d2.min()))


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def new_qam(m: int) -> Constellation:
    """Square QAM grid at unit average power, Gray-coded label order.

    The label of the grid point at (row r, column c), with r, c indexing the
    amplitude levels in ascending order, is (gray(r) << b) | gray(c) where
    b = log2(sqrt(M)) and gray(n) = n ^ (n >> 1).  Only the orders in
    SUPPORTED_QAM_ORDERS are accepted.
    """
    if m not in SUPPORTED_QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {m}; expected one of {SUPPORTED_QAM_ORDERS}")
    side = int(round(np.sqrt(m)))
    bits = side.bit_length() - 1
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    pts = np.zeros(m, dtype=complex)
    for r in range(side):
        for c in range(side):
            label = (_gray(r) << bits) | _gray(c)
            pts[label] = levels[r] + 1j * levels[c]
    c = Constellation(pts, metadata={"family": "qam", "order": m})
    return normalize_unit_power(c)


def new_gaussian(m: int, seed: int = 0) -> Constellation:
    """M points drawn i.i.d. from a circular complex Gaussian, unit power.

    Used as a high-moment member of the NLIN calibration set; its (mu4, mu6)
    sit near the Gaussian reference (2, 6), far from any QAM grid.
    """
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=m) + 1j * rng.normal(size=m)
    c = Constellation(pts, metadata={"family": "gaussian", "seed": seed})
    return normalize_unit_power(c)


def moments(c: Constellation, probabilities=None) -> Moments:
    """Compute (mu2, mu4, mu6) under uniform or supplied point weights."""
    p = c.symbol_power()
    if probabilities is None:
        w = np.full(c.order, 1.0 / c.order)
    else:
        w = np.asarray(probabilities, dtype=float)
        if w.shape != (c.order,):
            raise ValueError(f"expected {c.order} weights, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {w.sum():.12g})")
    mu2 = float(w @ p)
    if mu2 == 0.0:
        raise ValueError("degenerate constellation: zero mean power")
    mu4 = float(w @ p**2) / mu2**2
    mu6 = float(w @ p**3) / mu2**3
    return Moments(mu2=mu2, mu4=mu4, mu6=mu6)


def normalize_unit_power(c: Constellation) -> Constellation:
    """Scale all points by one positive constant so mean power is 1."""
    mu2 = float(np.mean(c.symbol_power()))
    if mu2 == 0.0:
        raise ValueError("cannot normalize an all-zero constellation")
    return Constellation(
        c.points / np.sqrt(mu2),
        n_complex_dims=c.n_complex_dims,
        normalized=True,
        metadata=dict(c.metadata),
    )


def save(c: Constellation, path) -> None:
    """Write a constellation JSON file (see load for the schema)."""
    pts = c.points.reshape(c.order, -1)
    rows = [[v for z in row for v in (z.real, z.imag)] for row in pts]
    doc = {
        "format_version": FORMAT_VERSION,
        "M": c.order,
        "n_complex_dims": c.n_complex_dims,
        "points": rows,
        "metadata": dict(c.metadata),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load(path) -> Constellation:
    """Read a constellation JSON file.

    Schema: {"format_version": 1, "M": int, "n_complex_dims": int,
    "points": [[re, im, ...], ...], "metadata": {...}}.  Each points row
    holds 2N floats (re/im interleaved) and rows are in label order.
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConstellationFormatError(f"{path}: not valid JSON ({e})") from e
    for key in ("format_version", "M", "n_complex_dims", "points"):
        if key not in doc:
            raise ConstellationFormatError(f"{path}: missing field '{key}'")
    if doc["format_version"] != FORMAT_VERSION:
        raise ConstellationFormatError(
            f"{path}: field 'format_version' is {doc['format_version']}, expected {FORMAT_VERSION}"
        )
    m, n = doc["M"], doc["n_complex_dims"]
    rows = doc["points"]
    if not isinstance(rows, list) or len(rows) != m:
        raise ConstellationFormatError(
            f"{path}: field 'points' has {len(rows)} rows, header says M={m}"
        )
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 * n:
        raise ConstellationFormatError(
            f"{path}: field 'points' rows must hold {2 * n} floats for n_complex_dims={n}"
        )
    if not np.all(np.isfinite(arr)):
        raise ConstellationFormatError(f"{path}: field 'points' contains non-finite values")
    pts = arr[:, 0::2] + 1j * arr[:, 1::2]
    if n == 1:
        pts = pts[:, 0]
    return Constellation(
        pts,
        n_complex_dims=n,
        normalized=bool(doc.get("metadata", {}).get("normalized", False)),
        metadata=doc.get("metadata", {}) or {},
    )


def export_csv(c: Constellation, path) -> None:
    """Write one 're,im' row per point (plotting interface)."""
    pts = c.points.reshape(c.order, -1)
    with open(path, "w", encoding="utf-8") as f:
        header = ",".join(f"re{d},im{d}" for d in range(c.n_complex_dims))
        f.write(header + "\n")
        for row in pts:
            f.write(",".join(f"{z.real:.17g},{z.imag:.17g}" for z in row) + "\n")
