"""Unit-cube designs: Monte Carlo, Latin hypercube and Sobol' sequences.

All random generators draw from Philox, a counter-based bit generator, keyed
through :func:`make_rng`.  Given the same seed (and stream tags) the output
is identical regardless of platform or of how work is split across threads.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ._joekuo import DIRECTION_NUMBERS
from .core import InputError

_BITS = 32
MAX_SOBOL_DIM = len(DIRECTION_NUMBERS) + 1
_ONE_MINUS = np.nextafter(1.0, 0.0)


class Generator(str, Enum):
    MC = "mc"
    LHS = "lhs"
    SOBOL = "sobol"


@dataclass(frozen=True)
class UnitDesign:
    points: np.ndarray
    generator: Generator
    seed: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise InputError("design points must be a 2-D array")
        if pts.size and (pts.min() < 0.0 or pts.max() >= 1.0):
            raise InputError("unit design entries must lie in [0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and optional integer stream tags."""
    key = [int(seed) % 2**64] + [int(s) % 2**64 for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _check_nd(n: int, d: int, min_n: int = 0) -> None:
    if int(n) != n or n < min_n:
        raise InputError(f"sample size must be an integer >= {min_n}, got {n}")
    if int(d) != d or d < 1:
        raise InputError(f"dimension must be a positive integer, got {d}")


def mc_sample(n: int, d: int, seed: int) -> UnitDesign:
    _check_nd(n, d)
    pts = make_rng(seed).random((int(n), int(d)))
    return UnitDesign(pts, Generator.MC, seed)


def lhs_sample(n: int, d: int, seed: int) -> UnitDesign:
    """Latin hypercube: one point per stratum ``[k/n, (k+1)/n)`` in every column."""
    _check_nd(n, d, min_n=1)
    n, d = int(n), int(d)
    rng = make_rng(seed)
    pts = np.empty((n, d))
    for j in range(d):
        pts[:, j] = (rng.permutation(n) + rng.random(n)) / n
    np.minimum(pts, _ONE_MINUS, out=pts)
    return UnitDesign(pts, Generator.LHS, seed)


def _direction_integers(d: int) -> np.ndarray:
    """``V[j, k]``: k-th direction integer of dimension j, scaled to 32 bits."""
    V = np.zeros((d, _BITS), dtype=np.uint64)
    V[0] = [1 << (_BITS - 1 - k) for k in range(_BITS)]
    for j in range(1, d):
        s, a, m = DIRECTION_NUMBERS[j - 1]
        v = [0] * _BITS
        for k in range(min(s, _BITS)):
            v[k] = m[k] << (_BITS - 1 - k)
        for k in range(s, _BITS):
            x = v[k - s] ^ (v[k - s] >> s)
            for b in range(1, s):
                if (a >> (s - 1 - b)) & 1:
                    x ^= v[k - b]
            v[k] = x
        V[j] = v
    return V


def sobol_sequence(n: int, d: int) -> UnitDesign:
    """First ``n`` points of the Sobol' sequence in Gray-code order.

    The all-zero origin is skipped, so the first point is ``(0.5, ..., 0.5)``.
    Conventions that keep the origin are shifted by one against this one.
    """
    _check_nd(n, d)
    n, d = int(n), int(d)
    if d > MAX_SOBOL_DIM:
        raise InputError(f"Sobol' sequence supports at most {MAX_SOBOL_DIM} dimensions, got {d}")
    if n >= 2**_BITS:
        raise InputError("too many Sobol' points requested")
    V = _direction_integers(d)
    idx = np.arange(1, n + 1, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    X = np.zeros((n, d), dtype=np.uint64)
    for k in range(_BITS):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        if not bit.any():
            break
        X[bit] ^= V[:, k]
    return UnitDesign(X.astype(float) / 2.0**_BITS, Generator.SOBOL, None)


def sample(generator: str | Generator, n: int, d: int, seed: int = 0) -> UnitDesign:
    gen = Generator(generator)
    if gen is Generator.MC:
        return mc_sample(n, d, seed)
    if gen is Generator.LHS:
        return lhs_sample(n, d, seed)
    return sobol_sequence(n, d)


def l2_star_discrepancy(design) -> float:
    """L2-star discrepancy via Warnock's closed form.

    ``D^2 = 3^-d - 2^(1-d)/N sum_i prod_k (1 - x_ik^2)
    + 1/N^2 sum_ij prod_k (1 - max(x_ik, x_jk))``
    """
    X = design.points if isinstance(design, UnitDesign) else np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError("discrepancy needs at least one point")
    N, d = X.shape
    term1 = 3.0 ** (-d)
    term2 = 2.0 ** (1 - d) / N * np.prod(1.0 - X**2, axis=1).sum()
    cross = 0.0
    chunk = max(1, 2_000_000 // max(N * d, 1))
    for start in range(0, N, chunk):
        block = X[start:start + chunk]
        cross += np.prod(1.0 - np.maximum(block[:, None, :], X[None, :, :]), axis=2).sum()
    d2 = term1 - term2 + cross / N**2
    return float(np.sqrt(max(d2, 0.0)))


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def design_to_csv(points, names: Optional[Sequence[str]] = None) -> str:
    """CSV text with a header row and full-precision values."""
    pts = points.points if isinstance(points, UnitDesign) else np.asarray(points, dtype=float)
    if names is None:
        names = [f"x{j + 1}" for j in range(pts.shape[1])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in pts:
        w.writerow([format_float(v) for v in row])
    return buf.getvalue()


def design_from_csv(text: str):
    """Parse CSV written by :func:`design_to_csv`; returns ``(names, points)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError("design CSV is empty")
    names = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    try:
        pts = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"malformed number in design CSV: {exc}") from None
    if pts.size == 0:
        pts = np.empty((0, len(names)))
    if pts.shape[1] != len(names):
        raise InputError("design CSV rows do not match header width")
    return names, pts
