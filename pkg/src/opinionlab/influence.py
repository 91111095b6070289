"""Influence functions phi_0 on [0, 1] and the integrals the stability analysis needs.

A shape is a finite list of polynomial pieces.  Pieces are half-open
``[lo, hi)`` except the last one, which also contains ``s = 1``.  Outside
``[0, 1]`` every shape is exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

__all__ = [
    "InfluenceShape",
    "ScaledInfluence",
    "eval_shape",
    "builtin_shapes",
    "get_shape",
    "load_table_shape",
    "shape_integral",
    "second_moment",
]

# below this |q| the integration-by-parts formula loses digits to cancellation
_SERIES_SWITCH = 2.0
_SERIES_TERMS = 40


@dataclass(frozen=True)
class InfluenceShape:
    """Normalized influence function phi_0 as piecewise polynomials in s.

    ``pieces`` holds ``(lo, hi, coeffs)`` with ``coeffs`` in ascending powers
    of ``s`` (not of ``s - lo``).
    """

    name: str
    pieces: tuple[tuple[float, float, tuple[float, ...]], ...]

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("shape needs at least one piece")
        if self.pieces[0][0] != 0.0 or self.pieces[-1][1] != 1.0:
            raise ValueError("pieces must cover [0, 1]")
        for (lo, hi, coeffs), nxt in zip(self.pieces, self.pieces[1:] + (None,)):
            if not hi > lo:
                raise ValueError(f"empty piece [{lo}, {hi})")
            if nxt is not None and nxt[0] != hi:
                raise ValueError(f"pieces not contiguous at s={hi}")
            if len(coeffs) == 0:
                raise ValueError("piece without coefficients")

    def __call__(self, s):
        return eval_shape(self, s)

    def scaled(self, factor: float) -> "InfluenceShape":
        pieces = tuple((lo, hi, tuple(factor * c for c in co)) for lo, hi, co in self.pieces)
        return InfluenceShape(f"{factor}*{self.name}", pieces)

    @property
    def value_at_zero(self) -> float:
        return float(eval_shape(self, 0.0))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints ``(n+1,)`` and zero-padded coefficients ``(n, deg+1)``.

        This is the layout the compiled simulation kernels consume.
        """
        deg = max(len(co) for _, _, co in self.pieces)
        breaks = np.array([p[0] for p in self.pieces] + [1.0])
        coeffs = np.zeros((len(self.pieces), deg))
        for i, (_, _, co) in enumerate(self.pieces):
            coeffs[i, : len(co)] = co
        return breaks, coeffs


@dataclass(frozen=True)
class ScaledInfluence:
    """phi(r) = phi_0(r / radius), supported on [0, radius]."""

    shape: InfluenceShape
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def __call__(self, r):
        return eval_shape(self.shape, np.abs(r) / self.radius)


def _poly(coeffs, s):
    out = np.zeros_like(s) + coeffs[-1]
    for c in coeffs[-2::-1]:
        out = out * s + c
    return out


def eval_shape(shape: InfluenceShape, s):
    """phi_0(s); scalar in, scalar out, array in, array out."""
    arr = np.asarray(s, dtype=float)
    out = np.zeros_like(arr)
    last = len(shape.pieces) - 1
    for i, (lo, hi, coeffs) in enumerate(shape.pieces):
        mask = (arr >= lo) & ((arr <= hi) if i == last else (arr < hi))
        if np.any(mask):
            out[mask] = _poly(coeffs, arr[mask])
    # expanded powers like (1 - s)^6 cancel to -1e-15 near their roots
    np.maximum(out, 0.0, out=out)
    if np.ndim(s) == 0:
        return float(out)
    return out


def _constant(name, *steps):
    """Piecewise-constant shape from ``(lo, hi, value)`` triples."""
    return InfluenceShape(name, tuple((lo, hi, (float(v),)) for lo, hi, v in steps))


def _binomial_power(name, n):
    # (1 - s)^n in ascending monomials
    coeffs = tuple(float(math.comb(n, j) * (-1) ** j) for j in range(n + 1))
    return InfluenceShape(name, ((0.0, 1.0, coeffs),))


@lru_cache(maxsize=None)
def builtin_shapes() -> dict[str, InfluenceShape]:
    """The six test shapes phi1 .. phi6."""
    b = 1.0 / math.sqrt(2.0)
    return {
        "phi1": _constant("phi1", (0.0, b, 1.0), (b, 1.0, 0.1)),
        "phi2": _constant("phi2", (0.0, 1.0, 1.0)),
        "phi3": _constant("phi3", (0.0, b, 0.5), (b, 1.0, 1.0)),
        "phi4": _constant("phi4", (0.0, b, 0.1), (b, 1.0, 1.0)),
        "phi5": _binomial_power("phi5", 3),
        "phi6": _binomial_power("phi6", 6),
    }


def load_table_shape(path) -> InfluenceShape:
    """Piecewise-constant shape from a two-column ``s phi_0(s)`` text file.

    The value at ``s_i`` holds on ``[s_i, s_{i+1})``; the last value holds up
    to ``s = 1``.
    """
    path = Path(path)
    data = np.loadtxt(path, ndmin=2, delimiter=None if path.suffix != ".csv" else ",")
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, got {data.shape[1]}")
    s, v = data[:, 0], data[:, 1]
    if s[0] != 0.0 or s[-1] > 1.0 or np.any(np.diff(s) <= 0):
        raise ValueError(f"{path}: s must start at 0 and increase strictly within [0, 1]")
    if np.any(v < 0):
        raise ValueError(f"{path}: negative influence values")
    edges = np.append(s, 1.0) if s[-1] < 1.0 else s.copy()
    values = v if s[-1] < 1.0 else v[:-1]
    if len(values) == 0:
        raise ValueError(f"{path}: need at least one interval")
    steps = [(float(edges[i]), float(edges[i + 1]), float(values[i])) for i in range(len(values))]
    return _constant(f"table:{path}", *steps)


def get_shape(name: str) -> InfluenceShape:
    """Resolve ``"phi1"`` .. ``"phi6"`` or ``"table:<path>"``."""
    if name.startswith("table:"):
        return load_table_shape(name[len("table:"):])
    shapes = builtin_shapes()
    if name not in shapes:
        raise KeyError(f"unknown influence shape {name!r}; expected one of {sorted(shapes)} or table:<path>")
    return shapes[name]


def _derivatives(coeffs):
    """All derivatives of a polynomial, each in ascending coefficients."""
    out = [np.asarray(coeffs, dtype=float)]
    while len(out[-1]) > 1:
        c = out[-1]
        out.append(c[1:] * np.arange(1, len(c)))
    return out


def _piece_sin_integral(coeffs, lo, hi, q):
    """int_lo^hi p(s) sin(q s) ds for a polynomial p."""
    if abs(q) < _SERIES_SWITCH:
        # sin(qs) = sum_j (-1)^j (qs)^(2j+1) / (2j+1)!
        total = 0.0
        for m, c in enumerate(coeffs):
            if c == 0.0:
                continue
            acc = 0.0
            term = q  # q^(2j+1) / (2j+1)!
            for j in range(_SERIES_TERMS):
                p = m + 2 * j + 2
                acc += term * (hi**p - lo**p) / p
                term *= -q * q / ((2 * j + 2) * (2 * j + 3))
            total += c * acc
        return total
    # repeated integration by parts:
    # F(s) = -cos(qs) sum_j (-1)^j P^(2j)/q^(2j+1) + sin(qs) sum_j (-1)^j P^(2j+1)/q^(2j+2)
    derivs = _derivatives(coeffs)

    def antiderivative(s):
        cos_part = 0.0
        sin_part = 0.0
        for n, d in enumerate(derivs):
            val = float(_poly(d, np.float64(s)))
            sign = -1.0 if (n // 2) % 2 else 1.0
            if n % 2 == 0:
                cos_part += sign * val / q ** (n + 1)
            else:
                sin_part += sign * val / q ** (n + 1)
        return -math.cos(q * s) * cos_part + math.sin(q * s) * sin_part

    return antiderivative(hi) - antiderivative(lo)


def shape_integral(shape: InfluenceShape, q: float) -> float:
    """I(q) = int_0^1 phi_0(s) s sin(q s) ds, exact per polynomial piece."""
    q = float(q)
    if q == 0.0:
        return 0.0
    total = 0.0
    for lo, hi, coeffs in shape.pieces:
        shifted = (0.0,) + tuple(coeffs)  # multiply by s
        total += _piece_sin_integral(shifted, lo, hi, q)
    return total


def second_moment(shape: InfluenceShape) -> float:
    """int_0^1 s^2 phi_0(s) ds."""
    total = 0.0
    for lo, hi, coeffs in shape.pieces:
        for m, c in enumerate(coeffs):
            total += c * (hi ** (m + 3) - lo ** (m + 3)) / (m + 3)
    return total
