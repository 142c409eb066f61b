"""Clamped B-spline bases, control polygons and partial monotonicity checks.

Indices in this module are 0-based internally; ``first_constrained_index``
returns the 1-based coefficient index because that is how constraint chains
are usually written (``beta_4 >= beta_5 >= ... >= beta_9``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SplineDomainError(ValueError):
    """Raised when an evaluation point falls outside ``[L, U]``."""


@dataclass(frozen=True, eq=False)
class SplineSpec:
    """Clamped knot vector of order ``k`` on ``[L, U]``.

    Attributes
    ----------
    k : int
        Order (degree ``k - 1``).
    M : int
        Basis dimension, ``k + len(interior)``.
    knots : ndarray
        Full clamped knot sequence of length ``M + k``.
    L, U : float
        Domain endpoints.
    L0 : float
        Left end of the sub-interval on which monotonicity is imposed.
    """

    k: int
    M: int
    knots: np.ndarray = field(repr=False)
    L: float
    U: float
    L0: float

    @property
    def degree(self) -> int:
        return self.k - 1

    @property
    def interior(self) -> np.ndarray:
        return self.knots[self.k:self.M]

    def to_dict(self) -> dict:
        return {"L": self.L, "U": self.U, "k": self.k,
                "interior_knots": [float(v) for v in self.interior], "L0": self.L0}

    def _key(self):
        return (self.k, self.L, self.U, self.L0, tuple(self.knots.tolist()))

    def __eq__(self, other):
        return isinstance(other, SplineSpec) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class ControlPolygon:
    abscissae: np.ndarray
    ordinates: np.ndarray

    @property
    def vertices(self) -> list[tuple[float, float]]:
        return list(zip(self.abscissae.tolist(), self.ordinates.tolist()))

    def __call__(self, s):
        return np.interp(s, self.abscissae, self.ordinates)


def make_spec(L: float, U: float, k: int, interior_knots, L0: float) -> SplineSpec:
    """Build a clamped spline space.

    >>> make_spec(1, 15, 4, [2, 3, 4, 7, 11], 3).knots.tolist()
    [1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 7.0, 11.0, 15.0, 15.0, 15.0, 15.0]
    """
    L, U, L0 = float(L), float(U), float(L0)
    k = int(k)
    interior = np.asarray(list(interior_knots), dtype=float)
    if k < 2:
        raise ValueError(f"spline order must be >= 2, got {k}")
    if not L < U:
        raise ValueError(f"need L < U, got L={L}, U={U}")
    if not L <= L0 <= U:
        raise ValueError(f"L0={L0} must lie in [{L}, {U}]")
    if interior.ndim != 1:
        raise ValueError("interior knots must be a flat sequence")
    if interior.size and np.any(np.diff(interior) <= 0):
        raise ValueError("interior knots must be strictly increasing")
    if interior.size and (interior[0] <= L or interior[-1] >= U):
        raise ValueError("interior knots must lie strictly inside (L, U)")
    knots = np.concatenate([np.full(k, L), interior, np.full(k, U)])
    knots.setflags(write=False)
    return SplineSpec(k=k, M=k + interior.size, knots=knots, L=L, U=U, L0=L0)


def default_spec(L0: float = 3.0) -> SplineSpec:
    """Cubic space on [1, 15] with interior knots 2, 3, 4, 7, 11 (M = 9)."""
    return make_spec(1.0, 15.0, 4, [2.0, 3.0, 4.0, 7.0, 11.0], L0)


def _check_domain(spec: SplineSpec, s: np.ndarray) -> None:
    if np.any(~np.isfinite(s)) or np.any(s < spec.L) or np.any(s > spec.U):
        raise SplineDomainError(f"evaluation point outside [{spec.L}, {spec.U}]")


def _spans(spec: SplineSpec, s: np.ndarray) -> np.ndarray:
    # index i with t[i] <= s < t[i+1]; s == U falls back to the last non-empty span
    t = spec.knots
    idx = np.searchsorted(t, s, side="right") - 1
    return np.clip(idx, spec.k - 1, spec.M - 1)


def _nonzero_basis(t: np.ndarray, span: np.ndarray, s: np.ndarray, p: int) -> np.ndarray:
    """Degree-``p`` basis values at ``s`` for functions ``span - p .. span``.

    Triangular Cox-de Boor scheme, vectorised over points; returns (n, p + 1).
    """
    n = s.shape[0]
    out = np.zeros((n, p + 1))
    out[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = s - t[span + 1 - j]
        right[:, j] = t[span + j] - s
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            with np.errstate(divide="ignore", invalid="ignore"):
                temp = np.where(denom != 0.0, out[:, r] / denom, 0.0)
            out[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        out[:, j] = saved
    return out


def basis_matrix(spec: SplineSpec, s) -> np.ndarray:
    """Evaluate all ``M`` basis functions at each point of ``s``; shape (n, M)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    _check_domain(spec, s)
    p = spec.degree
    span = _spans(spec, s)
    vals = _nonzero_basis(spec.knots, span, s, p)
    out = np.zeros((s.size, spec.M))
    rows = np.arange(s.size)[:, None]
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    out[rows, cols] = vals
    return out


def basis_all(spec: SplineSpec, s: float) -> np.ndarray:
    return basis_matrix(spec, [s])[0]


def _check_coeffs(spec: SplineSpec, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape[-1] != spec.M:
        raise ValueError(f"expected {spec.M} coefficients, got {c.shape[-1]}")
    return c


def spline_eval(spec: SplineSpec, coeffs, s):
    """Spline value(s); ``coeffs`` may carry leading batch dimensions."""
    c = _check_coeffs(spec, coeffs)
    scalar = np.ndim(s) == 0
    B = basis_matrix(spec, s)
    out = c @ B.T
    return out[..., 0] if scalar else out


def derivative_matrix(spec: SplineSpec, s) -> np.ndarray:
    """Matrix ``D`` with ``f'(s) = D @ coeffs``; shape (n, M).

    Uses the order ``k - 1`` basis on the same knots, right-sided at knots and
    left-sided at ``U``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    _check_domain(spec, s)
    t, p, M = spec.knots, spec.degree, spec.M
    span = _spans(spec, s)
    low = _nonzero_basis(t, span, s, p - 1)  # functions span-p+1 .. span
    D = np.zeros((s.size, M))
    for r in range(p):
        j = span - p + 1 + r  # lower-order function index, 1..M-1 where non-zero
        denom = t[j + p] - t[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(denom > 0, p * low[:, r] / denom, 0.0)
        ok = (j >= 1) & (j <= M - 1)
        rows = np.nonzero(ok)[0]
        D[rows, j[ok]] += w[ok]
        D[rows, j[ok] - 1] -= w[ok]
    return D


def spline_derivative(spec: SplineSpec, coeffs, s):
    c = _check_coeffs(spec, coeffs)
    scalar = np.ndim(s) == 0
    out = c @ derivative_matrix(spec, s).T
    return out[..., 0] if scalar else out


def knot_averages(spec: SplineSpec) -> np.ndarray:
    t, k = spec.knots, spec.k
    return np.array([t[m + 1:m + k].mean() for m in range(spec.M)])


def control_polygon(spec: SplineSpec, coeffs) -> ControlPolygon:
    c = _check_coeffs(spec, coeffs)
    if c.ndim != 1:
        raise ValueError("control_polygon takes a single coefficient vector")
    return ControlPolygon(knot_averages(spec), c.copy())


def first_constrained_index(spec: SplineSpec) -> int:
    """1-based index of the first coefficient in the non-increasing chain.

    ``m_L0`` is the (1-based) position of the smallest knot strictly greater
    than ``L0``, or ``M + 1`` when ``L0`` lies in ``(t_M, U]``. Coefficients
    ``1 .. m_L0 - k`` are free, the rest satisfy ``beta_m <= beta_{m-1}``.
    """
    t, M, k = spec.knots, spec.M, spec.k
    if spec.L0 > t[M - 1]:
        m_l0 = M + 1
    else:
        m_l0 = int(np.searchsorted(t, spec.L0, side="right")) + 1
    return m_l0 - k + 1


def is_nonincreasing_on(spec: SplineSpec, coeffs, first: int | None = None) -> bool:
    """True iff ``beta_m <= beta_{m-1}`` for every ``m`` from ``first`` to ``M``.

    ``first`` defaults to ``first_constrained_index(spec)``.
    """
    c = _check_coeffs(spec, coeffs)
    first = first_constrained_index(spec) if first is None else int(first)
    start = max(first, 2) - 1  # 0-based position of the first constrained coefficient
    if start >= spec.M:
        return True
    return bool(np.all(np.diff(c[..., start - 1:], axis=-1) <= 0.0))
