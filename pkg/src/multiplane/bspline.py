"""Uniform B-spline basis on a fixed grid, via the Cox-de Boor recursion.

The grid spans [domain_lo, domain_hi] with `grid_size` intervals and is
extended by `degree` uniformly spaced knots on each side, giving
grid_size + degree basis functions. Inputs are clamped to the domain
before evaluation, so the basis (and the partition of unity on the
interior) is defined for every finite input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SplineGrid:
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    grid_size: int = 8
    degree: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.grid_size < 1 or self.degree < 1:
            raise ValueError("grid_size and degree must be positive")
        if not self.domain_lo < self.domain_hi:
            raise ValueError("domain_lo must be below domain_hi")
        h = (self.domain_hi - self.domain_lo) / self.grid_size
        knots = self.domain_lo + h * np.arange(
            -self.degree, self.grid_size + self.degree + 1, dtype=np.float64
        )
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.degree


def _order0(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    t = grid.knots
    b0 = ((x[..., None] >= t[:-1]) & (x[..., None] < t[1:])).astype(np.float64)
    # The last interior interval is closed on the right so x == domain_hi
    # still lands in exactly one interval.
    at_hi = x == grid.domain_hi
    if np.any(at_hi):
        b0[at_hi, :] = 0.0
        b0[at_hi, grid.degree + grid.grid_size - 1] = 1.0
    return b0


def _raise_order(x: np.ndarray, b: np.ndarray, k: int, t: np.ndarray) -> np.ndarray:
    # Uniform knots: denominators t[i+k]-t[i] are never zero.
    left = (x[..., None] - t[: -(k + 1)]) / (t[k:-1] - t[: -(k + 1)]) * b[..., :-1]
    right = (t[k + 1 :] - x[..., None]) / (t[k + 1 :] - t[1:-k]) * b[..., 1:]
    return left + right


def basis_matrix(x: np.ndarray, grid: SplineGrid) -> np.ndarray:
    """B-spline basis values at each point of x; shape x.shape + (n_basis,)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("bspline basis: non-finite input")
    xc = np.clip(x, grid.domain_lo, grid.domain_hi)
    b = _order0(xc, grid)
    for k in range(1, grid.degree + 1):
        b = _raise_order(xc, b, k, grid.knots)
    return b


def basis_and_derivative(x: np.ndarray, grid: SplineGrid) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and d/dx of each basis function at x.

    The derivative with respect to the raw (unclamped) input is zero
    strictly outside the domain.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("bspline basis: non-finite input")
    xc = np.clip(x, grid.domain_lo, grid.domain_hi)
    t = grid.knots
    b = _order0(xc, grid)
    for k in range(1, grid.degree):
        b = _raise_order(xc, b, k, t)
    k = grid.degree
    # d/dx B_{i,k} = k * (B_{i,k-1}/(t[i+k]-t[i]) - B_{i+1,k-1}/(t[i+k+1]-t[i+1]))
    deriv = k * (
        b[..., :-1] / (t[k:-1] - t[: -(k + 1)]) - b[..., 1:] / (t[k + 1 :] - t[1:-k])
    )
    values = _raise_order(xc, b, k, t)
    inside = (x >= grid.domain_lo) & (x <= grid.domain_hi)
    deriv = deriv * inside[..., None]
    return values, deriv


def bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """Basis vector (length grid_size + degree) at a single scalar input."""
    return basis_matrix(np.asarray(float(x)), grid)
