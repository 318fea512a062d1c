"""Periodic 1-D lattice: step-function fields, discrete difference operators,
and the biased nearest-neighbour transport operator.

The unit interval is split into ``n`` sites; site ``j`` (0-based) covers
``(j/n, (j+1)/n]`` and all indexing wraps around modulo ``n``.  User-facing
output elsewhere in the package reports sites 1-based; internally everything
is 0-based.

Operators are available both as matrix-free stencils (hot path) and as dense
matrices (brute-force test path).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "MIN_SITES",
    "LatticeField",
    "TransportCoefficients",
    "project",
    "grad_centered",
    "grad_plus",
    "grad_minus",
    "laplace",
    "transport_apply",
    "transition_probability",
    "inner",
    "grad_matrix",
    "grad_plus_matrix",
    "grad_minus_matrix",
    "laplace_matrix",
    "transport_matrix",
    "transition_matrix",
]

# Centered stencils need two distinct neighbours per site.
MIN_SITES = 3


@dataclass(frozen=True)
class LatticeField:
    """A real step function on the periodic lattice: one value per site.

    Treat instances as immutable; operators return new fields.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError(f"lattice field must be 1-D, got shape {v.shape}")
        if v.shape[0] < MIN_SITES:
            raise ValueError(
                f"lattice needs at least {MIN_SITES} sites, got {v.shape[0]}"
            )
        object.__setattr__(self, "values", v)

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    def site(self, j: int) -> float:
        """Value at site ``j`` with periodic wraparound."""
        return float(self.values[j % self.n_sites])

    def shifted(self, k: int) -> "LatticeField":
        """Cyclic shift by ``k`` sites: result[j] = self[j - k]."""
        return LatticeField(np.roll(self.values, k))

    def __len__(self) -> int:
        return self.n_sites


@dataclass(frozen=True)
class TransportCoefficients:
    """Bacterial hop rate and direction bias on an ``n_sites`` lattice.

    ``nu`` (advection velocity) and ``diffusion`` are always derived from
    ``(ell, p_out, n_sites)``; they cannot be set independently.
    """

    ell: float
    p_out: float
    n_sites: int

    def __post_init__(self):
        if not np.isfinite(self.ell) or self.ell < 0:
            raise ValueError(f"transport rate ell must be finite and >= 0, got {self.ell}")
        if not 0.0 <= self.p_out <= 1.0:
            raise ValueError(f"p_out must lie in [0, 1], got {self.p_out}")
        if self.n_sites < MIN_SITES:
            raise ValueError(f"lattice needs at least {MIN_SITES} sites, got {self.n_sites}")

    @property
    def p_in(self) -> float:
        return 1.0 - self.p_out

    @property
    def bias(self) -> float:
        """Net downstream bias in [-1, 1]."""
        return 2.0 * self.p_out - 1.0

    @property
    def nu(self) -> float:
        """Advection velocity of the continuum limit."""
        return self.bias * self.ell / self.n_sites

    @property
    def diffusion(self) -> float:
        """Diffusion coefficient of the continuum limit."""
        return self.ell / (2.0 * self.n_sites**2)

    @classmethod
    def from_continuum(cls, diffusion: float, nu: float, n_sites: int) -> "TransportCoefficients":
        """Build the lattice transport whose continuum limit is (diffusion, nu).

        Inverts nu = bias*ell/n and diffusion = ell/(2 n^2).  Raises if the
        requested advection exceeds what a probability bias can produce at
        this resolution (|bias| must not exceed 1).
        """
        if diffusion < 0 or not np.isfinite(diffusion):
            raise ValueError(f"diffusion must be finite and >= 0, got {diffusion}")
        if diffusion == 0.0:
            if nu != 0.0:
                raise ValueError("nu must be 0 when diffusion is 0 (bias is bounded by 1)")
            return cls(ell=0.0, p_out=0.5, n_sites=n_sites)
        ell = 2.0 * diffusion * n_sites**2
        bias = nu * n_sites / ell
        if abs(bias) > 1.0:
            raise ValueError(
                f"advection {nu} not representable at n={n_sites} with diffusion {diffusion}"
            )
        return cls(ell=ell, p_out=0.5 * (1.0 + bias), n_sites=n_sites)


def project(f: Callable, n_sites: int, quadrature_points: int = 16) -> LatticeField:
    """Project a 1-periodic function onto the lattice by per-site averaging.

    Site j receives ``n * integral of f over (j/n, (j+1)/n]``, approximated
    by the composite midpoint rule with ``quadrature_points`` sub-points per
    site.  Exact for functions that are constant on each site.

    Args:
        f: 1-periodic function of x in [0, 1]; may be vectorized or scalar.
        n_sites: lattice resolution.
        quadrature_points: midpoint sub-points per site (>= 1).

    Returns:
        The projected LatticeField.

    Raises:
        ValueError: on non-finite function values or bad arguments.
    """
    if n_sites < MIN_SITES:
        raise ValueError(f"lattice needs at least {MIN_SITES} sites, got {n_sites}")
    q = int(quadrature_points)
    if q < 1:
        raise ValueError(f"quadrature_points must be >= 1, got {quadrature_points}")
    # Midpoints of q equal sub-intervals of each site, shape (n_sites, q).
    x = (np.arange(n_sites)[:, None] + (np.arange(q)[None, :] + 0.5) / q) / n_sites
    try:
        vals = np.asarray(f(x), dtype=float)
        if vals.shape != x.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([[float(f(xi)) for xi in row] for row in x])
    if not np.all(np.isfinite(vals)):
        raise ValueError("function returned non-finite values on [0, 1]")
    return LatticeField(vals.mean(axis=1))


def grad_centered(f: LatticeField) -> LatticeField:
    """Centered difference: (n/2) * (f[j+1] - f[j-1]), periodic."""
    v = f.values
    return LatticeField(0.5 * f.n_sites * (np.roll(v, -1) - np.roll(v, 1)))


def grad_plus(f: LatticeField) -> LatticeField:
    """Forward difference: n * (f[j+1] - f[j]), periodic."""
    v = f.values
    return LatticeField(f.n_sites * (np.roll(v, -1) - v))


def grad_minus(f: LatticeField) -> LatticeField:
    """Backward difference: n * (f[j] - f[j-1]), periodic."""
    v = f.values
    return LatticeField(f.n_sites * (v - np.roll(v, 1)))


def laplace(f: LatticeField) -> LatticeField:
    """Centered second difference: n^2 * (f[j+1] - 2 f[j] + f[j-1]), periodic."""
    v = f.values
    return LatticeField(f.n_sites**2 * (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)))


def transport_apply(f: LatticeField, tc: TransportCoefficients) -> LatticeField:
    """Apply the transport operator -nu * grad_centered + diffusion * laplace."""
    if tc.n_sites != f.n_sites:
        raise ValueError(
            f"transport built for n={tc.n_sites} applied to field with n={f.n_sites}"
        )
    v = f.values
    n = f.n_sites
    up = np.roll(v, -1)
    dn = np.roll(v, 1)
    adv = -tc.nu * 0.5 * n * (up - dn)
    dif = tc.diffusion * n**2 * (up - 2.0 * v + dn)
    return LatticeField(adv + dif)


def transition_probability(tc: TransportCoefficients, i: int, j: int) -> float:
    """Probability that a transported propagule hops from site i to site j.

    On the cycle each site has one inward and one outward edge, so the
    normalizing denominator is p_out + p_in = 1: the forward neighbour gets
    p_out, the backward neighbour p_in, everything else 0.
    """
    d = (j - i) % tc.n_sites
    if d == 1:
        return tc.p_out
    if d == tc.n_sites - 1:
        return tc.p_in
    return 0.0


def inner(f: LatticeField, g: LatticeField) -> float:
    """Lattice L2 inner product (1/n) * sum f_j g_j."""
    if f.n_sites != g.n_sites:
        raise ValueError("inner product needs fields on the same lattice")
    return float(np.mean(f.values * g.values))


# ---------------------------------------------------------------------------
# Dense matrix representations (test path)

def _shift_matrix(n: int, k: int) -> np.ndarray:
    """Matrix S with (S f)[j] = f[j + k] (periodic)."""
    return np.roll(np.eye(n), k, axis=1)


def grad_matrix(n: int) -> np.ndarray:
    return 0.5 * n * (_shift_matrix(n, 1) - _shift_matrix(n, -1))


def grad_plus_matrix(n: int) -> np.ndarray:
    return n * (_shift_matrix(n, 1) - np.eye(n))


def grad_minus_matrix(n: int) -> np.ndarray:
    return n * (np.eye(n) - _shift_matrix(n, -1))


def laplace_matrix(n: int) -> np.ndarray:
    return n**2 * (_shift_matrix(n, 1) - 2.0 * np.eye(n) + _shift_matrix(n, -1))


def transport_matrix(tc: TransportCoefficients) -> np.ndarray:
    n = tc.n_sites
    return -tc.nu * grad_matrix(n) + tc.diffusion * laplace_matrix(n)


def transition_matrix(tc: TransportCoefficients) -> np.ndarray:
    """Dense hop-probability matrix; rows sum to 1."""
    n = tc.n_sites
    return np.array(
        [[transition_probability(tc, i, j) for j in range(n)] for i in range(n)]
    )
