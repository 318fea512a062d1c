"""Deterministic limits of the lattice SIRB process.

Three views of the same dynamics:

* the well-mixed 4-compartment ODE (no space),
* the lattice companion system dv/dt = A_n v + F(v), where only the
  bacteria row carries the transport operator,
* the continuum reaction-advection-diffusion system, represented as a
  high-resolution instance of the lattice system (method of lines).

All integration is classical fixed-step RK4 with a conservative,
stability-derived step; the transport CFL is mild because the diffusion
coefficient scales like 1/n^2 by construction.  A closed-form
travelling-decaying-wave solution of the bacteria-only linear equation
serves as an independent oracle for the linear part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .lattice import LatticeField, TransportCoefficients, project
from .stochastic import EpidemicParams

__all__ = [
    "ReactionField",
    "DeterministicState",
    "IntegrationError",
    "reaction",
    "reaction_stack",
    "growth_constant",
    "rhs_discrete",
    "auto_dt",
    "integrate",
    "homogeneous_ode",
    "linear_oracle",
    "refine_compare",
]

STABILITY_SAFETY = 0.5
# Negatives above this are roundoff and get clamped to zero; anything below
# signals instability (well separated from the -1e-12 roundoff budget).
NEGATIVE_ABORT = -1e-9


class IntegrationError(RuntimeError):
    """Raised when the explicit integrator detects blow-up (NaN/Inf)."""


@dataclass(frozen=True)
class ReactionField:
    """The local (space-free) reaction terms of the dynamics.

    ``hk_ratio`` is the constant ratio of the human and bacteria
    renormalization constants; it multiplies the contamination source in the
    bacteria equation.  In ``decoupled`` mode that source is dropped (the
    vanishing-ratio limit), making the bacteria equation linear and
    independent of the human compartments.
    """

    params: EpidemicParams
    hk_ratio: float
    mode: str = "coupled"

    def __post_init__(self):
        if self.mode not in ("coupled", "decoupled"):
            raise ValueError(f"mode must be 'coupled' or 'decoupled', got {self.mode!r}")
        if not np.isfinite(self.hk_ratio) or self.hk_ratio < 0:
            raise ValueError(f"hk_ratio must be finite and >= 0, got {self.hk_ratio}")

    @property
    def contamination_coeff(self) -> float:
        """Coefficient of the infected-human source in the bacteria equation."""
        if self.mode == "decoupled":
            return 0.0
        return self.hk_ratio * self.params.p_over_w


@dataclass
class DeterministicState:
    """Four density fields on a common lattice."""

    s: LatticeField
    i: LatticeField
    r: LatticeField
    b: LatticeField

    def __post_init__(self):
        n = self.s.n_sites
        if any(f.n_sites != n for f in (self.i, self.r, self.b)):
            raise ValueError("all four fields must share one lattice")

    @property
    def n_sites(self) -> int:
        return self.s.n_sites

    def stack(self) -> np.ndarray:
        """(4, n) array in the order (S, I, R, B)."""
        return np.stack([self.s.values, self.i.values, self.r.values, self.b.values])

    @classmethod
    def from_stack(cls, y: np.ndarray) -> "DeterministicState":
        return cls(*(LatticeField(row) for row in y))

    @classmethod
    def constant(cls, values: Sequence[float], n_sites: int) -> "DeterministicState":
        return cls.from_stack(np.outer(np.asarray(values, dtype=float), np.ones(n_sites)))

    @classmethod
    def from_functions(
        cls, fns: Sequence[Callable], n_sites: int, quadrature_points: int = 16
    ) -> "DeterministicState":
        """Project four initial-profile functions (S, I, R, B) onto the lattice."""
        if len(fns) != 4:
            raise ValueError("expected four profile functions (S, I, R, B)")
        return cls(*(project(f, n_sites, quadrature_points) for f in fns))


def reaction(y: np.ndarray, rf: ReactionField) -> np.ndarray:
    """The reaction vector field on a single 4-vector (S, I, R, B).

    Only defined on the nonnegative cone; negative input is a domain error.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (4,):
        raise ValueError(f"expected a 4-vector, got shape {y.shape}")
    if np.any(y < 0):
        raise ValueError("reaction field is only defined for nonnegative states")
    return reaction_stack(y.reshape(4, 1), rf)[:, 0]


def reaction_stack(y: np.ndarray, rf: ReactionField) -> np.ndarray:
    """Vectorized reaction terms on a (4, n) stack.  No domain check: the
    integrator may probe infinitesimally negative values inside RK stages."""
    p = rf.params
    s, i, r, b = y
    infection = p.beta * (b / (1.0 + b)) * s
    out = np.empty_like(y)
    out[0] = p.mu * i + (p.mu + p.rho) * r - infection
    out[1] = infection - (p.gamma + p.alpha + p.mu) * i
    out[2] = p.gamma * i - (p.mu + p.rho) * r
    out[3] = -p.mu_b * b + rf.contamination_coeff * i
    return out


def growth_constant(rf: ReactionField) -> float:
    """A constant M with |F(y)|_1 <= M |y|_1 on the nonnegative cone.

    Componentwise, using b/(1+b) <= 1:
        |F_S| <= max(beta, mu, mu+rho) |y|_1
        |F_I| <= max(beta, gamma+alpha+mu) |y|_1
        |F_R| <= max(gamma, mu+rho) |y|_1
        |F_B| <= max(mu_b, contamination_coeff) |y|_1
    and the four bounds add up.
    """
    p = rf.params
    m_s = max(p.beta, p.mu, p.mu + p.rho)
    m_i = max(p.beta, p.gamma + p.alpha + p.mu)
    m_r = max(p.gamma, p.mu + p.rho)
    m_b = max(p.mu_b, rf.contamination_coeff)
    return m_s + m_i + m_r + m_b


def _transport_stencil(b: np.ndarray, tc: TransportCoefficients) -> np.ndarray:
    n = b.shape[0]
    up = np.roll(b, -1)
    dn = np.roll(b, 1)
    return tc.diffusion * n**2 * (up - 2.0 * b + dn) - tc.nu * 0.5 * n * (up - dn)


def rhs_discrete(
    v: DeterministicState, rf: ReactionField, tc: TransportCoefficients
) -> DeterministicState:
    """Right-hand side of the lattice companion system: F(v) plus transport
    acting on the bacteria field only."""
    if tc.n_sites != v.n_sites:
        raise ValueError(f"transport built for n={tc.n_sites}, state has n={v.n_sites}")
    y = v.stack()
    if np.any(y < 0):
        raise ValueError("rhs_discrete is only defined for nonnegative states")
    out = reaction_stack(y, rf)
    out[3] += _transport_stencil(y[3], tc)
    return DeterministicState.from_stack(out)


def auto_dt(rf: ReactionField, tc: TransportCoefficients) -> float:
    """Stability-derived RK4 step: safety / (4 D n^2 + nu n + L_reaction)."""
    n = tc.n_sites
    denom = 4.0 * tc.diffusion * n**2 + abs(tc.nu) * n + growth_constant(rf)
    if denom <= 0.0:
        return 1.0  # nothing moves; any step works
    return STABILITY_SAFETY / denom


def _resolve_grid(horizon: float, sample_times) -> np.ndarray:
    if not np.isfinite(horizon) or horizon < 0:
        raise ValueError(f"horizon must be finite and >= 0, got {horizon}")
    if sample_times is None:
        grid = np.array([0.0, horizon]) if horizon > 0 else np.array([0.0])
    else:
        grid = np.asarray(sample_times, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
        raise ValueError("sample grid must be 1-D and start at t = 0")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("sample times must be strictly increasing")
    if grid[-1] > horizon:
        raise ValueError("sample grid must lie within [0, horizon]")
    return grid


def _rk4_march(
    y0: np.ndarray,
    grid: np.ndarray,
    dt: float,
    rhs: Callable[[np.ndarray], np.ndarray],
    stats: Optional[dict],
) -> list[np.ndarray]:
    """Fixed-step RK4 from sample time to sample time, clamping roundoff
    negatives to zero and aborting on blow-up."""
    clamped = 0
    min_seen = 0.0
    n_steps = 0
    y = y0.copy()
    out = [y.copy()]
    with np.errstate(over="ignore", invalid="ignore"):
        for a, b_t in zip(grid[:-1], grid[1:]):
            span = b_t - a
            m = max(1, math.ceil(span / dt))
            h = span / m
            for _ in range(m):
                k1 = rhs(y)
                k2 = rhs(y + 0.5 * h * k1)
                k3 = rhs(y + 0.5 * h * k2)
                k4 = rhs(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                n_steps += 1
                if not np.all(np.isfinite(y)):
                    raise IntegrationError(
                        f"solution blew up near t={a:.6g} (step {h:.3g}); "
                        "the step may be too large or the parameters invalid"
                    )
                neg = y < 0.0
                if neg.any():
                    low = float(y.min())
                    if low < NEGATIVE_ABORT:
                        raise IntegrationError(
                            f"solution went negative ({low:.3g}) near t={a:.6g}; "
                            "this exceeds the roundoff budget and signals an "
                            "unstable step or invalid parameters"
                        )
                    min_seen = min(min_seen, low)
                    clamped += int(neg.sum())
                    y[neg] = 0.0
            out.append(y.copy())
    if stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + clamped
        stats["min_value_seen"] = min(stats.get("min_value_seen", 0.0), min_seen)
        stats["n_steps"] = stats.get("n_steps", 0) + n_steps
        stats["n_entries"] = stats.get("n_entries", 0) + n_steps * y0.size
    return out


def integrate(
    initial: DeterministicState,
    horizon: float,
    rf: ReactionField,
    tc: TransportCoefficients,
    dt: float | str = "auto",
    sample_times: Optional[Sequence[float]] = None,
    stats: Optional[dict] = None,
) -> list[DeterministicState]:
    """Integrate the lattice companion system over [0, horizon].

    Args:
        initial: nonnegative starting densities.
        horizon: final time.
        rf, tc: reaction terms and transport; tc must match the lattice.
        dt: fixed RK4 step, or "auto" for the stability-derived default.
        sample_times: output grid (defaults to the two endpoints).
        stats: optional dict collecting step/clamp counters.

    Returns:
        One DeterministicState per sample time.
    """
    if tc.n_sites != initial.n_sites:
        raise ValueError(f"transport built for n={tc.n_sites}, state has n={initial.n_sites}")
    y0 = initial.stack()
    if np.any(y0 < 0):
        raise ValueError("initial state must be nonnegative")
    grid = _resolve_grid(horizon, sample_times)
    step = auto_dt(rf, tc) if dt == "auto" else float(dt)
    if step <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def rhs(y: np.ndarray) -> np.ndarray:
        out = reaction_stack(y, rf)
        out[3] += _transport_stencil(y[3], tc)
        return out

    ys = _rk4_march(y0, grid, step, rhs, stats)
    return [DeterministicState.from_stack(y) for y in ys]


def homogeneous_ode(
    initial: Sequence[float],
    horizon: float,
    rf: ReactionField,
    dt: float | str = "auto",
    sample_times: Optional[Sequence[float]] = None,
    stats: Optional[dict] = None,
) -> np.ndarray:
    """Integrate the spatially homogeneous 4-compartment system.

    Returns an array of shape (n_samples, 4) in the order (S, I, R, B).
    """
    y0 = np.asarray(initial, dtype=float)
    if y0.shape != (4,):
        raise ValueError(f"expected a 4-vector initial state, got shape {y0.shape}")
    if np.any(y0 < 0):
        raise ValueError("initial state must be nonnegative")
    grid = _resolve_grid(horizon, sample_times)
    step = STABILITY_SAFETY / max(growth_constant(rf), 1e-12) if dt == "auto" else float(dt)
    if step <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    ys = _rk4_march(
        y0.reshape(4, 1), grid, step, lambda y: reaction_stack(y, rf), stats
    )
    return np.stack([y[:, 0] for y in ys])


def linear_oracle(
    m: int,
    amplitude: float,
    tc,
    mu_b: float,
    t: float,
    x,
    baseline: float = 0.0,
) -> np.ndarray | float:
    """Exact solution of the bacteria-only linear equation for Fourier data.

    With initial profile ``baseline + amplitude * sin(2 pi m x)`` the
    solution is a decaying travelling wave::

        baseline * exp(-mu_b t)
        + amplitude * exp(-(mu_b + D (2 pi m)^2) t) * sin(2 pi m (x - nu t))

    ``tc`` may be a TransportCoefficients or a plain ``(diffusion, nu)``
    pair, so limiting cases (pure advection) stay expressible.
    """
    if isinstance(tc, TransportCoefficients):
        diffusion, nu = tc.diffusion, tc.nu
    else:
        diffusion, nu = tc
    x = np.asarray(x, dtype=float)
    w = 2.0 * math.pi * m
    wave = amplitude * math.exp(-(mu_b + diffusion * w**2) * t) * np.sin(w * (x - nu * t))
    out = baseline * math.exp(-mu_b * t) + wave
    return out if out.shape else float(out)


def _coarsen(values: np.ndarray) -> np.ndarray:
    """Project a 2n-site field onto the n-site lattice (pairwise averages)."""
    return values.reshape(-1, 2).mean(axis=1)


def refine_compare(
    initial_fns: Sequence[Callable],
    m_coarse: int,
    rf: ReactionField,
    tc: TransportCoefficients,
    horizon: float,
    dt: float | str = "auto",
    n_samples: int = 17,
    quadrature_points: int = 64,
) -> float:
    """Distance between the lattice solutions at resolutions m and 2m.

    Both runs share the continuum transport coefficients of ``tc`` (the hop
    rate and bias are rebuilt for the finer lattice); the finer solution is
    projected onto the coarser lattice before comparing.  Returns the
    sup over sample times and compartments of the max-over-sites distance.
    """
    if tc.n_sites != m_coarse:
        raise ValueError(f"tc is built for n={tc.n_sites}, expected m_coarse={m_coarse}")
    tc_fine = TransportCoefficients.from_continuum(tc.diffusion, tc.nu, 2 * m_coarse)
    grid = np.linspace(0.0, horizon, n_samples) if horizon > 0 else np.array([0.0])
    v0_c = DeterministicState.from_functions(initial_fns, m_coarse, quadrature_points)
    v0_f = DeterministicState.from_functions(initial_fns, 2 * m_coarse, quadrature_points)
    sol_c = integrate(v0_c, horizon, rf, tc, dt=dt, sample_times=grid)
    sol_f = integrate(v0_f, horizon, rf, tc_fine, dt=dt, sample_times=grid)
    dist = 0.0
    for vc, vf in zip(sol_c, sol_f):
        coarse = vc.stack()
        fine = np.stack([_coarsen(row) for row in vf.stack()])
        dist = max(dist, float(np.max(np.abs(coarse - fine))))
    return dist
