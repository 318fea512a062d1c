"""Exact event-driven simulation of the lattice SIRB jump process.

The state is four per-site integer count vectors (susceptible, infected,
recovered humans and bacteria).  Fourteen event kinds fire with propensities
proportional to local counts; rescaled densities are counts divided by the
renormalization constants H (humans) and K (bacteria).  Counts, not rescaled
reals, are the source of truth: rescaled values then live exactly on the
grids H^-1 * N and K^-1 * N and nothing drifts over long runs.

Count-form propensities (algebraically identical to the rescaled generator
rates):

    birth_from_s      mu * s_j            s_j += 1
    birth_from_i      mu * i_j            s_j += 1
    birth_from_r      mu * r_j            s_j += 1
    death_s           mu * s_j            s_j -= 1
    infection         beta * s_j * b_j / (K + b_j)    s_j -= 1, i_j += 1
    death_i_natural   mu * i_j            i_j -= 1
    death_i_cholera   alpha * i_j         i_j -= 1
    recovery          gamma * i_j         i_j -= 1, r_j += 1
    death_r           mu * r_j            r_j -= 1
    immunity_loss     rho * r_j           r_j -= 1, s_j += 1
    bacteria_death    mu_b * b_j          b_j -= 1
    contamination     (p/W) * i_j         b_j += 1
    transport_out     ell * p_out * b_j   b_j -= 1, b_{j+1} += 1
    transport_in      ell * p_in * b_j    b_j -= 1, b_{j-1} += 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterator, Optional, Sequence

import numpy as np

from .lattice import MIN_SITES, LatticeField, TransportCoefficients

__all__ = [
    "EventKind",
    "EVENT_DELTAS",
    "N_EVENT_KINDS",
    "EpidemicParams",
    "ScalingParams",
    "SystemState",
    "Event",
    "EventLog",
    "Trajectory",
    "replica_rng",
    "event_rate",
    "all_rates",
    "apply_event",
    "step_ssa",
    "simulate_ssa",
    "simulate_tau_leap",
]

RNG_ALGORITHM = "philox4x64"


class EventKind(IntEnum):
    """The fourteen jump kinds; values double as the on-disk kind byte."""

    BIRTH_FROM_S = 0
    BIRTH_FROM_I = 1
    BIRTH_FROM_R = 2
    DEATH_S = 3
    INFECTION = 4
    DEATH_I_NATURAL = 5
    DEATH_I_CHOLERA = 6
    RECOVERY = 7
    DEATH_R = 8
    IMMUNITY_LOSS = 9
    BACTERIA_DEATH = 10
    CONTAMINATION = 11
    TRANSPORT_OUT = 12
    TRANSPORT_IN = 13


N_EVENT_KINDS = len(EventKind)

# kind -> tuple of (compartment, site offset, count delta).  Compartments are
# "s", "i", "r", "b"; offsets are relative to the event site, periodic.
EVENT_DELTAS: dict[EventKind, tuple[tuple[str, int, int], ...]] = {
    EventKind.BIRTH_FROM_S: (("s", 0, +1),),
    EventKind.BIRTH_FROM_I: (("s", 0, +1),),
    EventKind.BIRTH_FROM_R: (("s", 0, +1),),
    EventKind.DEATH_S: (("s", 0, -1),),
    EventKind.INFECTION: (("s", 0, -1), ("i", 0, +1)),
    EventKind.DEATH_I_NATURAL: (("i", 0, -1),),
    EventKind.DEATH_I_CHOLERA: (("i", 0, -1),),
    EventKind.RECOVERY: (("i", 0, -1), ("r", 0, +1)),
    EventKind.DEATH_R: (("r", 0, -1),),
    EventKind.IMMUNITY_LOSS: (("r", 0, -1), ("s", 0, +1)),
    EventKind.BACTERIA_DEATH: (("b", 0, -1),),
    EventKind.CONTAMINATION: (("b", 0, +1),),
    EventKind.TRANSPORT_OUT: (("b", 0, -1), ("b", +1, +1)),
    EventKind.TRANSPORT_IN: (("b", 0, -1), ("b", -1, +1)),
}

# Compartments whose local count must be >= 1 for the event to have nonzero
# propensity (the rate-defining "source").
_EVENT_SOURCE: dict[EventKind, tuple[str, ...]] = {
    EventKind.BIRTH_FROM_S: ("s",),
    EventKind.BIRTH_FROM_I: ("i",),
    EventKind.BIRTH_FROM_R: ("r",),
    EventKind.DEATH_S: ("s",),
    EventKind.INFECTION: ("s", "b"),
    EventKind.DEATH_I_NATURAL: ("i",),
    EventKind.DEATH_I_CHOLERA: ("i",),
    EventKind.RECOVERY: ("i",),
    EventKind.DEATH_R: ("r",),
    EventKind.IMMUNITY_LOSS: ("r",),
    EventKind.BACTERIA_DEATH: ("b",),
    EventKind.CONTAMINATION: ("i",),
    EventKind.TRANSPORT_OUT: ("b",),
    EventKind.TRANSPORT_IN: ("b",),
}


@dataclass(frozen=True)
class EpidemicParams:
    """All biological and transport rate constants, in 1/time units.

    ``p_over_w`` is the contamination rate of the reservoir per infected
    human; the numerator and the reservoir volume only ever appear through
    this ratio.
    """

    mu: float
    alpha: float
    gamma: float
    rho: float
    beta: float
    p_over_w: float
    mu_b: float
    transport: TransportCoefficients

    def __post_init__(self):
        for name in ("mu", "alpha", "gamma", "rho", "beta", "p_over_w", "mu_b"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"rate {name} must be finite and >= 0, got {v}")

    def with_lattice(self, n_sites: int) -> "EpidemicParams":
        """Rebuild the transport for a different resolution, preserving the
        continuum advection/diffusion coefficients."""
        tc = self.transport
        if n_sites == tc.n_sites:
            return self
        return replace(
            self,
            transport=TransportCoefficients.from_continuum(tc.diffusion, tc.nu, n_sites),
        )


@dataclass(frozen=True)
class ScalingParams:
    """Lattice size and the human/bacteria renormalization constants."""

    n_sites: int
    h: int
    k: int

    def __post_init__(self):
        for name, lo in (("n_sites", MIN_SITES), ("h", 1), ("k", 1)):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < lo:
                raise ValueError(f"{name} must be an integer >= {lo}, got {v!r}")


_COMPARTMENTS = ("s", "i", "r", "b")


@dataclass
class SystemState:
    """Per-site integer counts for the four compartments."""

    s_counts: np.ndarray
    i_counts: np.ndarray
    r_counts: np.ndarray
    b_counts: np.ndarray

    @classmethod
    def from_counts(cls, s, i, r, b) -> "SystemState":
        """Validated constructor: equal lengths, nonnegative integers."""
        arrs = [np.asarray(a) for a in (s, i, r, b)]
        n = arrs[0].shape[0] if arrs[0].ndim == 1 else -1
        for a in arrs:
            if a.ndim != 1 or a.shape[0] != n:
                raise ValueError("compartment count vectors must be 1-D of equal length")
            if not np.issubdtype(a.dtype, np.integer):
                if not np.all(a == np.round(a)):
                    raise ValueError("counts must be integers")
            if np.any(a < 0):
                raise ValueError("counts must be nonnegative")
        if n < MIN_SITES:
            raise ValueError(f"lattice needs at least {MIN_SITES} sites, got {n}")
        return cls(*(a.astype(np.int64) for a in arrs))

    @classmethod
    def from_densities(cls, s, i, r, b, scaling: ScalingParams) -> "SystemState":
        """Round rescaled densities to the nearest integer counts."""
        fields = []
        for a, scale in zip((s, i, r, b), (scaling.h, scaling.h, scaling.h, scaling.k)):
            v = a.values if isinstance(a, LatticeField) else np.asarray(a, dtype=float)
            fields.append(np.rint(v * scale).astype(np.int64))
        return cls.from_counts(*fields)

    @property
    def n_sites(self) -> int:
        return self.s_counts.shape[0]

    def counts(self, compartment: str) -> np.ndarray:
        return getattr(self, f"{compartment}_counts")

    def copy(self) -> "SystemState":
        return SystemState(
            self.s_counts.copy(), self.i_counts.copy(),
            self.r_counts.copy(), self.b_counts.copy(),
        )

    def rescaled(self, scaling: ScalingParams) -> np.ndarray:
        """Densities as a (4, n) float array in the order (S, I, R, B)."""
        h = float(scaling.h)
        k = float(scaling.k)
        return np.stack([
            self.s_counts / h, self.i_counts / h, self.r_counts / h, self.b_counts / k,
        ])

    def density_field(self, compartment: str, scaling: ScalingParams) -> LatticeField:
        scale = float(scaling.k if compartment == "b" else scaling.h)
        return LatticeField(self.counts(compartment) / scale)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SystemState):
            return NotImplemented
        return all(
            np.array_equal(self.counts(c), other.counts(c)) for c in _COMPARTMENTS
        )


@dataclass(frozen=True)
class Event:
    kind: EventKind
    site: int


@dataclass
class EventLog:
    """Compact columnar record of every jump in a trajectory."""

    times: np.ndarray  # float64
    kinds: np.ndarray  # uint8
    sites: np.ndarray  # uint32

    def __len__(self) -> int:
        return self.times.shape[0]

    def __iter__(self) -> Iterator[tuple[float, Event]]:
        for t, k, j in zip(self.times, self.kinds, self.sites):
            yield float(t), Event(EventKind(int(k)), int(j))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.sites, other.sites)
        )


@dataclass
class Trajectory:
    """Sampled states of one realization, plus the optional full event log."""

    sample_times: np.ndarray
    states: list[SystemState]
    event_log: Optional[EventLog]
    seed: int
    rng_algorithm: str = RNG_ALGORITHM
    stats: dict = field(default_factory=dict)

    @property
    def initial(self) -> SystemState:
        return self.states[0]

    @property
    def final(self) -> SystemState:
        return self.states[-1]


def replica_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for (master seed, stream index).

    Streams are Philox 4x64 counter-based keys, so replicas never overlap and
    results are bit-identical across platforms.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Rates

def event_rate(
    state: SystemState,
    params: EpidemicParams,
    scaling: ScalingParams,
    kind: EventKind,
    site: int,
) -> float:
    """Propensity of one event in count form (see module docstring table)."""
    j = site % state.n_sites
    s = float(state.s_counts[j])
    i = float(state.i_counts[j])
    r = float(state.r_counts[j])
    b = float(state.b_counts[j])
    p = params
    if kind in (EventKind.BIRTH_FROM_S, EventKind.DEATH_S):
        return p.mu * s
    if kind in (EventKind.BIRTH_FROM_I, EventKind.DEATH_I_NATURAL):
        return p.mu * i
    if kind in (EventKind.BIRTH_FROM_R, EventKind.DEATH_R):
        return p.mu * r
    if kind == EventKind.INFECTION:
        return p.beta * s * b / (scaling.k + b)
    if kind == EventKind.DEATH_I_CHOLERA:
        return p.alpha * i
    if kind == EventKind.RECOVERY:
        return p.gamma * i
    if kind == EventKind.IMMUNITY_LOSS:
        return p.rho * r
    if kind == EventKind.BACTERIA_DEATH:
        return p.mu_b * b
    if kind == EventKind.CONTAMINATION:
        return p.p_over_w * i
    if kind == EventKind.TRANSPORT_OUT:
        return p.transport.ell * p.transport.p_out * b
    if kind == EventKind.TRANSPORT_IN:
        return p.transport.ell * p.transport.p_in * b
    raise ValueError(f"unknown event kind {kind!r}")


def all_rates(
    state: SystemState, params: EpidemicParams, scaling: ScalingParams
) -> np.ndarray:
    """All propensities as a (14, n_sites) array indexed by EventKind."""
    _check_compatible(state.n_sites, params, scaling)
    s = state.s_counts.astype(float)
    i = state.i_counts.astype(float)
    r = state.r_counts.astype(float)
    b = state.b_counts.astype(float)
    p = params
    out = np.empty((N_EVENT_KINDS, state.n_sites))
    out[EventKind.BIRTH_FROM_S] = p.mu * s
    out[EventKind.BIRTH_FROM_I] = p.mu * i
    out[EventKind.BIRTH_FROM_R] = p.mu * r
    out[EventKind.DEATH_S] = p.mu * s
    out[EventKind.INFECTION] = p.beta * s * b / (scaling.k + b)
    out[EventKind.DEATH_I_NATURAL] = p.mu * i
    out[EventKind.DEATH_I_CHOLERA] = p.alpha * i
    out[EventKind.RECOVERY] = p.gamma * i
    out[EventKind.DEATH_R] = p.mu * r
    out[EventKind.IMMUNITY_LOSS] = p.rho * r
    out[EventKind.BACTERIA_DEATH] = p.mu_b * b
    out[EventKind.CONTAMINATION] = p.p_over_w * i
    out[EventKind.TRANSPORT_OUT] = p.transport.ell * p.transport.p_out * b
    out[EventKind.TRANSPORT_IN] = p.transport.ell * p.transport.p_in * b
    return out


def _check_compatible(n_sites: int, params: EpidemicParams, scaling: ScalingParams):
    if scaling.n_sites != n_sites:
        raise ValueError(f"state has {n_sites} sites but scaling expects {scaling.n_sites}")
    if params.transport.n_sites != n_sites:
        raise ValueError(
            f"transport built for n={params.transport.n_sites}, state has n={n_sites}"
        )


# ---------------------------------------------------------------------------
# State updates

def apply_event(state: SystemState, e: Event) -> SystemState:
    """Return the state after one jump.  Pure: the input is not modified.

    Raises ValueError when a source compartment is empty at the event site;
    an exact simulator never selects such an event, so hitting this signals
    an engine or replay bug.
    """
    n = state.n_sites
    j = e.site % n
    for comp in _EVENT_SOURCE[e.kind]:
        if state.counts(comp)[j] < 1:
            raise ValueError(
                f"{e.kind.name} at site {j} requires {comp}_counts >= 1 "
                f"(got {int(state.counts(comp)[j])}); zero-propensity event applied"
            )
    out = state.copy()
    for comp, offset, delta in EVENT_DELTAS[e.kind]:
        out.counts(comp)[(j + offset) % n] += delta
    return out


# ---------------------------------------------------------------------------
# Exact simulation

def step_ssa(
    state: SystemState,
    params: EpidemicParams,
    scaling: ScalingParams,
    rng: np.random.Generator,
) -> tuple[Optional[Event], float]:
    """Draw one jump of the exact chain: (event, waiting time).

    Returns (None, inf) from an absorbing state (total propensity zero).
    The waiting time is exponential with the total propensity as rate, and
    the event is chosen with probability proportional to its propensity.
    """
    rates = all_rates(state, params, scaling)
    flat = rates.reshape(-1)
    cum = np.cumsum(flat)
    total = float(cum[-1])
    if total <= 0.0:
        return None, math.inf
    wait = rng.standard_exponential() / total
    x = rng.random() * total
    idx = int(np.searchsorted(cum, x, side="right"))
    if idx >= flat.size:  # x landed on the last cumsum boundary
        idx = int(flat.nonzero()[0][-1])
    kind, site = divmod(idx, state.n_sites)
    return Event(EventKind(kind), site), wait


def _validate_grid(sample_times, horizon: float) -> np.ndarray:
    grid = np.asarray(sample_times, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("sample grid must be a nonempty 1-D array")
    if grid[0] != 0.0:
        raise ValueError("sample grid must start at t = 0")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("sample times must be strictly increasing")
    if not np.isfinite(horizon) or horizon < 0:
        raise ValueError(f"horizon must be finite and >= 0, got {horizon}")
    if grid[-1] > horizon:
        raise ValueError("sample grid must lie within [0, horizon]")
    return grid


class _LogBuffer:
    """Append-only growable columnar event buffer."""

    def __init__(self, capacity: int = 1024):
        self.t = np.empty(capacity)
        self.k = np.empty(capacity, dtype=np.uint8)
        self.j = np.empty(capacity, dtype=np.uint32)
        self.size = 0

    def append(self, t: float, kind: int, site: int):
        if self.size == self.t.shape[0]:
            grow = self.size * 2
            self.t = np.resize(self.t, grow)
            self.k = np.resize(self.k, grow)
            self.j = np.resize(self.j, grow)
        self.t[self.size] = t
        self.k[self.size] = kind
        self.j[self.size] = site
        self.size += 1

    def freeze(self) -> EventLog:
        n = self.size
        return EventLog(self.t[:n].copy(), self.k[:n].copy(), self.j[:n].copy())


def simulate_ssa(
    initial: SystemState,
    horizon: float,
    sample_times: Sequence[float],
    params: EpidemicParams,
    scaling: ScalingParams,
    seed: int,
    stream: int = 0,
    record_events: bool = False,
) -> Trajectory:
    """Exact Gillespie simulation over [0, horizon].

    Snapshots are taken by carrying the piecewise-constant state across each
    sample time (right-continuous convention: a snapshot that coincides with
    a jump records the post-jump state).  When the total propensity hits
    zero the chain is absorbed and the clock jumps to the horizon.

    The trajectory is a deterministic function of
    (initial, seed, stream, params, scaling).

    Args:
        initial: starting counts; not modified.
        horizon: final time T >= 0.
        sample_times: strictly increasing grid in [0, T], starting at 0.
        params, scaling: model constants; transport lattice must match.
        seed: master seed; combined with ``stream`` into a Philox key.
        record_events: keep the full (time, kind, site) log.

    Returns:
        Trajectory with one state per sample time.
    """
    grid = _validate_grid(sample_times, horizon)
    _check_compatible(initial.n_sites, params, scaling)
    n = initial.n_sites
    rng = replica_rng(seed, stream)

    s = initial.s_counts.astype(np.int64).copy()
    i = initial.i_counts.astype(np.int64).copy()
    r = initial.r_counts.astype(np.int64).copy()
    b = initial.b_counts.astype(np.int64).copy()
    state_now = SystemState(s, i, r, b)
    rates = all_rates(state_now, params, scaling)
    flat = rates.reshape(-1)

    mu = params.mu
    alpha = params.alpha
    gamma = params.gamma
    rho = params.rho
    beta = params.beta
    pw = params.p_over_w
    mu_b = params.mu_b
    kcap = float(scaling.k)
    lpo = params.transport.ell * params.transport.p_out
    lpi = params.transport.ell * params.transport.p_in

    INF = int(EventKind.INFECTION)
    REC = int(EventKind.RECOVERY)
    IMM = int(EventKind.IMMUNITY_LOSS)
    DS = int(EventKind.DEATH_S)
    DIN = int(EventKind.DEATH_I_NATURAL)
    DIC = int(EventKind.DEATH_I_CHOLERA)
    DR = int(EventKind.DEATH_R)
    BD = int(EventKind.BACTERIA_DEATH)
    CON = int(EventKind.CONTAMINATION)
    TO = int(EventKind.TRANSPORT_OUT)
    TI = int(EventKind.TRANSPORT_IN)

    def refresh_s(j):
        sj = s[j]
        rates[0, j] = mu * sj
        rates[3, j] = mu * sj
        rates[4, j] = beta * sj * b[j] / (kcap + b[j])

    def refresh_i(j):
        ij = i[j]
        v = mu * ij
        rates[1, j] = v
        rates[5, j] = v
        rates[6, j] = alpha * ij
        rates[7, j] = gamma * ij
        rates[11, j] = pw * ij

    def refresh_r(j):
        rj = r[j]
        v = mu * rj
        rates[2, j] = v
        rates[8, j] = v
        rates[9, j] = rho * rj

    def refresh_b(j):
        bj = b[j]
        rates[4, j] = beta * s[j] * bj / (kcap + bj)
        rates[10, j] = mu_b * bj
        rates[12, j] = lpo * bj
        rates[13, j] = lpi * bj

    snapshots: list[SystemState] = []
    log = _LogBuffer() if record_events else None
    n_grid = grid.shape[0]
    k_sample = 0
    t = 0.0
    n_events = 0

    while True:
        cum = np.cumsum(flat)
        total = float(cum[-1])
        if total > 0.0:
            t_next = t + rng.standard_exponential() / total
        else:
            t_next = math.inf
        while k_sample < n_grid and grid[k_sample] < t_next:
            snapshots.append(SystemState(s.copy(), i.copy(), r.copy(), b.copy()))
            k_sample += 1
        if t_next > horizon:
            break
        t = t_next
        x = rng.random() * total
        idx = int(np.searchsorted(cum, x, side="right"))
        if idx >= flat.size:
            idx = int(flat.nonzero()[0][-1])
        kind, j = divmod(idx, n)

        if kind == INF:
            s[j] -= 1
            i[j] += 1
            refresh_s(j)
            refresh_i(j)
        elif kind <= 3:  # births into S and natural S death
            s[j] += 1 if kind != DS else -1
            refresh_s(j)
        elif kind in (DIN, DIC):
            i[j] -= 1
            refresh_i(j)
        elif kind == REC:
            i[j] -= 1
            r[j] += 1
            refresh_i(j)
            refresh_r(j)
        elif kind == DR:
            r[j] -= 1
            refresh_r(j)
        elif kind == IMM:
            r[j] -= 1
            s[j] += 1
            refresh_r(j)
            refresh_s(j)
        elif kind == BD:
            b[j] -= 1
            refresh_b(j)
        elif kind == CON:
            b[j] += 1
            refresh_b(j)
        elif kind == TO:
            jn = j + 1 if j + 1 < n else 0
            b[j] -= 1
            b[jn] += 1
            refresh_b(j)
            refresh_b(jn)
        elif kind == TI:
            jn = j - 1 if j > 0 else n - 1
            b[j] -= 1
            b[jn] += 1
            refresh_b(j)
            refresh_b(jn)
        else:  # pragma: no cover - kinds are exhaustive
            raise AssertionError(f"unhandled kind {kind}")

        n_events += 1
        if log is not None:
            log.append(t, kind, j)

    return Trajectory(
        sample_times=grid,
        states=snapshots,
        event_log=log.freeze() if log is not None else None,
        seed=seed,
        stats={"n_events": n_events, "stream": stream},
    )


# ---------------------------------------------------------------------------
# Tau-leaping accelerator

def simulate_tau_leap(
    initial: SystemState,
    horizon: float,
    tau: float,
    params: EpidemicParams,
    scaling: ScalingParams,
    seed: int,
    stream: int = 0,
    sample_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Approximate simulation: each (kind, site) fires Poisson(rate * tau)
    times per step.

    Step boundaries are forced at sample times, so snapshots are unbiased.
    A step that would drive any count negative is rejected and retried with
    the step halved (that step only); the number of halvings is reported in
    ``Trajectory.stats["n_halvings"]``.  Converges in distribution to the
    exact chain as tau -> 0.
    """
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"tau must be finite and > 0, got {tau}")
    if sample_times is None:
        sample_times = [0.0, horizon] if horizon > 0 else [0.0]
    grid = _validate_grid(sample_times, horizon)
    _check_compatible(initial.n_sites, params, scaling)
    rng = replica_rng(seed, stream)

    state = initial.copy()
    snapshots: list[SystemState] = [state.copy()]
    t = 0.0
    n_halvings = 0
    n_steps = 0
    min_tau = tau * 2.0**-40  # halving below this signals pathological rates

    TO = int(EventKind.TRANSPORT_OUT)
    TI = int(EventKind.TRANSPORT_IN)

    # Segment boundaries at every sample time plus the horizon, so snapshots
    # land exactly and the final chunk of each segment snaps to the boundary.
    boundaries = list(grid[1:])
    if horizon > (boundaries[-1] if boundaries else 0.0):
        boundaries.append(horizon)

    for t_stop in boundaries:
        while t < t_stop:
            remaining = t_stop - t
            final_chunk = remaining <= tau
            step = remaining if final_chunk else tau
            rates = all_rates(state, params, scaling)
            halved = False
            while True:
                fires = rng.poisson(rates * step)
                ds = (
                    fires[EventKind.BIRTH_FROM_S]
                    + fires[EventKind.BIRTH_FROM_I]
                    + fires[EventKind.BIRTH_FROM_R]
                    - fires[EventKind.DEATH_S]
                    - fires[EventKind.INFECTION]
                    + fires[EventKind.IMMUNITY_LOSS]
                )
                di = (
                    fires[EventKind.INFECTION]
                    - fires[EventKind.DEATH_I_NATURAL]
                    - fires[EventKind.DEATH_I_CHOLERA]
                    - fires[EventKind.RECOVERY]
                )
                dr = (
                    fires[EventKind.RECOVERY]
                    - fires[EventKind.DEATH_R]
                    - fires[EventKind.IMMUNITY_LOSS]
                )
                db = (
                    fires[EventKind.CONTAMINATION]
                    - fires[EventKind.BACTERIA_DEATH]
                    - fires[TO]
                    - fires[TI]
                    + np.roll(fires[TO], 1)
                    + np.roll(fires[TI], -1)
                )
                s_new = state.s_counts + ds
                i_new = state.i_counts + di
                r_new = state.r_counts + dr
                b_new = state.b_counts + db
                if (
                    s_new.min() >= 0
                    and i_new.min() >= 0
                    and r_new.min() >= 0
                    and b_new.min() >= 0
                ):
                    break
                step *= 0.5
                halved = True
                n_halvings += 1
                if step < min_tau:
                    raise RuntimeError(
                        "tau-leap step collapsed below tau * 2^-40; rates are too stiff"
                    )
            state = SystemState(s_new, i_new, r_new, b_new)
            t = t_stop if (final_chunk and not halved) else t + step
            n_steps += 1
        if t_stop in grid:
            snapshots.append(state.copy())

    return Trajectory(
        sample_times=grid,
        states=snapshots,
        event_log=None,
        seed=seed,
        stats={"n_steps": n_steps, "n_halvings": n_halvings, "stream": stream},
    )
