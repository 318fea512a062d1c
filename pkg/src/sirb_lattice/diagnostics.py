"""Quantitative verification machinery for the lattice SIRB process.

Three layers of checks, in increasing strength:

* algebraic identities at a fixed state: the drift and the per-site
  square-amplitude/cross-amplitude formulas must equal brute-force sums
  over the fourteen-entry event table (no simulation involved);
* pathwise residuals: the centered fluctuation Z(t) = u(t) - u(0) -
  integral of the drift, computed exactly from an event log, and the
  compensated sums of squared/crossed jumps, which are mean-zero
  martingales;
* convergence ladders: replica sup-distances between the stochastic
  process and its deterministic companion system as the renormalization
  constants grow.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .deterministic import (
    DeterministicState,
    ReactionField,
    growth_constant,
    integrate,
    reaction_stack,
    _transport_stencil,
)
from .lattice import LatticeField, project
from .stochastic import (
    EVENT_DELTAS,
    EpidemicParams,
    EventKind,
    ScalingParams,
    SystemState,
    Trajectory,
    all_rates,
    simulate_ssa,
)

__all__ = [
    "sup_distance",
    "drift_fields",
    "event_table_drift",
    "square_amplitudes",
    "event_table_square_sum",
    "MartingaleResidual",
    "martingale_residual",
    "CompensatorCheck",
    "compensator_check",
    "mean_zero_pass_fraction",
    "LadderRung",
    "ConvergenceReport",
    "lln_experiment",
]

COMPARTMENTS = ("S", "I", "R", "B")
_COMP_INDEX = {"S": 0, "I": 1, "R": 2, "B": 3}
_COMP_KEY = {"s": 0, "i": 1, "r": 2, "b": 3}
SQUARE_FAMILIES = ("S", "I", "R", "B")
CROSS_FAMILIES = ("B_cross_plus", "B_cross_minus")


# ---------------------------------------------------------------------------
# Distances

def sup_distance(
    traj: Trajectory,
    det_states: Sequence[DeterministicState],
    scaling: ScalingParams,
    det_times: Optional[np.ndarray] = None,
    compartments: Sequence[str] = COMPARTMENTS,
) -> float:
    """Sup over sample times, compartments and sites of |u - v|.

    Both sides must live on the same lattice and the same sample grid.
    """
    if det_times is not None and not np.array_equal(
        np.asarray(det_times, dtype=float), traj.sample_times
    ):
        raise ValueError("trajectory and deterministic sample grids differ")
    if len(det_states) != len(traj.states):
        raise ValueError(
            f"grid mismatch: {len(traj.states)} stochastic snapshots "
            f"vs {len(det_states)} deterministic states"
        )
    rows = [_COMP_INDEX[c] for c in compartments]
    dist = 0.0
    for u_state, v_state in zip(traj.states, det_states):
        if v_state.n_sites != u_state.n_sites:
            raise ValueError("lattice sizes differ between the two solutions")
        diff = u_state.rescaled(scaling)[rows] - v_state.stack()[rows]
        dist = max(dist, float(np.max(np.abs(diff))))
    return dist


# ---------------------------------------------------------------------------
# Drift and square amplitudes (closed form and brute force)

def _drift_stack(u: np.ndarray, params: EpidemicParams, hk_ratio: float) -> np.ndarray:
    """Operator-form drift on a (4, n) density stack: F(u) plus transport on
    the bacteria row."""
    rf = ReactionField(params, hk_ratio=hk_ratio, mode="coupled")
    out = reaction_stack(u, rf)
    out[3] += _transport_stencil(u[3], params.transport)
    return out


def drift_fields(
    state: SystemState, params: EpidemicParams, scaling: ScalingParams
) -> dict[str, LatticeField]:
    """The drift (debit) of each compartment at the given state."""
    u = state.rescaled(scaling)
    psi = _drift_stack(u, params, scaling.h / scaling.k)
    return {c: LatticeField(psi[_COMP_INDEX[c]]) for c in COMPARTMENTS}


def event_table_drift(
    state: SystemState, params: EpidemicParams, scaling: ScalingParams
) -> np.ndarray:
    """Brute-force drift: sum over the event table of rate times rescaled
    jump, per compartment and site.  Shape (4, n)."""
    rates = all_rates(state, params, scaling)
    renorm = {"s": float(scaling.h), "i": float(scaling.h),
              "r": float(scaling.h), "b": float(scaling.k)}
    out = np.zeros((4, state.n_sites))
    for kind, deltas in EVENT_DELTAS.items():
        row = rates[kind]
        for comp, off, d in deltas:
            out[_COMP_KEY[comp]] += np.roll(row, off) * (d / renorm[comp])
    return out


def _amp_stack(u: np.ndarray, params: EpidemicParams, hk_ratio: float) -> np.ndarray:
    """Closed-form square amplitudes on a density stack; rows (S, I, R, B).

    Per site: the S amplitude is 2 mu u_S + mu u_I + (mu+rho) u_R plus the
    infection term; the B amplitude splits into the local-reaction part
    mu_b u_B + (H/K)(p/W) u_I and the transport part
    ell (p_in u_B[j+1] + u_B[j] + p_out u_B[j-1]).
    """
    p = params
    s, i, r, b = u
    dose = b / (1.0 + b)
    tc = p.transport
    out = np.empty_like(u)
    out[0] = 2.0 * p.mu * s + p.mu * i + (p.mu + p.rho) * r + p.beta * dose * s
    out[1] = p.beta * dose * s + (p.mu + p.alpha + p.gamma) * i
    out[2] = p.gamma * i + (p.mu + p.rho) * r
    out[3] = (
        p.mu_b * b
        + hk_ratio * p.p_over_w * i
        + tc.ell * (tc.p_in * np.roll(b, -1) + b + tc.p_out * np.roll(b, 1))
    )
    return out


def _cross_stacks(u: np.ndarray, params: EpidemicParams) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form cross amplitudes for the simultaneous bacteria jumps on
    neighbouring sites: (pair j,j+1), (pair j,j-1)."""
    b = u[3]
    tc = params.transport
    plus = -tc.ell * (tc.p_out * b + tc.p_in * np.roll(b, -1))
    minus = -tc.ell * (tc.p_in * b + tc.p_out * np.roll(b, 1))
    return plus, minus


def square_amplitudes(
    state: SystemState, params: EpidemicParams, scaling: ScalingParams
) -> dict[str, LatticeField]:
    """Square-amplitude fields |psi|^2 per compartment plus the two bacteria
    cross-product fields, evaluated from the closed forms."""
    u = state.rescaled(scaling)
    amp = _amp_stack(u, params, scaling.h / scaling.k)
    plus, minus = _cross_stacks(u, params)
    out = {c: LatticeField(amp[_COMP_INDEX[c]]) for c in COMPARTMENTS}
    out["B_cross_plus"] = LatticeField(plus)
    out["B_cross_minus"] = LatticeField(minus)
    return out


def event_table_square_sum(
    state: SystemState, params: EpidemicParams, scaling: ScalingParams
) -> dict[str, np.ndarray]:
    """Brute-force square and cross amplitudes from the event table.

    For each compartment: renorm * sum over events of rate * (rescaled jump
    at the site)^2.  For the cross fields: K * sum over events of the
    product of the rescaled bacteria jumps at neighbouring sites.  This is
    the authoritative definition every closed form is tested against.
    """
    rates = all_rates(state, params, scaling)
    h = float(scaling.h)
    k = float(scaling.k)
    renorm = {"s": h, "i": h, "r": h, "b": k}
    n = state.n_sites
    amp = np.zeros((4, n))
    cross_plus = np.zeros(n)
    cross_minus = np.zeros(n)
    for kind, deltas in EVENT_DELTAS.items():
        row = rates[kind]
        for comp, off, d in deltas:
            amp[_COMP_KEY[comp]] += np.roll(row, off) * (d * d / renorm[comp])
        b_deltas = [(off, d) for comp, off, d in deltas if comp == "b"]
        for o1, d1 in b_deltas:
            for o2, d2 in b_deltas:
                if o2 == o1 + 1:
                    cross_plus += np.roll(row, o1) * (d1 * d2 / k)
                elif o2 == o1 - 1:
                    cross_minus += np.roll(row, o1) * (d1 * d2 / k)
    out = {c: amp[_COMP_INDEX[c]] for c in COMPARTMENTS}
    out["B_cross_plus"] = cross_plus
    out["B_cross_minus"] = cross_minus
    return out


# ---------------------------------------------------------------------------
# Pathwise residual sweep

@dataclass
class MartingaleResidual:
    """Centered fluctuation Z(t) = u(t) - u(0) - integral of the drift,
    per compartment, sampled on a time grid.  Z(0) = 0 identically."""

    times: np.ndarray
    z_s: np.ndarray  # (n_times, n_sites)
    z_i: np.ndarray
    z_r: np.ndarray
    z_b: np.ndarray

    def component(self, c: str) -> np.ndarray:
        return getattr(self, f"z_{c.lower()}")


def _sweep_log(
    traj: Trajectory,
    params: EpidemicParams,
    scaling: ScalingParams,
) -> tuple[np.ndarray, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Single pass over an event log.

    Returns (z, observed, predicted):
      z: (n_times, 4, n) residual fields,
      observed: family -> (n_times, n) accumulated squared/crossed jumps,
      predicted: family -> (n_times, n) accumulated compensator integrals.

    The integrals are exact sums over inter-event intervals on which the
    state is constant; samples coinciding with a jump record the post-jump
    value (right-continuous convention, same as the simulator).
    """
    if traj.event_log is None:
        raise ValueError("trajectory has no event log; rerun with record_events=True")
    grid = traj.sample_times
    n_times = grid.shape[0]
    n = traj.initial.n_sites
    h = float(scaling.h)
    k = float(scaling.k)
    hk = scaling.h / scaling.k
    inv_h2 = 1.0 / h**2
    inv_k2 = 1.0 / k**2

    u = traj.initial.rescaled(scaling)  # mutated in place as events apply
    u0 = u.copy()
    int_psi = np.zeros((4, n))
    families = list(SQUARE_FAMILIES) + list(CROSS_FAMILIES)
    int_amp = {f: np.zeros(n) for f in families}
    obs = {f: np.zeros(n) for f in families}

    z_out = np.zeros((n_times, 4, n))
    obs_out = {f: np.zeros((n_times, n)) for f in families}
    pred_out = {f: np.zeros((n_times, n)) for f in families}

    # Inlined drift/amplitude evaluation: this runs once per event, so avoid
    # rebuilding parameter objects (identical algebra to _drift_stack,
    # _amp_stack and _cross_stacks, which the tests pin against brute force).
    p = params
    tc = p.transport
    mu, al, ga, rho, beta = p.mu, p.alpha, p.gamma, p.rho, p.beta
    mu_b, c_cont = p.mu_b, hk * p.p_over_w
    ell, po, pi = tc.ell, tc.p_out, tc.p_in
    diff_c, nu_c = tc.diffusion * n**2, tc.nu * 0.5 * n

    def evaluate() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        s_, i_, r_, b_ = u
        dose = beta * (b_ / (1.0 + b_)) * s_
        up, dn = np.roll(b_, -1), np.roll(b_, 1)
        psi = np.empty((4, n))
        psi[0] = mu * i_ + (mu + rho) * r_ - dose
        psi[1] = dose - (ga + al + mu) * i_
        psi[2] = ga * i_ - (mu + rho) * r_
        psi[3] = (-mu_b * b_ + c_cont * i_
                  + diff_c * (up - 2.0 * b_ + dn) - nu_c * (up - dn))
        amp = np.empty((4, n))
        amp[0] = 2.0 * mu * s_ + mu * i_ + (mu + rho) * r_ + dose
        amp[1] = dose + (mu + al + ga) * i_
        amp[2] = ga * i_ + (mu + rho) * r_
        amp[3] = mu_b * b_ + c_cont * i_ + ell * (pi * up + b_ + po * dn)
        cross_p = -ell * (po * b_ + pi * up)
        cross_m = -ell * (pi * b_ + po * dn)
        return psi, amp, cross_p, cross_m

    psi, amp, cross_p, cross_m = evaluate()

    def advance(to_t: float, t_from: float):
        nonlocal int_psi
        dt = to_t - t_from
        if dt > 0.0:
            int_psi = int_psi + psi * dt
            for f in SQUARE_FAMILIES:
                scale = h if f != "B" else k
                int_amp[f] += amp[_COMP_INDEX[f]] * (dt / scale)
            int_amp["B_cross_plus"] += cross_p * (dt / k)
            int_amp["B_cross_minus"] += cross_m * (dt / k)

    t_cursor = 0.0
    k_sample = 0
    log = traj.event_log
    n_events = len(log)
    ev_idx = 0
    while True:
        t_event = log.times[ev_idx] if ev_idx < n_events else math.inf
        while k_sample < n_times and grid[k_sample] < t_event:
            advance(grid[k_sample], t_cursor)
            t_cursor = grid[k_sample]
            z_out[k_sample] = u - u0 - int_psi
            for f in families:
                obs_out[f][k_sample] = obs[f]
                pred_out[f][k_sample] = int_amp[f]
            k_sample += 1
        if ev_idx >= n_events or k_sample >= n_times:
            break
        advance(t_event, t_cursor)
        t_cursor = t_event
        kind = EventKind(int(log.kinds[ev_idx]))
        j = int(log.sites[ev_idx])
        for comp, off, d in EVENT_DELTAS[kind]:
            jj = (j + off) % n
            row = _COMP_KEY[comp]
            if comp == "b":
                u[row, jj] += d / k
                obs["B"][jj] += inv_k2
            else:
                u[row, jj] += d / h
                obs[COMPARTMENTS[row]][jj] += inv_h2
        if kind == EventKind.TRANSPORT_OUT:
            obs["B_cross_plus"][j] -= inv_k2
            obs["B_cross_minus"][(j + 1) % n] -= inv_k2
        elif kind == EventKind.TRANSPORT_IN:
            obs["B_cross_plus"][(j - 1) % n] -= inv_k2
            obs["B_cross_minus"][j] -= inv_k2
        psi, amp, cross_p, cross_m = evaluate()
        ev_idx += 1

    return z_out, obs_out, pred_out


def martingale_residual(
    traj: Trajectory, params: EpidemicParams, scaling: ScalingParams
) -> MartingaleResidual:
    """Exact centered fluctuation of a logged trajectory on its sample grid.

    Requires the event log: the drift integral is computed exactly as a sum
    over the inter-event intervals on which the state is constant.
    """
    z, _, _ = _sweep_log(traj, params, scaling)
    return MartingaleResidual(
        times=traj.sample_times.copy(),
        z_s=z[:, 0], z_i=z[:, 1], z_r=z[:, 2], z_b=z[:, 3],
    )


@dataclass
class CompensatorCheck:
    """Observed jump sums vs predicted compensator integrals, per replica.

    ``observed[f]`` and ``predicted[f]`` have shape
    (n_replicas, n_times, n_sites) for each family f: the four compartment
    square families plus the two bacteria cross families.  For the square
    families both accumulators are nonnegative and nondecreasing in time;
    the cross accumulators are nonpositive (co-jumps have opposite signs).
    """

    times: np.ndarray
    observed: dict[str, np.ndarray]
    predicted: dict[str, np.ndarray]
    n_replicas: int

    def residuals(self, family: str) -> np.ndarray:
        return self.observed[family] - self.predicted[family]

    def pass_fractions(self, sigma: float = 3.0) -> dict[str, float]:
        """Fraction of (time, site) cells whose replica-mean residual is
        within sigma standard errors of zero, per family."""
        return {
            f: mean_zero_pass_fraction(self.residuals(f), sigma)
            for f in self.observed
        }


def compensator_check(
    replicas: Sequence[Trajectory],
    params: EpidemicParams,
    scaling: ScalingParams,
) -> CompensatorCheck:
    """Accumulate observed squared/crossed jumps and their compensators for
    a batch of logged replicas sharing one sample grid."""
    if not replicas:
        raise ValueError("need at least one replica trajectory")
    grid = replicas[0].sample_times
    obs_all: dict[str, list[np.ndarray]] = {}
    pred_all: dict[str, list[np.ndarray]] = {}
    for traj in replicas:
        if not np.array_equal(traj.sample_times, grid):
            raise ValueError("replicas must share one sample grid")
        _, obs, pred = _sweep_log(traj, params, scaling)
        for f in obs:
            obs_all.setdefault(f, []).append(obs[f])
            pred_all.setdefault(f, []).append(pred[f])
    return CompensatorCheck(
        times=grid.copy(),
        observed={f: np.stack(v) for f, v in obs_all.items()},
        predicted={f: np.stack(v) for f, v in pred_all.items()},
        n_replicas=len(replicas),
    )


def mean_zero_pass_fraction(samples: np.ndarray, sigma: float = 3.0) -> float:
    """Fraction of cells where the replica mean is within ``sigma`` standard
    errors of zero.  ``samples`` has replicas on axis 0; remaining axes are
    cells.  Cells with zero variance pass iff their mean is exactly zero
    (e.g. every residual at t = 0)."""
    n_rep = samples.shape[0]
    if n_rep < 2:
        raise ValueError("need at least two replicas for a standard error")
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n_rep)
    ok = np.where(se > 0.0, np.abs(mean) <= sigma * np.where(se > 0, se, 1.0), mean == 0.0)
    return float(ok.mean())


# ---------------------------------------------------------------------------
# Convergence ladders

@dataclass
class LadderRung:
    """Replica distances for one (n_sites, h, k) triple."""

    n_sites: int
    h: int
    k: int
    distances: np.ndarray
    rounding_error: float  # sup |rounded counts / scale - projected density|
    ball_exits: int  # replicas leaving the a-priori sup-norm ball

    @property
    def median(self) -> float:
        return float(np.median(self.distances))

    @property
    def q25(self) -> float:
        return float(np.quantile(self.distances, 0.25))

    @property
    def q75(self) -> float:
        return float(np.quantile(self.distances, 0.75))


@dataclass
class ConvergenceReport:
    """Distances along a renormalization ladder, one rung per scaling."""

    mode: str
    horizon: float
    replicas: int
    seed: int
    rungs: list[LadderRung]

    @property
    def medians(self) -> np.ndarray:
        return np.array([r.median for r in self.rungs])


def _validate_ladder(ladder: Sequence[tuple[int, int, int]], mode: str):
    if mode not in ("theorem1", "theorem2"):
        raise ValueError(f"mode must be 'theorem1' or 'theorem2', got {mode!r}")
    if len(ladder) == 0:
        raise ValueError("ladder must contain at least one (n, h, k) rung")
    for n, h, k in ladder:
        ScalingParams(n, h, k)  # raises on bad values
    hs = [h for _, h, _ in ladder]
    ks = [k for _, _, k in ladder]
    if any(b < a for a, b in zip(hs, hs[1:])) or any(b < a for a, b in zip(ks, ks[1:])):
        raise ValueError("ladder must have nondecreasing H and K (growing populations)")
    if mode == "theorem1":
        h0, k0 = hs[0], ks[0]
        for h, k in zip(hs[1:], ks[1:]):
            if h * k0 != h0 * k:
                raise ValueError(
                    "constant-ratio regime violated: H/K varies along the ladder "
                    f"({h0}/{k0} vs {h}/{k}); use mode='theorem2' for a shrinking ratio"
                )
    else:
        for (h_a, k_a), (h_b, k_b) in zip(zip(hs, ks), zip(hs[1:], ks[1:])):
            # K/H must not decrease: k_b/h_b >= k_a/h_a
            if k_b * h_a < k_a * h_b:
                raise ValueError(
                    "decoupling regime violated: K/H decreases along the ladder "
                    f"({k_a}/{h_a} -> {k_b}/{h_b})"
                )


def _replica_distance(payload) -> tuple[float, float]:
    """One replica of one rung: (sup distance, sup density).  Top level so a
    process pool can ship it."""
    (state0, horizon, grid, prm, scaling, seed, stream, det_states, comps) = payload
    traj = simulate_ssa(state0, horizon, grid, prm, scaling, seed, stream=stream)
    d = sup_distance(traj, det_states, scaling, compartments=comps)
    sup_u = max(float(np.max(st.rescaled(scaling))) for st in traj.states)
    return d, sup_u


def lln_experiment(
    ladder: Sequence[tuple[int, int, int]],
    initial_fns: Sequence[Callable],
    params: EpidemicParams,
    horizon: float,
    replicas: int,
    seed: int,
    mode: str = "theorem1",
    n_samples: int = 21,
    quadrature_points: int = 16,
    workers: int = 1,
) -> ConvergenceReport:
    """Measure sup-distance between the jump process and its deterministic
    companion along a ladder of renormalization constants.

    In ``theorem1`` mode the ratio H/K must stay constant along the ladder
    and all four compartments enter the distance; in ``theorem2`` mode K/H
    must be nondecreasing (the human population becomes negligible), the
    companion system drops the contamination source, and only the bacteria
    field enters the distance.

    Args:
        ladder: (n_sites, h, k) triples, populations nondecreasing.
        initial_fns: four 1-periodic density profiles (S, I, R, B).
        params: rate constants; transport is rebuilt per rung, preserving
            the continuum advection/diffusion coefficients.
        horizon: time horizon T of the sup.
        replicas: independent runs per rung.
        seed: master seed; replica streams derive from (seed, rung, index).
        mode: "theorem1" or "theorem2".
        n_samples: size of the uniform sample grid approximating the sup.
        quadrature_points: projection accuracy for the initial profiles.
        workers: process count for replica-level parallelism.

    Returns:
        ConvergenceReport with one rung per ladder entry.
    """
    _validate_ladder(ladder, mode)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if len(initial_fns) != 4:
        raise ValueError("expected four initial profile functions (S, I, R, B)")
    grid = np.linspace(0.0, horizon, n_samples) if horizon > 0 else np.array([0.0])
    comps = COMPARTMENTS if mode == "theorem1" else ("B",)
    rungs: list[LadderRung] = []
    for rung_idx, (n, h, k) in enumerate(ladder):
        scaling = ScalingParams(int(n), int(h), int(k))
        prm = params.with_lattice(int(n))
        fields0 = [project(f, int(n), quadrature_points) for f in initial_fns]
        v0 = DeterministicState(*fields0)
        state0 = SystemState.from_densities(*fields0, scaling=scaling)
        rounding = float(np.max(np.abs(state0.rescaled(scaling) - v0.stack())))
        rf = ReactionField(
            prm, hk_ratio=h / k, mode="coupled" if mode == "theorem1" else "decoupled"
        )
        det = integrate(v0, horizon, rf, prm.transport, sample_times=grid)
        c0 = float(np.max(np.abs(v0.stack())))
        ball = c0 * math.exp(growth_constant(rf) * horizon)
        payloads = [
            (state0, horizon, grid, prm, scaling, seed, (rung_idx << 32) + rep, det, comps)
            for rep in range(replicas)
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_replica_distance, payloads))
        else:
            results = [_replica_distance(p) for p in payloads]
        distances = np.array([d for d, _ in results])
        exits = sum(1 for _, sup_u in results if sup_u > ball)
        rungs.append(
            LadderRung(
                n_sites=int(n), h=int(h), k=int(k),
                distances=distances, rounding_error=rounding, ball_exits=exits,
            )
        )
    return ConvergenceReport(
        mode=mode, horizon=horizon, replicas=replicas, seed=seed, rungs=rungs
    )
