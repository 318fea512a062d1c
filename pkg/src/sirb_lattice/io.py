"""Persistence and replay.

One run directory holds:

    manifest.json    config echo, seed, version, timestamps, file hashes
    trajectory.csv   rescaled densities, columns (time, site, S, I, R, B)
    snapshots.bin    integer counts at sample times (exact replay source)
    events.bin       optional full event log
    report_*.csv     diagnostics outputs

Sites are reported 1-based in CSV output. Binary formats, little-endian:

    events.bin     magic "SIRBEVTS", version byte 0x01, then repeated
                   13-byte frames: f64 time, u8 kind, u32 site
    snapshots.bin  magic "SIRBSNAP", version byte 0x01, u32 n_sites,
                   u32 n_samples, then per sample: f64 time followed by
                   4 * n_sites u64 counts (S, I, R, B blocks)

Every emitted file is hashed (sha256) into the manifest; reads verify the
hashes and fail loudly on any mismatch or truncation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .deterministic import DeterministicState
from .diagnostics import CompensatorCheck, ConvergenceReport, MartingaleResidual
from .stochastic import (
    EpidemicParams,
    Event,
    EventKind,
    EventLog,
    ScalingParams,
    SystemState,
    Trajectory,
    apply_event,
)

__all__ = [
    "CorruptFileError",
    "RunManifest",
    "write_trajectory",
    "read_trajectory",
    "write_deterministic_csv",
    "write_convergence_report",
    "write_martingale_csv",
    "write_compensator_csv",
    "replay",
    "replay_trajectory",
    "sha256_file",
]

EVENTS_MAGIC = b"SIRBEVTS"
SNAPSHOTS_MAGIC = b"SIRBSNAP"
FORMAT_VERSION = 1
_EVENT_DTYPE = np.dtype([("time", "<f8"), ("kind", "u1"), ("site", "<u4")])


class CorruptFileError(RuntimeError):
    """A persisted file failed its hash, magic, or length check."""


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to reproduce and verify a run directory."""

    seed: int
    version: str
    created: str
    config: dict
    scaling: dict
    params: dict
    initial_counts: dict
    file_hashes: dict = field(default_factory=dict)
    rng_algorithm: str = "philox4x64"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def verify(self, directory: Path):
        """Check every recorded hash against the file on disk."""
        for name, expected in self.file_hashes.items():
            path = Path(directory) / name
            if not path.exists():
                raise CorruptFileError(f"{name} listed in manifest but missing on disk")
            actual = sha256_file(path)
            if actual != expected:
                raise CorruptFileError(
                    f"{name} failed its hash check (expected {expected[:12]}..., "
                    f"got {actual[:12]}...)"
                )


def _params_dict(params: EpidemicParams) -> dict:
    tc = params.transport
    return {
        "mu": params.mu, "alpha": params.alpha, "gamma": params.gamma,
        "rho": params.rho, "beta": params.beta, "p_over_w": params.p_over_w,
        "mu_b": params.mu_b, "ell": tc.ell, "p_out": tc.p_out,
        # derived, echoed for the record
        "bias": tc.bias, "nu": tc.nu, "diffusion": tc.diffusion,
    }


def _write_trajectory_csv(path: Path, traj: Trajectory, scaling: ScalingParams):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "site", "S", "I", "R", "B"])
        for t, state in zip(traj.sample_times, traj.states):
            dens = state.rescaled(scaling)
            for j in range(state.n_sites):
                writer.writerow(
                    [f"{t:.17g}", j + 1]
                    + [f"{dens[c, j]:.17g}" for c in range(4)]
                )


def _write_snapshots_bin(path: Path, traj: Trajectory):
    n = traj.initial.n_sites
    with open(path, "wb") as fh:
        fh.write(SNAPSHOTS_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<II", n, len(traj.states)))
        for t, state in zip(traj.sample_times, traj.states):
            fh.write(struct.pack("<d", float(t)))
            for comp in ("s", "i", "r", "b"):
                fh.write(state.counts(comp).astype("<u8").tobytes())


def _read_snapshots_bin(path: Path) -> tuple[np.ndarray, list[SystemState]]:
    raw = Path(path).read_bytes()
    head = len(SNAPSHOTS_MAGIC) + 1 + 8
    if len(raw) < head or raw[: len(SNAPSHOTS_MAGIC)] != SNAPSHOTS_MAGIC:
        raise CorruptFileError(f"{path} is not a snapshots file")
    version = raw[len(SNAPSHOTS_MAGIC)]
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"unsupported snapshots format version {version}")
    n, n_samples = struct.unpack_from("<II", raw, len(SNAPSHOTS_MAGIC) + 1)
    frame = 8 + 4 * n * 8
    if len(raw) != head + n_samples * frame:
        raise CorruptFileError(f"{path} is truncated or padded")
    times = np.empty(n_samples)
    states = []
    off = head
    for idx in range(n_samples):
        (times[idx],) = struct.unpack_from("<d", raw, off)
        off += 8
        comps = []
        for _ in range(4):
            comps.append(
                np.frombuffer(raw, dtype="<u8", count=n, offset=off).astype(np.int64)
            )
            off += n * 8
        states.append(SystemState(*comps))
    return times, states


def _write_events_bin(path: Path, log: EventLog):
    arr = np.empty(len(log), dtype=_EVENT_DTYPE)
    arr["time"] = log.times
    arr["kind"] = log.kinds
    arr["site"] = log.sites
    with open(path, "wb") as fh:
        fh.write(EVENTS_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(arr.tobytes())


def _read_events_bin(path: Path) -> EventLog:
    raw = Path(path).read_bytes()
    head = len(EVENTS_MAGIC) + 1
    if len(raw) < head or raw[: len(EVENTS_MAGIC)] != EVENTS_MAGIC:
        raise CorruptFileError(f"{path} is not an event log file")
    version = raw[len(EVENTS_MAGIC)]
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"unsupported event log format version {version}")
    body = len(raw) - head
    if body % _EVENT_DTYPE.itemsize != 0:
        raise CorruptFileError(f"{path} is truncated (partial event frame)")
    arr = np.frombuffer(raw, dtype=_EVENT_DTYPE, offset=head)
    return EventLog(
        times=arr["time"].astype(np.float64),
        kinds=arr["kind"].astype(np.uint8),
        sites=arr["site"].astype(np.uint32),
    )


def write_trajectory(
    directory,
    traj: Trajectory,
    params: EpidemicParams,
    scaling: ScalingParams,
    config_echo: Optional[dict] = None,
) -> RunManifest:
    """Persist one trajectory into a run directory (created if needed).

    Returns the manifest, which is also written as manifest.json.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_trajectory_csv(directory / "trajectory.csv", traj, scaling)
    _write_snapshots_bin(directory / "snapshots.bin", traj)
    hashes = {
        "trajectory.csv": sha256_file(directory / "trajectory.csv"),
        "snapshots.bin": sha256_file(directory / "snapshots.bin"),
    }
    if traj.event_log is not None:
        _write_events_bin(directory / "events.bin", traj.event_log)
        hashes["events.bin"] = sha256_file(directory / "events.bin")
    manifest = RunManifest(
        seed=traj.seed,
        version=__version__,
        created=datetime.now(timezone.utc).isoformat(),
        config=config_echo or {},
        scaling={"n_sites": scaling.n_sites, "h": scaling.h, "k": scaling.k},
        params=_params_dict(params),
        initial_counts={
            c: traj.initial.counts(c).tolist() for c in ("s", "i", "r", "b")
        },
        file_hashes=hashes,
        rng_algorithm=traj.rng_algorithm,
    )
    (directory / "manifest.json").write_text(manifest.to_json())
    return manifest


def read_trajectory(directory) -> tuple[Trajectory, RunManifest]:
    """Load a persisted run after verifying all file hashes."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CorruptFileError(f"no manifest.json in {directory}")
    manifest = RunManifest.from_json(manifest_path.read_text())
    manifest.verify(directory)
    times, states = _read_snapshots_bin(directory / "snapshots.bin")
    log = None
    if (directory / "events.bin").exists():
        log = _read_events_bin(directory / "events.bin")
    traj = Trajectory(
        sample_times=times,
        states=states,
        event_log=log,
        seed=manifest.seed,
        rng_algorithm=manifest.rng_algorithm,
    )
    return traj, manifest


def write_deterministic_csv(
    path, times: Sequence[float], states: Sequence[DeterministicState]
):
    """Deterministic solutions share the trajectory CSV schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "site", "S", "I", "R", "B"])
        for t, state in zip(times, states):
            y = state.stack()
            for j in range(state.n_sites):
                writer.writerow(
                    [f"{t:.17g}", j + 1] + [f"{y[c, j]:.17g}" for c in range(4)]
                )


def write_convergence_report(directory, report: ConvergenceReport):
    """Emit report_distances.csv (rung, replica, distance) and
    report_summary.csv (per-rung quartiles)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "report_distances.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rung", "n_sites", "h", "k", "replica", "distance"])
        for idx, rung in enumerate(report.rungs):
            for rep, d in enumerate(rung.distances):
                writer.writerow([idx, rung.n_sites, rung.h, rung.k, rep, f"{d:.17g}"])
    with open(directory / "report_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["rung", "n_sites", "h", "k", "median", "q25", "q75",
             "rounding_error", "ball_exits"]
        )
        for idx, rung in enumerate(report.rungs):
            writer.writerow(
                [idx, rung.n_sites, rung.h, rung.k,
                 f"{rung.median:.17g}", f"{rung.q25:.17g}", f"{rung.q75:.17g}",
                 f"{rung.rounding_error:.17g}", rung.ball_exits]
            )


def write_martingale_csv(path, residual: MartingaleResidual):
    """Residual fields keyed by (time, site, compartment)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "site", "compartment", "z"])
        for name in ("S", "I", "R", "B"):
            z = residual.component(name)
            for ti, t in enumerate(residual.times):
                for j in range(z.shape[1]):
                    writer.writerow([f"{t:.17g}", j + 1, name, f"{z[ti, j]:.17g}"])


def write_compensator_csv(path, check: CompensatorCheck, sigma: float = 3.0):
    """Replica-mean residuals and z-scores keyed by (time, site, family)."""
    n_rep = check.n_replicas
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "site", "family", "mean_residual", "stderr", "zscore"])
        for fam in check.observed:
            res = check.residuals(fam)
            mean = res.mean(axis=0)
            se = res.std(axis=0, ddof=1) / np.sqrt(n_rep)
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se > 0, mean / np.where(se > 0, se, 1.0), 0.0)
            for ti, t in enumerate(check.times):
                for j in range(mean.shape[1]):
                    writer.writerow(
                        [f"{t:.17g}", j + 1, fam,
                         f"{mean[ti, j]:.17g}", f"{se[ti, j]:.17g}", f"{z[ti, j]:.6g}"]
                    )


# ---------------------------------------------------------------------------
# Replay

def replay(initial: SystemState, log: EventLog) -> SystemState:
    """Fold the event log over the initial state; equals the simulator's
    terminal state exactly.  Raises if the log does not fit the state."""
    state = initial.copy()
    n = state.n_sites
    for k, j in zip(log.kinds, log.sites):
        if j >= n:
            raise ValueError(f"event site {j} outside lattice of {n} sites")
        state = apply_event(state, Event(EventKind(int(k)), int(j)))
    return state


def replay_trajectory(
    initial: SystemState, log: EventLog, sample_times: Sequence[float]
) -> list[SystemState]:
    """Replay with snapshots at the given times (right-continuous, matching
    the simulator's convention)."""
    grid = np.asarray(sample_times, dtype=float)
    state = initial.copy()
    out: list[SystemState] = []
    k_sample = 0
    for t, k, j in zip(log.times, log.kinds, log.sites):
        while k_sample < grid.size and grid[k_sample] < t:
            out.append(state.copy())
            k_sample += 1
        state = apply_event(state, Event(EventKind(int(k)), int(j)))
    while k_sample < grid.size:
        out.append(state.copy())
        k_sample += 1
    return out
