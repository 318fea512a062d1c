"""Round trips, corruption detection, replay, and a pinned regression run."""

import hashlib

import numpy as np
import pytest

from sirb_lattice.io import (
    CorruptFileError,
    read_trajectory,
    replay,
    replay_trajectory,
    write_trajectory,
)
from sirb_lattice.lattice import TransportCoefficients
from sirb_lattice.stochastic import (
    EpidemicParams,
    Event,
    EventKind,
    EventLog,
    ScalingParams,
    SystemState,
    apply_event,
    simulate_ssa,
)

# Terminal state of the pinned regression run below; established at first
# implementation and must never drift.
GOLDEN_TERMINAL_SHA256 = (
    "cd5cfb7c0a2eadcb7593e5a3ce9f3c3b24310c738593a5610f110cc1fda587c5"
)


def make_params(n=4):
    return EpidemicParams(
        mu=0.2, alpha=0.15, gamma=0.6, rho=0.3, beta=1.2, p_over_w=0.8,
        mu_b=0.5, transport=TransportCoefficients(0.5, 0.7, n),
    )


def sample_run(record_events=True, seed=31):
    params = make_params()
    scaling = ScalingParams(4, 50, 50)
    state = SystemState.from_counts(
        np.full(4, 45), np.full(4, 5), np.zeros(4, int), np.full(4, 25)
    )
    traj = simulate_ssa(state, 1.0, np.linspace(0, 1, 5), params, scaling,
                        seed=seed, record_events=record_events)
    return traj, params, scaling


# ---------------------------------------------------------------------------
# Round trips

def test_write_read_round_trip(tmp_path):
    traj, params, scaling = sample_run()
    manifest = write_trajectory(tmp_path, traj, params, scaling,
                                config_echo={"note": "test"})
    loaded, manifest2 = read_trajectory(tmp_path)
    assert np.array_equal(loaded.sample_times, traj.sample_times)
    assert len(loaded.states) == len(traj.states)
    for a, b in zip(loaded.states, traj.states):
        assert a == b
    assert loaded.event_log == traj.event_log
    assert manifest2.seed == traj.seed
    assert manifest2.config == {"note": "test"}
    assert manifest2.version == manifest.version
    assert set(manifest.file_hashes) == {"trajectory.csv", "snapshots.bin", "events.bin"}


def test_round_trip_without_event_log(tmp_path):
    traj, params, scaling = sample_run(record_events=False)
    write_trajectory(tmp_path, traj, params, scaling)
    loaded, _ = read_trajectory(tmp_path)
    assert loaded.event_log is None
    assert loaded.final == traj.final


def test_manifest_echoes_derived_transport(tmp_path):
    traj, params, scaling = sample_run()
    manifest = write_trajectory(tmp_path, traj, params, scaling)
    tc = params.transport
    assert manifest.params["nu"] == pytest.approx(tc.nu)
    assert manifest.params["diffusion"] == pytest.approx(tc.diffusion)
    assert manifest.rng_algorithm == "philox4x64"


def test_truncated_events_detected(tmp_path):
    traj, params, scaling = sample_run()
    write_trajectory(tmp_path, traj, params, scaling)
    path = tmp_path / "events.bin"
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 5])
    with pytest.raises(CorruptFileError):
        read_trajectory(tmp_path)


def test_tampered_csv_detected(tmp_path):
    traj, params, scaling = sample_run()
    write_trajectory(tmp_path, traj, params, scaling)
    path = tmp_path / "trajectory.csv"
    text = path.read_text().replace("0.9", "0.8", 1)
    path.write_text(text)
    with pytest.raises(CorruptFileError, match="hash"):
        read_trajectory(tmp_path)


def test_missing_manifest_detected(tmp_path):
    with pytest.raises(CorruptFileError, match="manifest"):
        read_trajectory(tmp_path)


def test_wrong_magic_detected(tmp_path):
    traj, params, scaling = sample_run()
    write_trajectory(tmp_path, traj, params, scaling)
    # swap the two binary payloads: hashes still listed, magic now wrong
    ev = (tmp_path / "events.bin").read_bytes()
    sn = (tmp_path / "snapshots.bin").read_bytes()
    (tmp_path / "events.bin").write_bytes(sn)
    (tmp_path / "snapshots.bin").write_bytes(ev)
    with pytest.raises(CorruptFileError):
        read_trajectory(tmp_path)


def test_event_frame_layout(tmp_path):
    # magic (8 bytes) + version (1) + 13-byte frames
    traj, params, scaling = sample_run()
    write_trajectory(tmp_path, traj, params, scaling)
    raw = (tmp_path / "events.bin").read_bytes()
    assert raw[:8] == b"SIRBEVTS"
    assert raw[8] == 1
    assert (len(raw) - 9) % 13 == 0
    assert (len(raw) - 9) // 13 == len(traj.event_log)


# ---------------------------------------------------------------------------
# Replay

def test_replay_empty_log_returns_initial():
    state = SystemState.from_counts(*(np.full(4, 3) for _ in range(4)))
    log = EventLog(np.empty(0), np.empty(0, dtype=np.uint8),
                   np.empty(0, dtype=np.uint32))
    assert replay(state, log) == state


def test_replay_single_event():
    state = SystemState.from_counts(*(np.full(4, 3) for _ in range(4)))
    log = EventLog(np.array([0.1]),
                   np.array([int(EventKind.RECOVERY)], dtype=np.uint8),
                   np.array([2], dtype=np.uint32))
    assert replay(state, log) == apply_event(state, Event(EventKind.RECOVERY, 2))


def test_replay_reproduces_simulated_snapshots():
    traj, params, scaling = sample_run()
    final = replay(traj.initial, traj.event_log)
    assert final == traj.final
    snaps = replay_trajectory(traj.initial, traj.event_log, traj.sample_times)
    for a, b in zip(snaps, traj.states):
        assert a == b


def test_replay_detects_mismatched_log():
    state = SystemState.from_counts(
        np.full(4, 3), np.zeros(4, int), np.zeros(4, int), np.zeros(4, int)
    )
    log = EventLog(np.array([0.1]),
                   np.array([int(EventKind.BACTERIA_DEATH)], dtype=np.uint8),
                   np.array([0], dtype=np.uint32))
    with pytest.raises(ValueError):
        replay(state, log)


def test_replayed_round_trip_matches_terminal_state(tmp_path):
    traj, params, scaling = sample_run()
    write_trajectory(tmp_path, traj, params, scaling)
    loaded, manifest = read_trajectory(tmp_path)
    initial = SystemState.from_counts(
        *(np.array(manifest.initial_counts[c]) for c in "sirb")
    )
    assert replay(initial, loaded.event_log) == traj.final


# ---------------------------------------------------------------------------
# Pinned regression

def test_golden_regression_terminal_state():
    params = make_params()
    scaling = ScalingParams(4, 50, 50)
    state = SystemState.from_counts(
        np.full(4, 45), np.full(4, 5), np.zeros(4, int), np.full(4, 25)
    )
    traj = simulate_ssa(state, 1.0, [0.0, 1.0], params, scaling,
                        seed=987654321, record_events=True)
    blob = b"".join(traj.final.counts(c).astype("<i8").tobytes() for c in "sirb")
    assert hashlib.sha256(blob).hexdigest() == GOLDEN_TERMINAL_SHA256
    # and the log replays to the same state
    assert replay(state, traj.event_log) == traj.final
