"""Small synthetic trajectory corpora for smoke tests and ablations."""

from __future__ import annotations

import numpy as np

from .data import AgentTrack, TrajectorySample, window_samples


def synthetic_tracks(n_linear: int = 16, n_sine: int = 16, length: int = 20, seed: int = 0, scene_id: str = "synthetic") -> list[AgentTrack]:
    """Unit-scale tracks: straight lines and sinusoidal weaves.

    Agents are spread far apart in time so none of them are neighbors.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64) / (length - 1)
    tracks = []
    for i in range(n_linear + n_sine):
        heading = rng.uniform(-np.pi, np.pi)
        speed = rng.uniform(0.5, 1.5)
        rot = np.array([[np.cos(heading), -np.sin(heading)], [np.sin(heading), np.cos(heading)]])
        if i < n_linear:
            local = np.stack([speed * t, np.zeros_like(t)], axis=-1)
        else:
            amp = rng.uniform(0.1, 0.3)
            freq = rng.uniform(0.75, 1.5)
            phase = rng.uniform(-np.pi, np.pi)
            local = np.stack([speed * t, amp * np.sin(2 * np.pi * freq * t + phase)], axis=-1)
        start = rng.uniform(-2.0, 2.0, size=2)
        tracks.append(
            AgentTrack(
                agent_id=i,
                scene_id=scene_id,
                time_index=np.arange(length, dtype=np.int64) + i * (length + 1),
                positions=start + local @ rot.T,
            )
        )
    return tracks


def synthetic_samples(n_linear: int = 16, n_sine: int = 16, t_h: int = 8, t_f: int = 12, seed: int = 0, scene_id: str = "synthetic") -> list[TrajectorySample]:
    """One sample per synthetic agent."""
    return window_samples(synthetic_tracks(n_linear, n_sine, t_h + t_f, seed, scene_id), t_h, t_f, stride=t_h + t_f)


def write_ethucy(tracks: list[AgentTrack], path, frame_step: int = 10) -> None:
    rows = []
    for tr in tracks:
        for ti, (x, y) in zip(tr.time_index, tr.positions):
            rows.append((int(ti) * frame_step, tr.agent_id, x, y))
    rows.sort()
    with open(path, "w") as fh:
        for f, a, x, y in rows:
            fh.write(f"{f}\t{a}\t{x:.6f}\t{y:.6f}\n")
