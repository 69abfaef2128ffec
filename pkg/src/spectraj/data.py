"""Annotation parsing, resampling, windowing and dataset splits.

Two raw formats are understood:

* ETH-UCY: ``frame agent_id x y`` (whitespace separated, meters).
* SDD: ``track_id xmin ymin xmax ymax frame lost occluded generated label``
  (pixels; positions are bounding-box centers).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ConfigError, DataError, ParseError

ETHUCY_SCENES = ("eth", "hotel", "univ", "zara1", "zara2")


@dataclass(frozen=True)
class RawAnnotation:
    frame_id: int
    agent_id: int
    position: tuple[float, float]
    agent_label: str = ""


@dataclass(frozen=True)
class AgentTrack:
    agent_id: int
    scene_id: str
    time_index: np.ndarray  # (T,) int64, strictly increasing
    positions: np.ndarray  # (T, 2) float64
    label: str = ""

    def __len__(self) -> int:
        return len(self.time_index)


@dataclass(frozen=True)
class TrajectorySample:
    """One agent window, translated so the last observed point is the origin."""

    observation: np.ndarray  # (t_h, 2)
    future: np.ndarray  # (t_f, 2)
    neighbor_observations: tuple[np.ndarray, ...]
    scene_id: str
    anchor: np.ndarray  # (2,) absolute position of the last observed point
    agent_id: int = -1
    start_index: int = 0

    @property
    def t_h(self) -> int:
        return self.observation.shape[0]

    @property
    def t_f(self) -> int:
        return self.future.shape[0]


class SplitProtocol(str, Enum):
    LEAVE_ONE_OUT = "leave_one_out"
    FIXED_SPLIT = "fixed_split"


@dataclass(frozen=True)
class DatasetSplit:
    train_scenes: tuple[str, ...]
    test_scenes: tuple[str, ...]
    protocol: SplitProtocol = SplitProtocol.LEAVE_ONE_OUT


# --------------------------------------------------------------------------
# parsing


def _lines(stream: TextIO | str | Path) -> Iterable[tuple[int, str]]:
    if isinstance(stream, (str, Path)):
        with open(stream) as fh:
            yield from enumerate(fh.read().splitlines(), start=1)
    else:
        yield from enumerate(stream.read().splitlines(), start=1)


def _to_float(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric value {token!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r}", lineno)
    return value


def _to_int(token: str, lineno: int) -> int:
    value = _to_float(token, lineno)
    if value != int(value):
        raise ParseError(f"expected an integer, got {token!r}", lineno)
    return int(value)


def _group_tracks(rows: Sequence[RawAnnotation], scene_id: str, frame_step: int | None) -> list[AgentTrack]:
    if not rows:
        return []
    frames = sorted({r.frame_id for r in rows})
    base = frames[0]
    if frame_step is None:
        diffs = [b - a for a, b in zip(frames, frames[1:])]
        frame_step = reduce(math.gcd, diffs, 0) or 1
    elif frame_step < 1:
        raise ConfigError(f"frame_step must be >= 1, got {frame_step}")

    per_agent: dict[int, list[RawAnnotation]] = defaultdict(list)
    for r in rows:
        per_agent[r.agent_id].append(r)

    tracks = []
    for agent_id in sorted(per_agent):
        agent_rows = per_agent[agent_id]
        fr = [r.frame_id for r in agent_rows]
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise DataError(f"scene {scene_id!r}: frames of agent {agent_id} are not strictly increasing")
        offsets = np.array([f - base for f in fr], dtype=np.int64)
        if np.any(offsets % frame_step):
            raise DataError(f"scene {scene_id!r}: agent {agent_id} has frames off the {frame_step}-frame grid")
        tracks.append(
            AgentTrack(
                agent_id=agent_id,
                scene_id=scene_id,
                time_index=offsets // frame_step,
                positions=np.array([r.position for r in agent_rows], dtype=np.float64),
                label=agent_rows[0].agent_label,
            )
        )
    return tracks


def parse_ethucy(stream: TextIO | str | Path, scene_id: str = "", frame_step: int | None = None) -> list[AgentTrack]:
    """Parse an ETH-UCY style annotation file into per-agent tracks.

    Frames are mapped to consecutive time indices using ``frame_step``; when
    it is ``None`` the step is the gcd of all frame gaps in the file (10 for
    the usual 2.5 Hz ETH-UCY exports).
    """
    rows = []
    for lineno, line in _lines(stream):
        parts = line.replace(",", " ").split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 4:
            raise ParseError(f"expected 4 columns, got {len(parts)}", lineno)
        frame = _to_int(parts[0], lineno)
        agent = _to_int(parts[1], lineno)
        if frame < 0:
            raise ParseError(f"negative frame id {frame}", lineno)
        x, y = _to_float(parts[2], lineno), _to_float(parts[3], lineno)
        rows.append(RawAnnotation(frame, agent, (x, y)))
    _check_unique(rows)
    return _group_tracks(rows, scene_id, frame_step)


def parse_sdd(stream: TextIO | str | Path, scene_id: str = "", frame_step: int | None = 1) -> list[AgentTrack]:
    """Parse a Stanford Drone Dataset annotation file.

    Positions are bounding-box centers in pixels and rows flagged ``lost``
    are dropped. Time indices are raw video frames by default; follow with
    :func:`resample_track` to reach 2.5 Hz.
    """
    rows = []
    for lineno, line in _lines(stream):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 10:
            raise ParseError(f"expected 10 columns, got {len(parts)}", lineno)
        track = _to_int(parts[0], lineno)
        xmin, ymin, xmax, ymax = (_to_float(p, lineno) for p in parts[1:5])
        frame = _to_int(parts[5], lineno)
        lost = _to_int(parts[6], lineno)
        _to_int(parts[7], lineno)
        _to_int(parts[8], lineno)
        if frame < 0:
            raise ParseError(f"negative frame id {frame}", lineno)
        if lost == 1:
            continue
        label = parts[9].strip('"')
        rows.append(RawAnnotation(frame, track, ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0), label))
    _check_unique(rows)
    return _group_tracks(rows, scene_id, frame_step)


def _check_unique(rows: Sequence[RawAnnotation]) -> None:
    seen = set()
    for r in rows:
        key = (r.frame_id, r.agent_id)
        if key in seen:
            raise DataError(f"duplicate annotation for agent {r.agent_id} at frame {r.frame_id}")
        seen.add(key)


def resample_stride(source_fps: float, target_fps: float) -> int:
    if source_fps <= 0 or target_fps <= 0:
        raise ConfigError("frame rates must be positive")
    ratio = source_fps / target_fps
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > 1e-9:
        raise ConfigError(f"source fps {source_fps} is not an integer multiple of target fps {target_fps}")
    return stride


def resample_track(track: AgentTrack, source_fps: float, target_fps: float) -> AgentTrack:
    """Keep every ``source_fps / target_fps``-th time index.

    Selection is aligned to the global time grid (``index % stride == 0``)
    so that co-present agents stay synchronized after resampling.
    """
    stride = resample_stride(source_fps, target_fps)
    if stride == 1:
        return track
    keep = track.time_index % stride == 0
    return AgentTrack(
        agent_id=track.agent_id,
        scene_id=track.scene_id,
        time_index=track.time_index[keep] // stride,
        positions=track.positions[keep],
        label=track.label,
    )


# --------------------------------------------------------------------------
# windowing


def _contiguous_starts(time_index: np.ndarray, length: int, stride: int) -> list[int]:
    n = len(time_index)
    starts = []
    for i in range(0, n - length + 1, stride):
        if time_index[i + length - 1] - time_index[i] == length - 1:
            starts.append(i)
    return starts


def window_samples(tracks: Sequence[AgentTrack], t_h: int, t_f: int, stride: int = 1) -> list[TrajectorySample]:
    """Slide a ``t_h + t_f`` window over each track.

    Only windows with contiguous time indices are emitted. Neighbors are the
    other agents of the same scene present at every observed step.
    """
    if t_h < 1 or t_f < 1 or stride < 1:
        raise ConfigError("t_h, t_f and stride must all be >= 1")
    length = t_h + t_f

    lookup: dict[str, list[tuple[AgentTrack, dict[int, int]]]] = defaultdict(list)
    for tr in tracks:
        lookup[tr.scene_id].append((tr, {int(t): i for i, t in enumerate(tr.time_index)}))

    samples = []
    for tr in tracks:
        for i in _contiguous_starts(tr.time_index, length, stride):
            window = tr.positions[i : i + length]
            anchor = window[t_h - 1].copy()
            t0 = int(tr.time_index[i])
            obs_steps = range(t0, t0 + t_h)
            neighbors = []
            for other, index_of in lookup[tr.scene_id]:
                if other is tr or other.agent_id == tr.agent_id:
                    continue
                rows = [index_of.get(t) for t in obs_steps]
                if any(r is None for r in rows):
                    continue
                neighbors.append(other.positions[rows] - anchor)
            samples.append(
                TrajectorySample(
                    observation=window[:t_h] - anchor,
                    future=window[t_h:] - anchor,
                    neighbor_observations=tuple(neighbors),
                    scene_id=tr.scene_id,
                    anchor=anchor,
                    agent_id=tr.agent_id,
                    start_index=t0,
                )
            )
    return samples


def expected_window_count(length: int, t_h: int, t_f: int, stride: int = 1) -> int:
    return max(0, (length - t_h - t_f) // stride + 1)


# --------------------------------------------------------------------------
# splits


def read_split_manifest(path: str | Path) -> tuple[list[str], list[str]]:
    sections: dict[str, list[str]] = {"train": [], "test": []}
    current = None
    for lineno, line in _lines(path):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if text.endswith(":") and text[:-1].strip().lower() in sections:
            current = text[:-1].strip().lower()
            continue
        if current is None:
            raise ParseError("scene listed before a 'train:' or 'test:' header", lineno)
        sections[current].append(text)
    return sections["train"], sections["test"]


def make_split(
    scenes: Sequence[str],
    protocol: SplitProtocol | str = SplitProtocol.LEAVE_ONE_OUT,
    test_scene: str | Path | None = None,
) -> DatasetSplit:
    """Build a train/test split.

    For ``leave_one_out`` ``test_scene`` names the held-out scene; for
    ``fixed_split`` it is the path to a manifest with ``train:`` and
    ``test:`` sections.
    """
    try:
        protocol = SplitProtocol(protocol)
    except ValueError:
        raise ConfigError(f"unknown split protocol {protocol!r}") from None
    known = list(dict.fromkeys(scenes))

    if protocol is SplitProtocol.LEAVE_ONE_OUT:
        if test_scene not in known:
            raise ConfigError(f"unknown test scene {test_scene!r}; available: {known}")
        train = tuple(s for s in known if s != test_scene)
        return DatasetSplit(train, (str(test_scene),), protocol)

    if test_scene is None or not Path(test_scene).is_file():
        raise ConfigError(f"split manifest {test_scene!r} not found")
    train, test = read_split_manifest(test_scene)
    unknown = [s for s in train + test if s not in known]
    if unknown:
        raise ConfigError(f"manifest references unknown scenes {unknown}")
    if set(train) & set(test):
        raise ConfigError("train and test scenes overlap in manifest")
    return DatasetSplit(tuple(train), tuple(test), protocol)


def load_scene(path: str | Path, fmt: str, source_fps: float | None = None, target_fps: float = 2.5) -> list[AgentTrack]:
    """Parse and resample one annotation file; the scene id is the file stem."""
    path = Path(path)
    scene = path.stem
    if fmt == "ethucy":
        tracks = parse_ethucy(path, scene)
        source_fps = target_fps if source_fps is None else source_fps
    elif fmt == "sdd":
        tracks = parse_sdd(path, scene)
        source_fps = 30.0 if source_fps is None else source_fps
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    return [resample_track(t, source_fps, target_fps) for t in tracks]


@dataclass
class SceneCollection:
    tracks: dict[str, list[AgentTrack]] = field(default_factory=dict)

    @property
    def scenes(self) -> list[str]:
        return list(self.tracks)

    def samples(self, scenes: Iterable[str], t_h: int, t_f: int, stride: int = 1) -> list[TrajectorySample]:
        out = []
        for s in scenes:
            out.extend(window_samples(self.tracks[s], t_h, t_f, stride))
        return out


def load_dataset(path: str | Path, fmt: str, source_fps: float | None = None, target_fps: float = 2.5) -> SceneCollection:
    """Load one annotation file or every ``*.txt`` file of a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".txt", ".csv") and p.is_file())
    elif path.is_file():
        files = [path]
    else:
        raise ConfigError(f"dataset path {str(path)!r} does not exist")
    return SceneCollection({f.stem: load_scene(f, fmt, source_fps, target_fps) for f in files})
