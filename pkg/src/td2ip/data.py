"""Motion sequences: MSQ text I/O, windowing, reversed samples, synthetic data."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MSQ_MAGIC = "MSQ 1"
PATTERNS = ("wave", "walk", "mixed")
STD_FLOOR = 1e-8


class MSQParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass
class MotionSequence:
    frames: np.ndarray  # T x J x 3, millimetres
    fps: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError(f"frames must be T x J x 3, got {self.frames.shape}")
        if self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError("need at least one frame and one joint")
        if not np.isfinite(self.frames).all():
            raise ValueError("non-finite joint coordinates")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1]


@dataclass
class TrainSample:
    X: np.ndarray    # T_p x J x 3 history
    Y: np.ndarray    # T_f x J x 3 future
    X_r: np.ndarray  # T_p x J x 3, first T_p frames of the reversed window
    Y_r: np.ndarray  # T x J x 3, the whole window reversed

    @property
    def Y_f(self) -> np.ndarray:
        return np.concatenate([self.X, self.Y], axis=0)


# ---------------------------------------------------------------- MSQ I/O


def _fmt(v: float) -> str:
    # nine decimals keeps the round trip under 1e-6 for any millimetre magnitude
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.9f}".rstrip("0").rstrip(".")


def save_msq(seq: MotionSequence, path: str | os.PathLike) -> None:
    T, J, _ = seq.frames.shape
    lines = [MSQ_MAGIC, f"{T} {J} {float(seq.fps)!r}"]
    for frame in seq.frames:
        lines.append(" ".join(_fmt(v) for v in frame.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_msq(path: str | os.PathLike) -> MotionSequence:
    text = Path(path).read_text(encoding="ascii")
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != MSQ_MAGIC:
        raise MSQParseError(1, f"expected header {MSQ_MAGIC!r}")
    if len(lines) < 2:
        raise MSQParseError(2, "missing '<T> <J> <fps>' line")
    head = lines[1].split()
    if len(head) != 3:
        raise MSQParseError(2, "expected '<T> <J> <fps>'")
    try:
        T, J, fps = int(head[0]), int(head[1]), float(head[2])
    except ValueError:
        raise MSQParseError(2, f"bad header values {lines[1]!r}") from None
    if T < 1 or J < 1 or not fps > 0:
        raise MSQParseError(2, f"invalid T={T} J={J} fps={fps}")
    body = lines[2:]
    frames = np.empty((T, J * 3))
    for i in range(T):
        lineno = i + 3
        if i >= len(body):
            # reported at the last line present, where the file ended early
            raise MSQParseError(len(lines), f"header declares {T} frames, file has {len(body)}")
        toks = body[i].split()
        if len(toks) != 3 * J:
            raise MSQParseError(lineno, f"expected {3 * J} values, found {len(toks)}")
        try:
            frames[i] = [float(t) for t in toks]
        except ValueError:
            raise MSQParseError(lineno, "non-numeric token") from None
    if len(body) > T:
        raise MSQParseError(T + 3, f"header declares {T} frames, file has {len(body)}")
    if not np.isfinite(frames).all():
        raise MSQParseError(3, "non-finite coordinate")
    return MotionSequence(frames.reshape(T, J, 3), fps)


def load_dir(directory: str | os.PathLike) -> list[MotionSequence]:
    paths = sorted(Path(directory).glob("*.msq"))
    return [load_msq(p) for p in paths]


# ---------------------------------------------------------------- windows


def make_inverse_sample(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if X.ndim != 3 or Y.ndim != 3 or X.shape[1:] != Y.shape[1:] or X.shape[2] != 3:
        raise ValueError(f"history {X.shape} and future {Y.shape} are not T x J x 3 compatible")
    P = np.concatenate([X, Y], axis=0)
    P_r = P[::-1].copy()
    return P_r[: X.shape[0]].copy(), P_r


def window_split(seq: MotionSequence, t_p: int, t_f: int, stride: int) -> list[TrainSample]:
    if t_p < 1 or t_f < 1 or stride < 1:
        raise ValueError("t_p, t_f and stride must all be >= 1")
    T = t_p + t_f
    out = []
    for s in range(0, seq.n_frames - T + 1, stride):
        X = seq.frames[s: s + t_p].copy()
        Y = seq.frames[s + t_p: s + T].copy()
        X_r, Y_r = make_inverse_sample(X, Y)
        out.append(TrainSample(X, Y, X_r, Y_r))
    return out


def split_sequences(seqs: Sequence, val_fraction: float = 0.2) -> tuple[list, list]:
    """Split by whole sequence on index order: the last fraction is validation."""
    n_val = int(round(len(seqs) * val_fraction))
    if len(seqs) > 1:
        n_val = min(max(n_val, 1), len(seqs) - 1)
    else:
        n_val = 0
    cut = len(seqs) - n_val
    return list(seqs[:cut]), list(seqs[cut:])


@dataclass
class Batch:
    X: np.ndarray    # B x T_p x J x 3
    Y: np.ndarray    # B x T_f x J x 3
    X_r: np.ndarray
    Y_r: np.ndarray

    @property
    def Y_f(self) -> np.ndarray:
        return np.concatenate([self.X, self.Y], axis=1)

    def __len__(self) -> int:
        return self.X.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.Y[idx], self.X_r[idx], self.Y_r[idx])


def stack(samples: Iterable[TrainSample]) -> Batch:
    samples = list(samples)
    if not samples:
        raise ValueError("cannot stack zero samples")
    return Batch(
        np.stack([s.X for s in samples]),
        np.stack([s.Y for s in samples]),
        np.stack([s.X_r for s in samples]),
        np.stack([s.Y_r for s in samples]),
    )


# ---------------------------------------------------------------- normalisation


@dataclass
class NormStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(3), np.ones(3))


def compute_stats(histories: np.ndarray) -> NormStats:
    """Per-axis statistics over training history frames (any leading shape)."""
    flat = np.asarray(histories, dtype=np.float64).reshape(-1, 3)
    return NormStats(flat.mean(axis=0), np.maximum(flat.std(axis=0), STD_FLOOR))


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (x - stats.mean) / stats.std


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * stats.std + stats.mean


def normalize_batch(b: Batch, stats: NormStats) -> Batch:
    return Batch(*(normalize(a, stats) for a in (b.X, b.Y, b.X_r, b.Y_r)))


# ---------------------------------------------------------------- synthetic data


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), *extra]))


def synth_generate(
    seed: int,
    n_sequences: int,
    T: int,
    J: int,
    fps: float = 25.0,
    pattern: str = "mixed",
    amplitude_range: tuple[float, float] = (10.0, 60.0),
    omega_range: tuple[float, float] = (1.5, 6.0),
    drift_range: tuple[float, float] = (2.0, 8.0),
    base_scale: float = 400.0,
) -> list[MotionSequence]:
    """Seeded sinusoid-per-joint sequences, optionally with a root drift.

    Every joint/axis follows ``base + A sin(w t / fps + phi)``. ``walk`` adds a
    constant per-frame drift (random horizontal heading) to every joint;
    ``mixed`` alternates wave and walk by sequence index.
    """
    if min(n_sequences, T, J) < 1:
        raise ValueError("n_sequences, T and J must be >= 1")
    if pattern not in PATTERNS:
        raise ValueError(f"pattern must be one of {PATTERNS}")
    rng = substream(seed, "datagen")
    t = np.arange(T, dtype=np.float64)[:, None, None]
    seqs = []
    for i in range(n_sequences):
        base = rng.uniform(-base_scale, base_scale, size=(J, 3))
        amp = rng.uniform(*amplitude_range, size=(J, 3))
        omega = rng.uniform(*omega_range, size=(J, 3))
        phase = rng.uniform(0.0, 2 * np.pi, size=(J, 3))
        heading = rng.uniform(0.0, 2 * np.pi)
        speed = rng.uniform(*drift_range)
        frames = base + amp * np.sin(omega * t / fps + phase)
        kind = pattern if pattern != "mixed" else PATTERNS[i % 2]
        if kind == "walk":
            drift = speed * np.array([np.cos(heading), 0.0, np.sin(heading)])
            frames = frames + t * drift
        seqs.append(MotionSequence(frames, fps))
    return seqs

