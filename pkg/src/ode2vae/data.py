"""Synthetic sequence generators and the O2VD binary container.

O2VD layout (all little-endian)::

    magic      4 bytes  b"O2VD"
    version    u32      1
    n_seq      u32
    seq_len    u32
    rank       u32
    dims       u32[rank]   frame shape, e.g. (16,) or (14, 14, 1)
    flags      u32         bit0: mask present, bit1: sensor data
    then per sequence:
      times    f32[seq_len]
      mask     u8[seq_len]            (only with bit0)
      frames   f32[seq_len * prod(dims)], row-major
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

MAGIC = b"O2VD"
VERSION = 1
FLAG_MASK = 1
FLAG_SENSOR = 2

PENDULUM_G_OVER_L = 9.81
PENDULUM_DAMPING = 0.1


class DatasetFormatError(ValueError):
    pass


@dataclass
class SequenceBatch:
    """Trajectories sharing a frame shape.

    ``times`` is ``(n, L)``, ``frames`` ``(n, L, D)`` and ``mask`` ``(n, L)``
    boolean (True = observed). ``frame_shape`` is the unflattened frame shape.
    """

    times: np.ndarray
    frames: np.ndarray
    mask: np.ndarray
    frame_shape: tuple
    sensor: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times)
        self.frames = np.asarray(self.frames)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.frame_shape = tuple(int(x) for x in self.frame_shape)
        n, L = self.times.shape
        if self.frames.shape[:2] != (n, L) or self.mask.shape != (n, L):
            raise ValueError("times, frames and mask disagree on (n_sequences, seq_len)")
        if self.frames.shape[2] != int(np.prod(self.frame_shape)):
            raise ValueError(f"frame width {self.frames.shape[2]} != prod{self.frame_shape}")
        if L > 1 and not np.all(np.diff(self.times, axis=1) > 0):
            raise ValueError("times must be strictly increasing within each sequence")

    @property
    def n_sequences(self) -> int:
        return self.times.shape[0]

    @property
    def seq_len(self) -> int:
        return self.times.shape[1]

    @property
    def frame_dim(self) -> int:
        return self.frames.shape[2]

    def subset(self, idx) -> "SequenceBatch":
        idx = np.asarray(idx)
        return SequenceBatch(
            self.times[idx], self.frames[idx], self.mask[idx], self.frame_shape, self.sensor, dict(self.meta)
        )

    def truncate(self, length: int) -> "SequenceBatch":
        return SequenceBatch(
            self.times[:, :length], self.frames[:, :length], self.mask[:, :length],
            self.frame_shape, self.sensor, dict(self.meta),
        )

    def check_window(self, m: int):
        if self.seq_len < m:
            raise ValueError(f"sequences of length {self.seq_len} are shorter than the window m={m}")
        if not np.all(self.mask[:, :m]):
            raise ValueError(f"the first {m} frames of every sequence must be observed")


def sequence_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Per-sequence seed derived from (seed, index); independent of worker scheduling."""
    return np.random.SeedSequence([int(seed), int(index)])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ODE2VAE_THREADS", "1")))
    except ValueError:
        return 1


def _map_sequences(fn, n: int):
    workers = _workers()
    if workers == 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


# -- pendulum -------------------------------------------------------------

def _pendulum_rhs(theta, omega, g_over_l, damping):
    return omega, -g_over_l * np.sin(theta) - damping * omega


def simulate_pendulum(theta0, omega0, times, damping=PENDULUM_DAMPING, g_over_l=PENDULUM_G_OVER_L, h=1e-3):
    """RK4 solution of theta'' = -(g/l) sin(theta) - c theta' sampled at ``times``.

    Returns ``(theta, omega)`` arrays. Steps are at most ``h`` and land exactly
    on every requested time.
    """
    times = np.asarray(times, dtype=np.float64)
    theta, omega = float(theta0), float(omega0)
    out_th = np.empty(times.size)
    out_om = np.empty(times.size)
    out_th[0], out_om[0] = theta, omega
    for k in range(1, times.size):
        span = times[k] - times[k - 1]
        n = max(1, int(np.ceil(span / h - 1e-9)))
        dt = span / n
        for _ in range(n):
            a1, b1 = _pendulum_rhs(theta, omega, g_over_l, damping)
            a2, b2 = _pendulum_rhs(theta + 0.5 * dt * a1, omega + 0.5 * dt * b1, g_over_l, damping)
            a3, b3 = _pendulum_rhs(theta + 0.5 * dt * a2, omega + 0.5 * dt * b2, g_over_l, damping)
            a4, b4 = _pendulum_rhs(theta + dt * a3, omega + dt * b3, g_over_l, damping)
            theta += dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
            omega += dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        out_th[k], out_om[k] = theta, omega
    return out_th, out_om


def pendulum_lift(lift_seed: int = 0, dim: int = 16) -> np.ndarray:
    """Fixed random linear map from (sin θ, cos θ, θ') to the sensor space."""
    rng = np.random.default_rng(lift_seed)
    return rng.standard_normal((3, dim)) / np.sqrt(3.0)


def gen_pendulum(
    n_seq: int,
    seq_len: int,
    dt: float = 0.1,
    noise_std: float = 0.02,
    seed: int = 0,
    damping: float = PENDULUM_DAMPING,
    irregular: bool = False,
    lift_seed: int = 0,
    sensor_dim: int = 16,
    max_angle: float = 1.2,
    max_speed: float = 1.0,
) -> SequenceBatch:
    lift = pendulum_lift(lift_seed, sensor_dim)

    def one(i):
        rng = np.random.default_rng(sequence_seed(seed, i))
        theta0 = rng.uniform(-max_angle, max_angle)
        omega0 = rng.uniform(-max_speed, max_speed)
        if irregular:
            steps = dt * rng.uniform(0.5, 1.5, size=seq_len - 1)
            times = np.concatenate([[0.0], np.cumsum(steps)])
        else:
            times = dt * np.arange(seq_len)
        theta, omega = simulate_pendulum(theta0, omega0, times, damping)
        feats = np.stack([np.sin(theta), np.cos(theta), omega], axis=1)
        x = feats @ lift + noise_std * rng.standard_normal((seq_len, sensor_dim))
        return times, x

    rows = _map_sequences(one, n_seq)
    times = np.stack([r[0] for r in rows]).astype(np.float32)
    frames = np.stack([r[1] for r in rows]).astype(np.float32)
    mask = np.ones(times.shape, dtype=bool)
    return SequenceBatch(times, frames, mask, (sensor_dim,), sensor=True)


# -- rotating sprites -----------------------------------------------------

# A "3"-like stroke in unit coordinates; each sequence jitters the vertices.
_SPRITE_TEMPLATE = np.array(
    [[-0.45, -0.6], [0.25, -0.6], [0.45, -0.35], [0.15, -0.05], [-0.15, 0.0],
     [0.15, 0.05], [0.45, 0.35], [0.25, 0.6], [-0.45, 0.6]]
)


def _segment_distance(px, py, a, b):
    ab = b - a
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / max(float(ab @ ab), 1e-12)
    t = np.clip(t, 0.0, 1.0)
    dx = px - (a[0] + t * ab[0])
    dy = py - (a[1] + t * ab[1])
    return np.sqrt(dx * dx + dy * dy)


def render_sprite(rng: np.random.Generator, size: int = 14, jitter: float = 0.08, thickness: float = 0.13) -> np.ndarray:
    """Binary thick polyline sprite on a ``size x size`` grid."""
    pts = _SPRITE_TEMPLATE + jitter * rng.standard_normal(_SPRITE_TEMPLATE.shape)
    pts *= 0.75
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    X, Y = np.meshgrid(c, c)
    dist = np.full(X.shape, np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        dist = np.minimum(dist, _segment_distance(X, Y, a, b))
    return (dist < thickness).astype(np.float64)


def rotate_frame(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the grid centre with bilinear resampling (zero outside)."""
    n0, n1 = img.shape
    c0, c1 = (n0 - 1) / 2.0, (n1 - 1) / 2.0
    i, j = np.meshgrid(np.arange(n0), np.arange(n1), indexing="ij")
    ca, sa = np.cos(angle), np.sin(angle)
    # inverse map: output pixel -> source coordinate
    src_i = c0 + ca * (i - c0) - sa * (j - c1)
    src_j = c1 + sa * (i - c0) + ca * (j - c1)
    src_i = np.where(np.abs(src_i - np.round(src_i)) < 1e-9, np.round(src_i), src_i)
    src_j = np.where(np.abs(src_j - np.round(src_j)) < 1e-9, np.round(src_j), src_j)
    out = ndimage.map_coordinates(img, [src_i, src_j], order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def gen_rotating_sprite(
    n_seq: int,
    n_angles: int = 16,
    holdout_angle: int = 8,
    n_drop: int = 4,
    sprite_size: int = 14,
    seed: int = 0,
    split: str = "train",
    protect: int = 3,
    dt: float = 1.0,
) -> SequenceBatch:
    """Rotation sequences; frame k shows the sprite rotated by 2πk/n_angles.

    Train split: the holdout angle plus ``n_drop`` random other angles are
    masked and zeroed. Eval split: only the holdout angle is masked and its
    true frame is kept as ground truth. The first ``protect`` frames are
    never dropped.
    """
    if not 0 <= holdout_angle < n_angles:
        raise ValueError(f"holdout angle {holdout_angle} outside [0, {n_angles})")
    if split not in ("train", "eval"):
        raise ValueError("split must be 'train' or 'eval'")
    if holdout_angle < protect:
        raise ValueError(f"holdout angle must not fall inside the first {protect} conditioning frames")
    candidates = [k for k in range(protect, n_angles) if k != holdout_angle]
    if split == "train" and n_drop > len(candidates):
        raise ValueError("not enough angles left to drop")

    def one(i):
        rng = np.random.default_rng(sequence_seed(seed, i))
        base = render_sprite(rng, sprite_size)
        frames = np.stack([rotate_frame(base, 2.0 * np.pi * k / n_angles) for k in range(n_angles)])
        mask = np.ones(n_angles, dtype=bool)
        mask[holdout_angle] = False
        if split == "train":
            drop = rng.choice(candidates, size=n_drop, replace=False)
            mask[drop] = False
            frames[~mask] = 0.0
        return frames.reshape(n_angles, -1), mask

    rows = _map_sequences(one, n_seq)
    frames = np.stack([r[0] for r in rows]).astype(np.float32)
    mask = np.stack([r[1] for r in rows])
    times = np.tile(dt * np.arange(n_angles), (n_seq, 1)).astype(np.float32)
    return SequenceBatch(
        times, frames, mask, (sprite_size, sprite_size, 1),
        meta={"holdout_angle": holdout_angle, "split": split},
    )


# -- bouncing balls -------------------------------------------------------

def simulate_balls(pos, vel, n_frames: int, box: float, radius: float, substeps: int = 20):
    """Equal-mass elastic discs in a square box; returns positions and velocities per frame.

    ``pos`` and ``vel`` are ``(n_balls, 2)`` in pixel units per frame.
    Wall hits reflect the normal velocity component; touching pairs that
    approach exchange their velocity components along the line of centres.
    """
    pos = np.array(pos, dtype=np.float64)
    vel = np.array(vel, dtype=np.float64)
    n = len(pos)
    P = np.empty((n_frames, n, 2))
    V = np.empty((n_frames, n, 2))
    P[0], V[0] = pos, vel
    dt = 1.0 / substeps
    lo, hi = radius, box - radius
    for f in range(1, n_frames):
        for _ in range(substeps):
            pos += dt * vel
            for axis in range(2):
                below = pos[:, axis] < lo
                above = pos[:, axis] > hi
                pos[below, axis] = 2 * lo - pos[below, axis]
                pos[above, axis] = 2 * hi - pos[above, axis]
                vel[below | above, axis] *= -1.0
            for a in range(n):
                for b in range(a + 1, n):
                    delta = pos[b] - pos[a]
                    dist = np.sqrt(delta @ delta)
                    if dist >= 2 * radius or dist == 0.0:
                        continue
                    normal = delta / dist
                    approach = (vel[a] - vel[b]) @ normal
                    if approach <= 0:
                        continue
                    # equal masses: swap normal components
                    vel[a] -= approach * normal
                    vel[b] += approach * normal
        P[f], V[f] = pos, vel
    return P, V


def render_balls(positions: np.ndarray, grid: int, radius: float, supersample: int = 4) -> np.ndarray:
    """Anti-aliased discs: each pixel is the covered fraction of an s x s subgrid."""
    offs = (np.arange(supersample) + 0.5) / supersample
    sub = (np.arange(grid)[:, None] + offs[None, :]).reshape(-1)
    X, Y = np.meshgrid(sub, sub)  # X: column (x), Y: row (y)
    inside = np.zeros(X.shape, dtype=bool)
    for x, y in positions:
        inside |= (X - x) ** 2 + (Y - y) ** 2 <= radius**2
    cover = inside.reshape(grid, supersample, grid, supersample).mean(axis=(1, 3))
    return np.clip(cover, 0.0, 1.0)


def gen_bouncing_balls(
    n_seq: int,
    seq_len: int = 20,
    n_balls: int = 1,
    grid: int = 16,
    seed: int = 0,
    radius: float | None = None,
    speed: float | None = None,
    dt: float = 0.1,
) -> SequenceBatch:
    if grid < 8:
        raise ValueError("grid must be at least 8")
    radius = grid / 8.0 if radius is None else radius
    speed = grid / 12.0 if speed is None else speed

    def one(i):
        rng = np.random.default_rng(sequence_seed(seed, i))
        for _ in range(100):
            pos = rng.uniform(radius, grid - radius, size=(n_balls, 2))
            gaps = [np.linalg.norm(pos[a] - pos[b]) for a in range(n_balls) for b in range(a + 1, n_balls)]
            if all(g > 2 * radius for g in gaps):
                break
        else:
            raise RuntimeError("could not place non-overlapping balls in 100 attempts")
        angle = rng.uniform(0, 2 * np.pi, size=n_balls)
        vel = speed * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        P, _ = simulate_balls(pos, vel, seq_len, float(grid), radius)
        frames = np.stack([render_balls(P[f], grid, radius) for f in range(seq_len)])
        return frames.reshape(seq_len, -1)

    frames = np.stack(_map_sequences(one, n_seq)).astype(np.float32)
    times = np.tile(dt * np.arange(seq_len), (n_seq, 1)).astype(np.float32)
    mask = np.ones(times.shape, dtype=bool)
    return SequenceBatch(times, frames, mask, (grid, grid, 1))


# -- container ------------------------------------------------------------

def write_dataset(path, ds: SequenceBatch, with_mask: bool = True) -> None:
    flags = (FLAG_MASK if with_mask else 0) | (FLAG_SENSOR if ds.sensor else 0)
    dims = ds.frame_shape
    header = MAGIC + struct.pack("<4I", VERSION, ds.n_sequences, ds.seq_len, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims) + struct.pack("<I", flags)
    times = ds.times.astype("<f4")
    frames = ds.frames.astype("<f4")
    mask = ds.mask.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        for i in range(ds.n_sequences):
            fh.write(times[i].tobytes())
            if with_mask:
                fh.write(mask[i].tobytes())
            fh.write(frames[i].tobytes())


def read_dataset(path) -> SequenceBatch:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise DatasetFormatError("truncated header")
    if blob[:4] != MAGIC:
        raise DatasetFormatError("bad magic")
    version, n_seq, seq_len, rank = struct.unpack_from("<4I", blob, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    offset = 20
    if len(blob) < offset + 4 * rank + 4:
        raise DatasetFormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    (flags,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    D = int(np.prod(dims)) if rank else 1
    has_mask = bool(flags & FLAG_MASK)
    per_seq = 4 * seq_len + (seq_len if has_mask else 0) + 4 * seq_len * D
    expected = offset + n_seq * per_seq
    if len(blob) != expected:
        raise DatasetFormatError(
            f"truncated or oversized payload: header implies {expected} bytes, file has {len(blob)}"
        )
    times = np.empty((n_seq, seq_len), dtype=np.float32)
    frames = np.empty((n_seq, seq_len, D), dtype=np.float32)
    mask = np.ones((n_seq, seq_len), dtype=bool)
    for i in range(n_seq):
        times[i] = np.frombuffer(blob, "<f4", seq_len, offset)
        offset += 4 * seq_len
        if has_mask:
            mask[i] = np.frombuffer(blob, np.uint8, seq_len, offset).astype(bool)
            offset += seq_len
        frames[i] = np.frombuffer(blob, "<f4", seq_len * D, offset).reshape(seq_len, D)
        offset += 4 * seq_len * D
    return SequenceBatch(times, frames, mask, dims, sensor=bool(flags & FLAG_SENSOR))
