"""Event streams: file formats, frame integration, augmentation, synthetic gestures.

Binary ``.evs`` layout (little-endian)::

    b"EVS1" | u16 width | u16 height | u16 label | u64 count | count * (u16 x, u16 y, u8 p)

Text ``.evt`` layout: a header line ``# width height label`` followed by
one ``x,y,p`` line per event. Event order is the only notion of time.

A dataset directory holds one file per sample plus ``manifest.csv`` with
columns ``path,label`` (paths relative to the directory).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "u1")])
_HEADER = struct.Struct("<4sHHHQ")
MAGIC = b"EVS1"


@dataclass
class EventStream:
    width: int
    height: int
    label: int
    events: np.ndarray  # structured EVENT_DTYPE, ordered
    name: str = ""

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=EVENT_DTYPE)
        if len(self.events):
            if self.events["x"].max() >= self.width or self.events["y"].max() >= self.height:
                raise FormatError(f"stream {self.name or '<anon>'}: event outside {self.width}x{self.height}")
            if self.events["p"].max() > 1:
                raise FormatError(f"stream {self.name or '<anon>'}: polarity must be 0 or 1")

    def __len__(self):
        return len(self.events)

    @classmethod
    def from_arrays(cls, x, y, p, width: int, height: int, label: int, name: str = "") -> EventStream:
        ev = np.empty(len(x), dtype=EVENT_DTYPE)
        ev["x"], ev["y"], ev["p"] = x, y, p
        return cls(width, height, label, ev, name)


# ---------------------------------------------------------------------------
# file formats


def write_evs(stream: EventStream, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, stream.width, stream.height, stream.label, len(stream.events)))
        fh.write(stream.events.astype(EVENT_DTYPE).tobytes())


def read_evs(path: str | Path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} of {_HEADER.size} bytes)")
    magic, width, height, label, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    need = _HEADER.size + count * EVENT_DTYPE.itemsize
    if len(raw) < need:
        raise FormatError(f"{path}: truncated at offset {len(raw)}, expected {need} bytes for {count} events")
    ev = np.frombuffer(raw, dtype=EVENT_DTYPE, count=count, offset=_HEADER.size).copy()
    return EventStream(width, height, label, ev, name=Path(path).stem)


def write_evt(stream: EventStream, path: str | Path) -> None:
    lines = [f"# {stream.width} {stream.height} {stream.label}"]
    lines += [f"{x},{y},{p}" for x, y, p in stream.events.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_evt(path: str | Path) -> EventStream:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing '# width height label' header")
    try:
        width, height, label = (int(v) for v in lines[0][1:].split())
        rows = [tuple(int(v) for v in ln.split(",")) for ln in lines[1:] if ln.strip()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if any(len(r) != 3 for r in rows):
        raise FormatError(f"{path}: every event line needs exactly x,y,p")
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return EventStream.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], width, height, label, name=Path(path).stem)


def read_stream(path: str | Path) -> EventStream:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"event file not found: {path}")
    return read_evt(path) if path.suffix == ".evt" else read_evs(path)


def save_dataset(streams: list[EventStream], root: str | Path, fmt: str = "evs") -> Path:
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    writer = write_evs if fmt == "evs" else write_evt
    with open(root / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        for i, s in enumerate(streams):
            rel = f"samples/{i:05d}.{fmt}"
            writer(s, root / rel)
            w.writerow([rel, s.label])
    return root / "manifest.csv"


def load_dataset(root: str | Path) -> list[EventStream]:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")
    out = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            s = read_stream(root / row["path"])
            if s.label != int(row["label"]):
                raise FormatError(f"{row['path']}: header label {s.label} != manifest label {row['label']}")
            out.append(s)
    return out


# ---------------------------------------------------------------------------
# integration into frames


def slice_bounds(n_events: int, timesteps: int) -> list[tuple[int, int]]:
    """Index slices ``[j_l, j_r)``; the last slice absorbs the remainder."""
    step = n_events // timesteps
    return [(step * j, step * (j + 1) if j < timesteps - 1 else n_events) for j in range(timesteps)]


def bin_events(stream: EventStream, timesteps: int) -> np.ndarray:
    """Count events per (slice, polarity, y, x) -> float array (T, 2, H, W)."""
    n = len(stream.events)
    if timesteps < 1 or timesteps > n:
        raise ConfigError(f"stream {stream.name or '<anon>'}: cannot split {n} events into {timesteps} slices")
    step = n // timesteps
    j = np.minimum(np.arange(n) // step, timesteps - 1)
    ev = stream.events
    flat = ((j * 2 + ev["p"].astype(np.int64)) * stream.height + ev["y"]) * stream.width + ev["x"]
    counts = np.bincount(flat, minlength=timesteps * 2 * stream.height * stream.width)
    return counts.reshape(timesteps, 2, stream.height, stream.width).astype(np.float64)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentPolicy:
    hflip_p: float = 0.0
    translate: tuple[int, int] = (0, 0)  # (dy_max, dx_max) in pixels

    @property
    def active(self) -> bool:
        return self.hflip_p > 0 or any(self.translate)


def hflip(frames: np.ndarray) -> np.ndarray:
    return frames[..., ::-1].copy()


def translate(frames: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer shift of the last two axes; exposed borders are zero."""
    out = np.zeros_like(frames)
    h, w = frames.shape[-2:]
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[..., dst_y, dst_x] = frames[..., src_y, src_x]
    return out


def augment(frames: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """One flip decision and one shift per sample, shared by all frames and channels."""
    h, w = frames.shape[-2:]
    dy_max, dx_max = policy.translate
    if dy_max >= h or dx_max >= w:
        raise ConfigError(f"translate bounds {policy.translate} must be below extents {(h, w)}")
    out = frames
    if policy.hflip_p > 0 and rng.random() < policy.hflip_p:
        out = hflip(out)
    if dy_max or dx_max:
        dy = int(rng.integers(-dy_max, dy_max + 1))
        dx = int(rng.integers(-dx_max, dx_max + 1))
        out = translate(out, dy, dx)
    return out


# ---------------------------------------------------------------------------
# synthetic gestures

# (name, kind, direction, radius fraction of min(H, W))
MOTIONS = [
    ("cw_orbit", "orbit", +1, 0.32),
    ("ccw_orbit", "orbit", -1, 0.32),
    ("sweep_right", "sweep_x", +1, 0.0),
    ("cw_small_orbit", "orbit", +1, 0.10),
    ("sweep_down", "sweep_y", +1, 0.0),
    ("ccw_small_orbit", "orbit", -1, 0.10),
    ("sweep_left", "sweep_x", -1, 0.0),
    ("sweep_up", "sweep_y", -1, 0.0),
]


@dataclass(frozen=True)
class GestureParams:
    kind: str
    direction: int
    cx: float
    cy: float
    radius: float
    phase: float
    extent: float


def trajectory(params: GestureParams, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic path position at progress ``u`` in [0, 1) as (x, y) floats."""
    if params.kind == "orbit":
        theta = params.phase + params.direction * 2.0 * np.pi * u
        return params.cx + params.radius * np.sin(theta), params.cy - params.radius * np.cos(theta)
    along = (u - 0.5) * params.extent * params.direction
    if params.kind == "sweep_x":
        return params.cx + along, np.full_like(u, params.cy)
    return np.full_like(u, params.cx), params.cy + along


def render_gesture(
    params: GestureParams,
    n_events: int,
    height: int,
    width: int,
    label: int,
    rng: np.random.Generator,
    noise_rate: float = 0.0,
    name: str = "",
) -> EventStream:
    """Emit events along the path in order of travel, plus uniform noise.

    Path samples are laid out by geometric index ``k`` and visited in
    direction order, so opposite directions over a closed orbit produce the
    same multiset of events.
    """
    n_noise = int(round(noise_rate * n_events))
    n_path = n_events - n_noise
    k = np.arange(n_path)
    jitter = rng.uniform(-0.2, 0.2, size=(2, n_path))
    polarity = rng.integers(0, 2, size=n_path)
    if params.kind == "orbit":
        u_geo = k / n_path
        order = k if params.direction > 0 else (-k) % n_path
        fwd = GestureParams(**{**params.__dict__, "direction": 1})
        px, py = trajectory(fwd, u_geo)
    else:
        u_geo = k / max(n_path - 1, 1)
        order = k
        px, py = trajectory(params, u_geo)
    x = np.clip(np.rint(px + jitter[0]), 0, width - 1).astype(np.int64)[order]
    y = np.clip(np.rint(py + jitter[1]), 0, height - 1).astype(np.int64)[order]
    p = polarity[order]
    if n_noise:
        slots = np.sort(rng.choice(n_events, size=n_noise, replace=False))
        keep = np.ones(n_events, dtype=bool)
        keep[slots] = False
        ax, ay, ap = (np.empty(n_events, dtype=np.int64) for _ in range(3))
        ax[keep], ay[keep], ap[keep] = x, y, p
        ax[slots] = rng.integers(0, width, n_noise)
        ay[slots] = rng.integers(0, height, n_noise)
        ap[slots] = rng.integers(0, 2, n_noise)
        x, y, p = ax, ay, ap
    return EventStream.from_arrays(x, y, p, width, height, label, name)


def sample_params(motion: int, height: int, width: int, rng: np.random.Generator) -> GestureParams:
    _, kind, direction, rfrac = MOTIONS[motion]
    m = min(height, width)
    cx = (width - 1) / 2 + rng.uniform(-0.06, 0.06) * m
    cy = (height - 1) / 2 + rng.uniform(-0.06, 0.06) * m
    radius = rfrac * m * rng.uniform(0.9, 1.1)
    phase = rng.uniform(-np.pi / 4, np.pi / 4)
    extent = 0.6 * m * rng.uniform(0.9, 1.1)
    return GestureParams(kind, direction, cx, cy, radius, phase, extent)


def synth_gestures(
    classes: int,
    per_class: int,
    resolution: tuple[int, int] = (32, 32),
    events_per_sample: int = 2048,
    noise_rate: float = 0.05,
    seed: int = 0,
) -> list[EventStream]:
    """Deterministic desk-scale gesture set; class ``i`` follows ``MOTIONS[i]``."""
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if classes > len(MOTIONS):
        raise ConfigError(f"at most {len(MOTIONS)} synthetic classes are defined, got {classes}")
    height, width = resolution
    rng = np.random.default_rng(seed)
    streams = []
    for c in range(classes):
        for i in range(per_class):
            params = sample_params(c, height, width, rng)
            streams.append(
                render_gesture(params, events_per_sample, height, width, c, rng, noise_rate, name=f"{MOTIONS[c][0]}_{i:04d}")
            )
    return streams


# ---------------------------------------------------------------------------
# splitting


def split_dataset(streams: list, ratio: float, seed: int) -> tuple[list, list]:
    """Stratified, seeded train/test partition.

    The training split holds ``round(N * ratio)`` samples. Each class gets
    ``floor(n_c * ratio)`` and the leftover slots go to the classes with the
    largest fractional remainders (lowest label first on ties); every class
    keeps at least one sample on each side.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in streams])
    classes = np.unique(labels)
    members = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise ConfigError(f"class {c} has {len(idx)} sample(s); at least 2 are needed to split")
        members[c] = idx[rng.permutation(len(idx))]
    exact = {c: len(members[c]) * ratio for c in classes}
    quota = {c: int(np.floor(exact[c])) for c in classes}
    spare = int(round(len(labels) * ratio)) - sum(quota.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - quota[c]), c))[:max(spare, 0)]:
        quota[c] += 1
    train_idx, test_idx = [], []
    for c in classes:
        n_train = min(max(quota[c], 1), len(members[c]) - 1)
        train_idx.extend(members[c][:n_train].tolist())
        test_idx.extend(members[c][n_train:].tolist())
    train_idx.sort()
    test_idx.sort()
    return [streams[i] for i in train_idx], [streams[i] for i in test_idx]
