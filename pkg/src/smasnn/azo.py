"""Attention zoneout.

During training, the weakest timesteps (by temporal attention) and, within
each of them, the weakest channels (by channel attention) take the previous
timestep's values. Two implementations are provided: an explicit-loop
reference and a mask-and-gather version used in the model; they must agree
bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Value, make_op


@dataclass(frozen=True)
class AzoConfig:
    rtr: float = 4.0
    rcr: float = 4.0
    guard: str = "time"  # "time": skip t == 0; "channel": skip c == 0 (literal reading)
    rank: str = "mean"  # scale-axis reduction before ranking: "mean" or "max"

    def __post_init__(self):
        if self.rtr < 1 or self.rcr < 1:
            raise ConfigError(f"AZO ratios must be >= 1, got rtr={self.rtr}, rcr={self.rcr}")
        if self.guard not in ("time", "channel"):
            raise ConfigError(f"AZO guard must be 'time' or 'channel', got {self.guard!r}")
        if self.rank not in ("mean", "max"):
            raise ConfigError(f"AZO rank reduction must be 'mean' or 'max', got {self.rank!r}")

    def deltas(self, timesteps: int, channels: int) -> tuple[int, int]:
        return int(timesteps // self.rtr), int(channels // self.rcr)


@dataclass
class AzoReport:
    selected_t: list[int] = field(default_factory=list)
    selected_c: list[list[int]] = field(default_factory=list)
    replaced: int = 0


def _reduce(w: np.ndarray, axis: int, how: str) -> np.ndarray:
    return w.mean(axis=axis) if how == "mean" else w.max(axis=axis)


def _smallest(scores, k: int) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (scores[i], i))[:k]


def azo_reference(z: np.ndarray, w_alpha: np.ndarray, w_beta: np.ndarray, delta_t: int, delta_c: int,
                  guard: str = "time", rank: str = "mean") -> tuple[np.ndarray, AzoReport]:
    """Explicit-loop zoneout of one sample: z (T, C, H, W), w_alpha (N, T, 1), w_beta (T, N, C, 1)."""
    steps, chans = z.shape[:2]
    n_scales = w_alpha.shape[0]
    r = z.copy()
    if delta_t == 0 or delta_c == 0:
        return r, AzoReport()
    t_scores = []
    for t in range(steps):
        vals = [float(w_alpha[n, t, 0]) for n in range(n_scales)]
        t_scores.append(sum(vals) / n_scales if rank == "mean" else max(vals))
    sel_t = sorted(_smallest(t_scores, delta_t))
    report = AzoReport(selected_t=sel_t)
    for i in sel_t:
        c_scores = []
        for c in range(chans):
            vals = [float(w_beta[i, n, c, 0]) for n in range(n_scales)]
            c_scores.append(sum(vals) / n_scales if rank == "mean" else max(vals))
        report.selected_c.append(_smallest(c_scores, delta_c))
    for i, p_i in zip(sel_t, report.selected_c):
        for j in p_i:
            if (guard == "time" and i != 0) or (guard == "channel" and j != 0):
                r[i, j] = z[i - 1, j]
                report.replaced += 1
    return r, report


def selection_mask(w_alpha: np.ndarray, w_beta: np.ndarray, delta_t: int, delta_c: int,
                   guard: str = "time", rank: str = "mean") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched site selection.

    Returns (mask (B, T, C), selected timesteps (B, delta_t), selected channels (B, delta_t, delta_c)).
    """
    b, _, steps, _ = w_alpha.shape
    chans = w_beta.shape[3]
    mask = np.zeros((b, steps, chans), dtype=bool)
    if delta_t == 0 or delta_c == 0:
        return mask, np.zeros((b, 0), dtype=np.int64), np.zeros((b, 0, 0), dtype=np.int64)
    t_scores = _reduce(w_alpha[..., 0], 1, rank)  # (B, T)
    sel_t = np.sort(np.argsort(t_scores, axis=1, kind="stable")[:, :delta_t], axis=1)
    c_scores = _reduce(w_beta[..., 0], 2, rank)  # (B, T, C)
    c_scores = np.take_along_axis(c_scores, sel_t[..., None], axis=1)  # (B, delta_t, C)
    sel_c = np.argsort(c_scores, axis=2, kind="stable")[..., :delta_c]
    rows = np.broadcast_to(np.arange(b)[:, None, None], sel_c.shape)
    mask[rows, np.broadcast_to(sel_t[..., None], sel_c.shape), sel_c] = True
    if guard == "time":
        mask[:, 0, :] = False
    else:
        mask[:, :, 0] = False
    return mask, sel_t, sel_c


def zoneout_shift(z: Value, mask: np.ndarray) -> Value:
    """R = Z where mask is off, Z[t-1] where on; gradient follows the copied value."""
    m = mask[..., None, None]
    prev = np.roll(z.data, 1, axis=1)
    out = np.where(m, prev, z.data)

    def backward(g):
        return (np.where(m, 0.0, g) + np.roll(np.where(m, g, 0.0), -1, axis=1),)

    return make_op(out, (z,), backward, "azo")


def azo_apply(z: Value, w_alpha, w_beta, config: AzoConfig, mode: str = "train") -> tuple[Value, list[AzoReport]]:
    """Vectorized zoneout over a batch (or a single sample).

    ``z`` is (B, T, C, H, W) with weights (B, N, T, 1) and (B, T, N, C, 1);
    unbatched shapes drop the leading axis. Eval mode is the identity.
    """
    single = z.ndim == 4
    wa = np.asarray(w_alpha.data if isinstance(w_alpha, Value) else w_alpha)
    wb = np.asarray(w_beta.data if isinstance(w_beta, Value) else w_beta)
    if single:
        z = z.reshape((1,) + z.shape)
        wa, wb = wa[None], wb[None]
    b, steps, chans = z.shape[:3]
    if wa.shape[0] != b or wa.shape[2] != steps or wb.shape[:2] != (b, steps) or wb.shape[3] != chans:
        raise ShapeError(f"azo: Z {z.shape}, W_alpha {wa.shape}, W_beta {wb.shape} are inconsistent")
    if mode == "eval":
        out = z
        reports = [AzoReport() for _ in range(b)]
    else:
        dt, dc = config.deltas(steps, chans)
        if dt > steps or dc > chans:
            raise ConfigError(f"AZO counts ({dt}, {dc}) exceed extents ({steps}, {chans})")
        mask, sel_t, sel_c = selection_mask(wa, wb, dt, dc, config.guard, config.rank)
        out = zoneout_shift(z, mask)
        reports = [
            AzoReport(sel_t[i].tolist(), sel_c[i].tolist(), int(mask[i].sum())) for i in range(b)
        ]
    if single:
        out = out.reshape(out.shape[1:])
    return out, reports


def azo_vectorized_equivalence(z: np.ndarray, w_alpha: np.ndarray, w_beta: np.ndarray, config: AzoConfig) -> bool:
    """Run both implementations on one sample and compare bitwise."""
    dt, dc = config.deltas(z.shape[0], z.shape[1])
    ref, ref_report = azo_reference(z, w_alpha, w_beta, dt, dc, config.guard, config.rank)
    vec, reports = azo_apply(Value(z), w_alpha, w_beta, config, "train")
    same_sites = reports[0].replaced == ref_report.replaced
    return bool(same_sites and np.array_equal(vec.data, ref) and vec.data.tobytes() == ref.tobytes())


def write_report_csv(rows: list[tuple[str, AzoReport]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "selected_t", "selected_c"])
        for sid, rep in rows:
            for t, chans in zip(rep.selected_t, rep.selected_c):
                w.writerow([sid, t, " ".join(str(c) for c in chans)])
