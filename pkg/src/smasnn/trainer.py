"""Losses, optimizers, the BPTT training loop, evaluation and checkpoints."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .errors import ConfigError, NumericError, ShapeError
from .events import AugmentPolicy, EventStream, augment, bin_events
from .model import Model, read_arrays, write_arrays, model_config_to_text
from .tensor import Value

# ---------------------------------------------------------------------------
# data


@dataclass
class FrameDataset:
    frames: np.ndarray  # (n, T, C, H, W)
    labels: np.ndarray  # (n,)
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 5 or len(self.frames) != len(self.labels):
            raise ShapeError(f"dataset: frames {self.frames.shape} vs {len(self.labels)} labels")
        if not self.names:
            self.names = [f"sample_{i:05d}" for i in range(len(self.labels))]

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_streams(cls, streams: list[EventStream], timesteps: int) -> FrameDataset:
        if not streams:
            raise ConfigError("dataset is empty")
        frames = np.stack([bin_events(s, timesteps) for s in streams])
        return cls(frames, np.array([s.label for s in streams]), [s.name for s in streams])

    def subset(self, idx) -> FrameDataset:
        idx = np.asarray(idx)
        return FrameDataset(self.frames[idx], self.labels[idx], [self.names[i] for i in idx])


# ---------------------------------------------------------------------------
# losses
#
# All losses take per-timestep outputs (B, T, K) or (T, K) and integer labels,
# and average over the batch.


@dataclass(frozen=True)
class LossSpec:
    kind: str = "timestep_ce"  # rate_mse | timestep_ce | label_smooth_ce
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in ("rate_mse", "timestep_ce", "label_smooth_ce"):
            raise ConfigError(f"unknown loss {self.kind!r}")
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigError(f"label smoothing epsilon must be in [0, 0.5), got {self.epsilon}")


def _batched(logits: Value, labels) -> tuple[Value, np.ndarray]:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 2:
        logits = logits.reshape((1,) + logits.shape)
    if logits.ndim != 3 or logits.shape[0] != len(labels):
        raise ShapeError(f"loss: outputs {logits.shape} vs {len(labels)} labels")
    return logits, labels


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def loss_rate_mse(outputs: Value, labels) -> Value:
    outputs, labels = _batched(outputs, labels)
    rates = outputs.mean(axis=1)
    diff = rates - Value(one_hot(labels, rates.shape[1]))
    return tn.square(diff).mean()


def loss_timestep_ce(outputs: Value, labels) -> Value:
    outputs, labels = _batched(outputs, labels)
    b, t, k = outputs.shape
    logp = tn.log_softmax(outputs, axis=2)
    target = np.broadcast_to(one_hot(labels, k)[:, None, :], (b, t, k))
    return -(logp * Value(target)).sum() * (1.0 / (b * t))


def loss_label_smooth_ce(outputs: Value, labels, epsilon: float = 0.1) -> Value:
    outputs, labels = _batched(outputs, labels)
    logits = outputs.mean(axis=1)
    b, k = logits.shape
    target = (1.0 - epsilon) * one_hot(labels, k) + epsilon / k
    return -(tn.log_softmax(logits, axis=1) * Value(target)).sum() * (1.0 / b)


def compute_loss(outputs: Value, labels, spec: LossSpec) -> Value:
    if spec.kind == "rate_mse":
        return loss_rate_mse(outputs, labels)
    if spec.kind == "timestep_ce":
        return loss_timestep_ce(outputs, labels)
    return loss_label_smooth_ce(outputs, labels, spec.epsilon)


# ---------------------------------------------------------------------------
# optimizers


@dataclass(frozen=True)
class OptimSpec:
    kind: str = "adam"  # sgd | adam | adamw
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    schedule: str = "constant"  # constant | cosine

    def __post_init__(self):
        if self.kind not in ("sgd", "adam", "adamw"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


def scheduled_lr(spec: OptimSpec, epoch: int, total_epochs: int) -> float:
    if spec.schedule == "constant" or total_epochs <= 0:
        return spec.lr
    return spec.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class Optimizer:
    """Applies SGD-momentum, Adam or AdamW updates to named parameters in place.

    Weight decay is added to the gradient for SGD and Adam and applied
    directly to the weights for AdamW.
    """

    def __init__(self, params: dict[str, Value], spec: OptimSpec):
        self.params = params
        self.spec = spec
        self.steps = 0
        self.slots: dict[str, np.ndarray] = {}
        for name, p in params.items():
            if spec.kind == "sgd":
                self.slots[f"momentum/{name}"] = np.zeros_like(p.data)
            else:
                self.slots[f"m/{name}"] = np.zeros_like(p.data)
                self.slots[f"v/{name}"] = np.zeros_like(p.data)

    def step(self, lr: float | None = None) -> None:
        s = self.spec
        lr = s.lr if lr is None else lr
        self.steps += 1
        b1, b2 = s.betas
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
            if s.kind == "sgd":
                g = g + s.weight_decay * p.data if s.weight_decay else g
                buf = self.slots[f"momentum/{name}"]
                buf *= s.momentum
                buf += g
                p.data -= lr * buf
                continue
            if s.kind == "adam" and s.weight_decay:
                g = g + s.weight_decay * p.data
            if s.kind == "adamw" and s.weight_decay:
                p.data -= lr * s.weight_decay * p.data
            m, v = self.slots[f"m/{name}"], self.slots[f"v/{name}"]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.steps)
            v_hat = v / (1.0 - b2**self.steps)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + s.eps)


def optim_step(params: dict[str, Value], spec: OptimSpec, state: Optimizer | None = None,
               lr: float | None = None) -> Optimizer:
    """Functional wrapper: one update using (and returning) the optimizer state."""
    state = state or Optimizer(params, spec)
    state.step(lr)
    return state


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    predictions: np.ndarray
    layer_sfr: dict[str, float]  # mean spikes per neuron per step
    layer_spikes: dict[str, float]  # total spikes over the dataset
    sample_spikes: np.ndarray  # (n, layers) spike totals per sample
    neuron_steps: float = 0.0  # neurons x timesteps x samples summed over layers

    @property
    def total_spikes(self) -> float:
        return float(sum(self.layer_spikes.values()))

    @property
    def firing_rate(self) -> float:
        """Spikes per neuron per step over all recorded layers."""
        return self.total_spikes / self.neuron_steps if self.neuron_steps else 0.0


def predict(outputs: np.ndarray) -> np.ndarray:
    """Class decision from the time-averaged readout; ties go to the lowest class index."""
    return np.argmax(outputs.mean(axis=-2), axis=-1)


def evaluate(model: Model, data: FrameDataset, batch_size: int = 32, loss: LossSpec | None = None) -> EvalResult:
    """Eval-mode pass (running BN statistics, no zoneout) with spike statistics."""
    loss = loss or LossSpec()
    was_training = model.training
    model.eval()
    model.record(spikes=True)
    lifs = model.lif_layers()
    spikes = np.zeros((len(data), len(lifs)))
    neurons = np.zeros(len(lifs))
    preds, total_loss = [], 0.0
    with tn.no_grad():
        for start in range(0, len(data), batch_size):
            xb = data.frames[start:start + batch_size]
            yb = data.labels[start:start + batch_size]
            out = model(xb)
            total_loss += compute_loss(out, yb, loss).item() * len(yb)
            preds.append(predict(out.data))
            for j, (_, lif) in enumerate(lifs):
                s = lif.last_spikes
                spikes[start:start + len(yb), j] = s.reshape(len(yb), -1).sum(axis=1)
                neurons[j] = s[0].size / s.shape[1]  # neurons per step of one sample
    model.record(spikes=False)
    model.train(was_training)
    steps = data.frames.shape[1]
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    names = [n for n, _ in lifs]
    sfr = {n: float(spikes[:, j].sum() / (len(data) * steps * neurons[j])) for j, n in enumerate(names)}
    return EvalResult(
        accuracy=float(np.mean(pred == data.labels)) if len(data) else 0.0,
        loss=total_loss / max(len(data), 1),
        predictions=pred,
        layer_sfr=sfr,
        layer_spikes={n: float(spikes[:, j].sum()) for j, n in enumerate(names)},
        sample_spikes=spikes,
        neuron_steps=float(neurons.sum() * steps * len(data)),
    )


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    loss: LossSpec = field(default_factory=LossSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    eval_train: bool = True  # eval-mode accuracy on the training split each epoch


@dataclass
class TrainState:
    epoch: int = 0
    best_accuracy: float = -1.0
    best_epoch: int = -1
    history: list[dict] = field(default_factory=list)


METRIC_BASE = ["epoch", "split", "loss", "accuracy"]


def _metric_header(model: Model) -> list[str]:
    return METRIC_BASE + [f"sfr:{n}" for n, _ in model.lif_layers()]


def _fmt(x: float) -> str:
    return repr(float(x))


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def save_checkpoint(path: str | Path, model: Model, optimizer: Optimizer, state: TrainState,
                    rng: np.random.Generator, config: TrainConfig) -> None:
    arrays = {f"model/{k}": v for k, v in model.state_arrays().items()}
    arrays.update({f"optim/{k}": v for k, v in optimizer.slots.items()})
    meta = {
        "model_config": model_config_to_text(model.config),
        "epoch": state.epoch,
        "best_accuracy": state.best_accuracy,
        "best_epoch": state.best_epoch,
        "optim_steps": optimizer.steps,
        "rng": _rng_state(rng),
        "train_config": json.loads(json.dumps(asdict(config))),
    }
    write_arrays(path, arrays, meta)


def load_checkpoint(path: str | Path, model: Model, optimizer: Optimizer | None = None) -> dict:
    """Restore model (and optionally optimizer) state; returns the checkpoint metadata."""
    arrays, meta = read_arrays(path)
    model_arrays = {k[6:]: v for k, v in arrays.items() if k.startswith("model/")}
    if not model_arrays and arrays:
        model_arrays = arrays  # plain parameter container
    expected = model.state_arrays()
    for (en, ea), (gn, ga) in zip(expected.items(), model_arrays.items()):
        if en != gn or ea.shape != ga.shape:
            raise ShapeError(f"{path}: first mismatched path: model has {en!r} {ea.shape}, "
                             f"checkpoint has {gn!r} {ga.shape}")
    if len(expected) != len(model_arrays):
        raise ShapeError(f"{path}: model has {len(expected)} arrays, checkpoint {len(model_arrays)}")
    for name, arr in model_arrays.items():
        expected[name][...] = arr
    if optimizer is not None:
        for name in optimizer.slots:
            if f"optim/{name}" not in arrays:
                raise ShapeError(f"{path}: optimizer slot {name!r} missing from checkpoint")
            optimizer.slots[name][...] = arrays[f"optim/{name}"]
        optimizer.steps = int(meta.get("optim_steps", 0))
    return meta


@dataclass
class TrainResult:
    state: TrainState
    model: Model
    optimizer: Optimizer
    last_eval: EvalResult | None


def train(
    model: Model,
    train_set: FrameDataset,
    test_set: FrameDataset | None,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    log=None,
) -> TrainResult:
    """Seeded minibatch BPTT. Writes ``metrics.csv`` and ``best.ckpt`` / ``last.ckpt`` to ``out_dir``.

    Zoneout attached to the model's attention blocks is active during the
    update passes only.
    """
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(config.seed)
    model.set_rng(rng)
    optimizer = Optimizer(dict(model.named_parameters()), config.optim)
    state = TrainState()
    out = Path(out_dir) if out_dir is not None else None
    metrics_path = out / "metrics.csv" if out else None
    if resume is not None:
        meta = load_checkpoint(resume, model, optimizer)
        rng.bit_generator.state = meta["rng"]
        state = TrainState(meta["epoch"], meta["best_accuracy"], meta["best_epoch"])
    if out:
        out.mkdir(parents=True, exist_ok=True)
        if resume is None or not metrics_path.exists():
            with open(metrics_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(_metric_header(model))
    last_eval = None
    n = len(train_set)
    for epoch in range(state.epoch, config.epochs):
        model.train()
        lr = scheduled_lr(config.optim, epoch, config.epochs)
        order = rng.permutation(n)
        running, seen = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb = train_set.frames[idx]
            if config.augment.active:
                xb = np.stack([augment(f, rng, config.augment) for f in xb])
            yb = train_set.labels[idx]
            loss = compute_loss(model(xb), yb, config.loss)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            model.zero_grad()
            loss.backward()
            optimizer.step(lr)
            running += value * len(idx)
            seen += len(idx)
        rows = []
        train_eval = evaluate(model, train_set, loss=config.loss) if config.eval_train else None
        rows.append(("train", running / seen, train_eval.accuracy if train_eval else float("nan"), train_eval))
        if test_set is not None and len(test_set):
            last_eval = evaluate(model, test_set, loss=config.loss)
            rows.append(("test", last_eval.loss, last_eval.accuracy, last_eval))
        state.epoch = epoch + 1
        for split, loss_v, acc, ev in rows:
            record = {"epoch": epoch, "split": split, "loss": loss_v, "accuracy": acc}
            if ev is not None:
                record.update({f"sfr:{k}": v for k, v in ev.layer_sfr.items()})
            state.history.append(record)
        if last_eval is not None and last_eval.accuracy > state.best_accuracy:
            state.best_accuracy, state.best_epoch = last_eval.accuracy, epoch
            if out:
                save_checkpoint(out / "best.ckpt", model, optimizer, state, rng, config)
        if out:
            header = _metric_header(model)
            with open(metrics_path, "a", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for record in state.history[-len(rows):]:
                    w.writerow([record["epoch"], record["split"]] + [
                        _fmt(record.get(h, float("nan"))) for h in header[2:]
                    ])
            save_checkpoint(out / "last.ckpt", model, optimizer, state, rng, config)
        if log is not None:
            msg = " ".join(f"{s}={a:.3f}" for s, _, a, _ in rows)
            log(f"epoch {epoch + 1}/{config.epochs} lr={lr:.2e} loss={running / seen:.4f} {msg}")
    return TrainResult(state, model, optimizer, last_eval)
