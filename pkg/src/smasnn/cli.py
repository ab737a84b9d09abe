"""Command-line entry point: ``smasnn {synth,train,eval,ablate,analyze}``.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numeric failure. ``SMASNN_THREADS`` caps BLAS worker threads (default 1,
which is also the mode in which runs are bit-reproducible).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .azo import AzoConfig
from .errors import ConfigError, FormatError, NumericError
from .events import save_dataset, synth_gestures
from .experiment import ExperimentConfig, experiment_to_text, load_experiment, load_splits
from .layers import Conv2d
from .model import Model, build_model, parse_policy
from .neuron import LIF
from .sma import SMA, SmaConfig, SmaTrace
from .tensor import no_grad
from .trainer import evaluate, load_checkpoint, predict, train

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
ANALYSES = ("sfr-heatmap", "spike-counts", "scale-importance", "azo-report")
AXES = ("placement", "scales", "cr-tr", "rtr-rcr")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def dataset_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_pgm(path: Path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def to_gray(maps: np.ndarray, top: float) -> np.ndarray:
    """Linear map of [0, top] onto [0, 255]; an all-zero layer stays black."""
    if top <= 0:
        return np.zeros(maps.shape, dtype=np.uint8)
    return np.clip(np.rint(maps / top * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    res = tuple(int(v) for v in args.resolution.split(","))
    streams = synth_gestures(args.classes, args.per_class, (res[0], res[-1]), args.events, args.noise, args.seed)
    save_dataset(streams, out, args.format)
    print(f"wrote {len(streams)} samples to {out} sha256={dataset_digest(out)}")
    return 0


def _experiment(args) -> ExperimentConfig:
    cfg = load_experiment(args.config)
    return cfg.with_overrides(getattr(args, "seed", None), getattr(args, "timesteps", None),
                              getattr(args, "epochs", None))


def cmd_train(args) -> int:
    cfg = _experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(experiment_to_text(cfg))
    train_set, test_set = load_splits(cfg)
    model = build_model(cfg.model)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    res = train(model, train_set, test_set, cfg.train, out, resume=args.resume, log=log)
    print(f"best test accuracy {res.state.best_accuracy!r} at epoch {res.state.best_epoch + 1}/{cfg.train.epochs}")
    return 0


def _resolve_checkpoint(value: str, run_dir: str | None) -> Path:
    p = Path(value)
    if not p.exists() and value in ("best", "last") and run_dir:
        p = Path(run_dir) / f"{value}.ckpt"
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return p


def _load_run(args) -> tuple[ExperimentConfig, Model, Path]:
    ckpt = _resolve_checkpoint(args.checkpoint, args.run or args.out)
    config_path = Path(args.config) if args.config else ckpt.parent / "config.cfg"
    cfg = load_experiment(config_path).with_overrides(timesteps=getattr(args, "timesteps", None))
    model = build_model(cfg.model)
    load_checkpoint(ckpt, model)
    return cfg, model, ckpt


def _split(cfg: ExperimentConfig, which: str):
    train_set, test_set = load_splits(cfg)
    return {"train": train_set, "test": test_set}[which]


def cmd_eval(args) -> int:
    cfg, model, ckpt = _load_run(args)
    data = _split(cfg, args.split)
    res = evaluate(model, data, loss=cfg.train.loss)
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"eval_{args.split}.csv", ["layer", "sfr", "spikes"],
               [[n, repr(res.layer_sfr[n]), repr(res.layer_spikes[n])] for n in res.layer_sfr])
    _write_csv(out / f"eval_{args.split}_summary.csv", ["checkpoint", "split", "samples", "accuracy", "loss"],
               [[ckpt.name, args.split, len(data), repr(res.accuracy), repr(res.loss)]])
    print(f"accuracy {res.accuracy!r} on {len(data)} {args.split} samples")
    return 0


def _grid_cells(axis: str, grid: str) -> list[str]:
    cells = [c.strip() for c in grid.split(",") if c.strip()]
    if not cells:
        raise ConfigError("empty --grid")
    return cells


def _cell_config(base: ExperimentConfig, axis: str, cell: str) -> tuple[ExperimentConfig, str]:
    """Apply one grid value; returns the config and a note for the row."""
    m = base.model
    note = ""
    if axis == "placement":
        parse_policy(cell)
        m = replace(m, policy=cell)
    elif axis == "scales":
        m = replace(m, sma=SmaConfig.with_scales(int(cell), channel_reduction=m.sma.channel_reduction,
                                                 time_reduction=m.sma.time_reduction,
                                                 activation=m.sma.activation, neuron=m.sma.neuron))
    elif axis == "cr-tr":
        cr, tr = (int(v) for v in cell.split(":"))
        m = replace(m, sma=replace(m.sma, channel_reduction=cr, time_reduction=tr))
    elif axis == "rtr-rcr":
        rtr, rcr = (float(v) for v in cell.split(":"))
        m = replace(m, azo=AzoConfig(rtr, rcr, *(m.azo.guard, m.azo.rank) if m.azo else ()))
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    return replace(base, model=m), note


def _azo_noop(model: Model) -> bool:
    blocks = model.sma_blocks()
    if not blocks:
        return True
    for _, blk in blocks:
        if blk.azo is None:
            return True
        dt, dc = blk.azo.deltas(blk.sma.timesteps, blk.sma.channels)
        if dt == 0 or dc == 0:
            return True
    return False


def cmd_ablate(args) -> int:
    base = _experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "base_config.cfg").write_text(experiment_to_text(base))
    train_set, test_set = load_splits(base)
    header = ["axis", "value", "status", "reason", "accuracy", "wall_time_s", "parameters",
              "inference_s_per_batch", "azo_noop"]
    rows = []
    for cell in _grid_cells(args.axis, args.grid):
        try:
            cfg, _ = _cell_config(base, args.axis, cell)
            model = build_model(cfg.model)
        except (ConfigError, ValueError) as exc:
            rows.append([args.axis, cell, "skipped", str(exc), "", "", "", "", ""])
            continue
        start = time.perf_counter()
        res = train(model, train_set, test_set, cfg.train)
        wall = time.perf_counter() - start
        batch = test_set.frames[: cfg.train.batch_size]
        model.eval()
        start = time.perf_counter()
        with no_grad():
            model(batch)
        infer = time.perf_counter() - start
        acc = res.last_eval.accuracy if res.last_eval else float("nan")
        noop = args.axis == "rtr-rcr" and _azo_noop(model)
        rows.append([args.axis, cell, "ok", "azo no-op (zero replacement count)" if noop else "", repr(acc),
                     f"{wall:.3f}", model.num_parameters(), f"{infer:.4f}", str(noop).lower()])
        if not args.quiet:
            print(f"{args.axis}={cell} accuracy={acc:.3f} params={model.num_parameters()}", flush=True)
    _write_csv(out / f"ablation_{args.axis}.csv", header, rows)
    return 0


def default_heatmap_layer(model: Model) -> str:
    """The neuron layer fed by the second network convolution (the first after the coding layer)."""
    convs = 0
    for name, mod in model.named_modules():
        if isinstance(mod, SMA):
            continue
        if isinstance(mod, Conv2d) and ".sma." not in name:
            convs += 1
        elif isinstance(mod, LIF) and convs >= 2:
            return name
    return model.lif_layers()[0][0]


def _sample_spikes(model: Model, data, names: list[str], batch_size: int = 32):
    """Eval-mode pass keeping per-layer spike arrays and SMA weights."""
    lifs = dict(model.lif_layers())
    model.eval()
    model.record(spikes=True, traces=True)
    spikes = {n: [] for n in names}
    totals, weights = [], {n: [] for n, _ in model.sma_blocks()}
    with no_grad():
        for s in range(0, len(data), batch_size):
            model(data.frames[s:s + batch_size])
            totals.append([lif.last_spikes.reshape(lif.last_spikes.shape[0], -1).sum(axis=1)
                           for _, lif in model.lif_layers()])
            for n in names:
                spikes[n].append(lifs[n].last_spikes)
            for n, blk in model.sma_blocks():
                weights[n].append(blk.last_weights)
    model.record(spikes=False, traces=False)
    counts = np.concatenate([np.stack(t, axis=1) for t in totals]) if totals else np.zeros((0, len(lifs)))
    return {n: np.concatenate(v) for n, v in spikes.items()}, counts, weights


def cmd_analyze(args) -> int:
    cfg, model, _ = _load_run(args)
    data = _split(cfg, args.split)
    if args.limit:
        data = data.subset(np.arange(min(args.limit, len(data))))
    wanted = [o.strip() for o in args.outputs.split(",") if o.strip()]
    for o in wanted:
        if o not in ANALYSES:
            raise ConfigError(f"unknown analysis {o!r}; expected any of {ANALYSES}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lif_names = [n for n, _ in model.lif_layers()]
    layers = [l.strip() for l in args.layer.split(",")] if args.layer else [default_heatmap_layer(model)]
    for l in layers:
        if l not in lif_names:
            raise ConfigError(f"layer {l!r} not found; available neuron layers: {', '.join(lif_names)}")
    spikes, counts, weights = _sample_spikes(model, data, layers if "sfr-heatmap" in wanted else [])
    if "sfr-heatmap" in wanted:
        for layer in layers:
            maps = spikes[layer].mean(axis=(1, 2))  # (n, H, W): SFR averaged over T and channels
            top = float(maps.max()) if maps.size else 0.0
            gray = to_gray(maps, top)
            safe = layer.replace(".", "_")
            rows = []
            for i, name in enumerate(data.names):
                write_pgm(out / f"sfr_{safe}_{name}.pgm", gray[i])
                rows.append([name, int(data.labels[i]), maps.shape[1], maps.shape[2], repr(float(maps[i].max())),
                             " ".join(repr(float(v)) for v in maps[i].ravel())])
            _write_csv(out / f"sfr_{safe}.csv", ["sample_id", "label", "height", "width", "max_sfr", "sfr"], rows)
    if "spike-counts" in wanted:
        _write_csv(out / "spike_counts.csv", ["sample_id", "label"] + lif_names,
                   [[name, int(data.labels[i])] + [repr(float(v)) for v in counts[i]]
                    for i, name in enumerate(data.names)])
    if "scale-importance" in wanted:
        rows = []
        for blk, parts in weights.items():
            if not parts:
                continue
            imp = np.concatenate([SmaTrace(wa, wb).importance for wa, wb in parts])  # (n, N)
            for c in np.unique(data.labels):
                mean = imp[data.labels == c].mean(axis=0)
                rows.append([blk, int(c)] + [repr(float(v)) for v in mean])
        n_scales = max((len(r) - 2 for r in rows), default=0)
        _write_csv(out / "scale_importance.csv", ["sma_block", "class"] + [f"scale_{i}" for i in range(n_scales)], rows)
    if "azo-report" in wanted:
        azo = cfg.model.azo or AzoConfig()
        model.set_azo(azo)
        model.train()
        model.set_rng(np.random.default_rng(cfg.train.seed))
        rows = []
        with no_grad():
            for s in range(0, len(data), cfg.train.batch_size):
                model(data.frames[s:s + cfg.train.batch_size])
                for blk_name, blk in model.sma_blocks():
                    for i, rep in enumerate(blk.last_azo):
                        for t, chans in zip(rep.selected_t, rep.selected_c):
                            rows.append([blk_name, data.names[s + i], t, " ".join(map(str, chans))])
        _write_csv(out / "azo_report.csv", ["sma_block", "sample_id", "selected_t", "selected_c"], rows)
    print(f"wrote {', '.join(wanted)} to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smasnn", description="Spiking multiscale attention training engine")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic gesture dataset")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=60)
    s.add_argument("--resolution", default="32,32")
    s.add_argument("--events", type=int, default=2048)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--format", choices=("evs", "evt"), default="evs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def run_flags(q, need_out=True):
        q.add_argument("--config", required=True)
        q.add_argument("--seed", type=int)
        q.add_argument("--timesteps", type=int)
        q.add_argument("--epochs", type=int)
        q.add_argument("--out", required=need_out)
        q.add_argument("--quiet", action="store_true")

    t = sub.add_parser("train", help="train a model from an experiment config")
    run_flags(t)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    def ckpt_flags(q):
        q.add_argument("--checkpoint", required=True, help="checkpoint path, or best/last inside --run")
        q.add_argument("--run", help="run directory holding config.cfg and checkpoints")
        q.add_argument("--config", help="experiment config (default: config.cfg next to the checkpoint)")
        q.add_argument("--timesteps", type=int)
        q.add_argument("--split", choices=("train", "test"), default="test")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    ckpt_flags(e)
    e.add_argument("--out")
    e.add_argument("--mode", choices=("eval",), default="eval")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run a one-axis ablation grid")
    run_flags(a)
    a.add_argument("--axis", choices=AXES, required=True)
    a.add_argument("--grid", required=True, help="comma-separated cells; pairs as a:b for cr-tr and rtr-rcr")
    a.set_defaults(func=cmd_ablate)

    z = sub.add_parser("analyze", help="export spike and attention statistics")
    ckpt_flags(z)
    z.add_argument("--outputs", default=",".join(ANALYSES))
    z.add_argument("--layer", help="neuron layer(s) for heatmaps, comma-separated")
    z.add_argument("--limit", type=int, default=0, help="only the first N samples")
    z.add_argument("--mode", choices=("train", "eval"), default="eval",
                   help="azo-report always uses a training-mode pass")
    z.add_argument("--out", required=True)
    z.set_defaults(func=cmd_analyze)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("SMASNN_THREADS", "1")
    try:
        n_threads = int(threads)
    except ValueError:
        print(f"error[config]: SMASNN_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=n_threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
