"""Network builders, SMA placement policies, model config files and parameter containers.

Placement policies name where attention modules go in a VGG-style stack
whose first conv block is the encoding block:

* T1 none, T2 encoding block only, T3 every block but the encoding one,
  T4 every block.
* S1 odd-numbered blocks (1-based) excluding the encoding block, S2
  even-numbered blocks, S3 blocks in the first half of the layer sequence
  excluding the encoding block, S4 blocks in the second half. Halves are
  taken over conv blocks plus affine layers, the first half holding
  ``ceil(L / 2)`` layers.
* L1 attention right after the convolution, L3 after the neuron layer.
  L2 (after batch norm) is rejected.
"""

from __future__ import annotations

import configparser
import io
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .azo import AzoConfig, AzoReport, azo_apply
from .errors import ConfigError, FormatError, ShapeError
from .layers import (
    AvgPoolGlobal, BatchNorm, Conv2d, Dropout, Flatten, Linear, MaxPool, Module, Sequential,
)
from .neuron import LIF, ATan, NeuronConfig, RectWindow
from .sma import SMA, SmaConfig, sma_forward
from .tensor import Value

BLOCK_KINDS = ("conv", "maxpool", "avgpool", "affine", "dropout")
SITE_POLICIES = ("T1", "T2", "T3", "T4", "S1", "S2", "S3", "S4")
LAYER_POSITIONS = ("L1", "L2", "L3")
L2_MESSAGE = (
    "placement L2 (attention after batch norm) is not supported: attention on "
    "normalized activations makes training fail to converge; use L1 or L3"
)


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    width: int = 0
    kernel: int = 3
    stride: int = 1
    window: int = 2
    p: float = 0.0
    sma: SmaConfig | None = None
    azo: AzoConfig | None = None

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.kind!r}; expected one of {BLOCK_KINDS}")


def parse_policy(policy: str) -> tuple[str, str]:
    text = policy.upper().replace("-", "+").replace(" ", "")
    site, _, pos = text.partition("+")
    if not pos and len(site) == 4:
        site, pos = site[:2], site[2:]
    pos = pos or "L1"
    if site not in SITE_POLICIES:
        raise ConfigError(f"unknown placement {site!r}; expected one of {SITE_POLICIES}")
    if pos == "L2":
        raise ConfigError(L2_MESSAGE)
    if pos not in LAYER_POSITIONS:
        raise ConfigError(f"unknown in-block position {pos!r}; expected L1 or L3")
    return site, pos


def sma_positions(site: str, n_conv: int, n_layers: int) -> list[int]:
    """0-based conv-block indices that carry attention under ``site``."""
    half = math.ceil(n_layers / 2)
    rules = {
        "T1": lambda i: False,
        "T2": lambda i: i == 0,
        "T3": lambda i: i > 0,
        "T4": lambda i: True,
        "S1": lambda i: i > 0 and (i + 1) % 2 == 1,
        "S2": lambda i: (i + 1) % 2 == 0,
        "S3": lambda i: 0 < i < half,
        "S4": lambda i: i >= half,
    }
    return [i for i in range(n_conv) if rules[site](i)]


# ---------------------------------------------------------------------------
# blocks


class SmaBlock(Module):
    """Attention module with optional zoneout on its output (training only)."""

    def __init__(self, channels: int, timesteps: int, config: SmaConfig, azo: AzoConfig | None, rng):
        super().__init__()
        self.sma = self.add_child("sma", SMA(channels, timesteps, config, rng))
        self.azo = azo
        self.trace = False
        self.last_weights: tuple[np.ndarray, np.ndarray] | None = None
        self.last_azo: list[AzoReport] = []

    def forward(self, x: Value) -> Value:
        z, wa, wb = sma_forward(x, self.sma)
        if self.trace:
            self.last_weights = (wa.data.copy(), wb.data.copy())
        if self.azo is not None and self.training:
            z, self.last_azo = azo_apply(z, wa.data, wb.data, self.azo, "train")
        else:
            self.last_azo = []
        return z


class ConvBlock(Module):
    """Conv -> BN -> LIF, with attention after the conv (L1) or after the neuron (L3)."""

    def __init__(self, c_in, c_out, kernel, stride, neuron, rng, timesteps, sma=None, azo=None, position="L1"):
        super().__init__()
        self.position = position
        self.conv = self.add_child("conv", Conv2d(c_in, c_out, kernel, rng, stride=stride))
        self.attn = None
        if sma is not None and position == "L1":
            self.attn = self.add_child("sma", SmaBlock(c_out, timesteps, sma, azo, rng))
        self.bn = self.add_child("bn", BatchNorm(c_out))
        self.lif = self.add_child("lif", LIF(neuron))
        if sma is not None and position == "L3":
            self.attn = self.add_child("sma", SmaBlock(c_out, timesteps, sma, azo, rng))

    def forward(self, x: Value) -> Value:
        x = self.conv(x)
        if self.attn is not None and self.position == "L1":
            x = self.attn(x)
        x = self.lif(self.bn(x))
        if self.attn is not None and self.position == "L3":
            x = self.attn(x)
        return x


class SpikingLinear(Module):
    def __init__(self, n_in, n_out, neuron, rng):
        super().__init__()
        self.fc = self.add_child("fc", Linear(n_in, n_out, rng))
        self.lif = self.add_child("lif", LIF(neuron))

    def forward(self, x):
        return self.lif(self.fc(x))


class MsResidualBlock(Module):
    """Membrane-shortcut block: ``x + BN(conv(LIF(BN(conv(LIF(x))))))``.

    The shortcut adds pre-activation values; the next neuron sees the sum.
    With ``bottleneck`` the body is 1x1 -> 3x3 -> 1x1 at a quarter width.
    """

    def __init__(self, width: int, neuron: NeuronConfig, rng, bottleneck: bool = False):
        super().__init__()
        layers = []
        if bottleneck:
            mid = max(width // 4, 1)
            plan = [(width, mid, 1), (mid, mid, 3), (mid, width, 1)]
        else:
            plan = [(width, width, 3), (width, width, 3)]
        for i, (ci, co, k) in enumerate(plan):
            layers += [(f"lif{i}", LIF(neuron)), (f"conv{i}", Conv2d(ci, co, k, rng)), (f"bn{i}", BatchNorm(co))]
        self.body = self.add_child("body", Sequential(layers))

    def forward(self, x: Value) -> Value:
        return x + self.body(x)


def residual_block_param_count(width: int, bottleneck: bool = False) -> int:
    if bottleneck:
        mid = max(width // 4, 1)
        return width * mid + 9 * mid * mid + mid * width + 2 * (mid + mid + width)
    return 2 * 9 * width * width + 4 * width


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "vgg"  # "vgg" or "ms_resnet"
    input_shape: tuple[int, int, int, int] = (8, 2, 32, 32)  # T, C, H, W
    classes: int = 4
    policy: str = "S3+L1"
    blocks: tuple[BlockSpec, ...] = ()
    stages: tuple[tuple[int, int], ...] = ((32, 2), (64, 2))  # ms_resnet (width, blocks)
    bottleneck: bool = False
    sma_enabled: bool = True  # ms_resnet: one attention module per stage
    head_dropout: float = 0.0  # ms_resnet
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    sma: SmaConfig = field(default_factory=SmaConfig)
    azo: AzoConfig | None = None
    seed: int = 0


def default_vgg_blocks(widths=(16, 32, 64), hidden: int = 64, dropout: float = 0.5) -> tuple[BlockSpec, ...]:
    specs = []
    for w in widths:
        specs += [BlockSpec("conv", width=w), BlockSpec("maxpool", window=2, stride=2)]
    specs.append(BlockSpec("affine", width=hidden))
    if dropout > 0:
        specs.append(BlockSpec("dropout", p=dropout))
    return tuple(specs)


class Model(Module):
    """Maps (B, T, C, H, W) event frames to per-timestep logits (B, T, classes)."""

    def __init__(self, config: ModelConfig, layers: Sequential, structure: list[str]):
        super().__init__()
        self.config = config
        self.layers = self.add_child("layers", layers)
        self.structure = structure

    def forward(self, x) -> Value:
        x = x if isinstance(x, Value) else Value(x)
        single = x.ndim == 4
        if single:
            x = x.reshape((1,) + x.shape)
        if x.shape[2:] != tuple(self.config.input_shape[1:]):
            raise ShapeError(f"model expects frames {self.config.input_shape[1:]}, got {x.shape[2:]}")
        out = self.layers(x)
        return out.reshape(out.shape[1:]) if single else out

    def set_rng(self, rng: np.random.Generator) -> None:
        for _, m in self.named_modules():
            if isinstance(m, Dropout):
                m.rng = rng

    def sma_blocks(self) -> list[tuple[str, SmaBlock]]:
        return [(n, m) for n, m in self.named_modules() if isinstance(m, SmaBlock)]

    def lif_layers(self) -> list[tuple[str, LIF]]:
        return [(n, m) for n, m in self.named_modules() if isinstance(m, LIF)]

    def set_azo(self, azo: AzoConfig | None) -> None:
        for _, blk in self.sma_blocks():
            blk.azo = azo

    def record(self, spikes: bool = True, traces: bool = False) -> None:
        for _, m in self.lif_layers():
            m.record = spikes
            if not spikes:
                m.last_spikes = None
        for _, blk in self.sma_blocks():
            blk.trace = traces


def _neuron_for(cfg: ModelConfig) -> NeuronConfig:
    return cfg.neuron


def build_vgg(config: ModelConfig) -> Model:
    t, c, h, w = config.input_shape
    site, pos = parse_policy(config.policy)
    specs = list(config.blocks) or list(default_vgg_blocks())
    n_conv = sum(s.kind == "conv" for s in specs)
    if n_conv == 0:
        raise ConfigError("a VGG model needs at least one conv block (the encoding block)")
    n_layers = n_conv + sum(s.kind == "affine" for s in specs) + 1
    allowed = set(sma_positions(site, n_conv, n_layers))
    rng = np.random.default_rng(config.seed)
    layers = Sequential()
    structure: list[str] = []
    conv_i = 0
    flat = None
    shape = (c, h, w)
    for idx, spec in enumerate(specs):
        name = f"b{idx}"
        if spec.kind == "conv":
            if flat is not None:
                raise ConfigError(f"block {idx}: conv after an affine layer")
            if spec.sma is not None and conv_i not in allowed:
                raise ConfigError(f"block {idx}: attention requested on conv block {conv_i}, not allowed by {site}")
            sma_cfg = (spec.sma or config.sma) if conv_i in allowed else None
            azo_cfg = spec.azo or config.azo
            layers.append(name, ConvBlock(shape[0], spec.width, spec.kernel, spec.stride, config.neuron, rng,
                                          t, sma_cfg, azo_cfg if sma_cfg else None, pos))
            hh = (shape[1] + 2 * (spec.kernel // 2) - spec.kernel) // spec.stride + 1
            ww = (shape[2] + 2 * (spec.kernel // 2) - spec.kernel) // spec.stride + 1
            shape = (spec.width, hh, ww)
            structure.append("conv")
            if sma_cfg is not None:
                structure.append("sma")
            conv_i += 1
        elif spec.kind == "maxpool":
            layers.append(name, MaxPool(spec.window, spec.stride or spec.window))
            s = spec.stride or spec.window
            shape = (shape[0], (shape[1] - spec.window) // s + 1, (shape[2] - spec.window) // s + 1)
            structure.append("maxpool")
        elif spec.kind == "avgpool":
            layers.append(name, AvgPoolGlobal())
            shape = (shape[0], 1, 1)
            structure.append("avgpool")
        elif spec.kind == "affine":
            if flat is None:
                layers.append(f"{name}_flatten", Flatten())
                flat = int(np.prod(shape))
            layers.append(name, SpikingLinear(flat, spec.width, config.neuron, rng))
            flat = spec.width
            structure.append("affine")
        elif spec.kind == "dropout":
            layers.append(name, Dropout(spec.p))
            structure.append("dropout")
        if min(shape[1:]) < 1:
            raise ConfigError(f"block {idx}: spatial extent collapsed to {shape[1:]}")
    if flat is None:
        layers.append("flatten", Flatten())
        flat = int(np.prod(shape))
    layers.append("readout", Linear(flat, config.classes, rng))
    structure.append("readout")
    return Model(replace(config, blocks=tuple(specs)), layers, structure)


def build_ms_resnet(config: ModelConfig) -> Model:
    t, c, h, w = config.input_shape
    rng = np.random.default_rng(config.seed)
    sma_cfg = config.sma
    layers = Sequential()
    structure = ["conv"]
    w0 = config.stages[0][0]
    layers.append("stem", Sequential([("conv", Conv2d(c, w0, 3, rng)), ("bn", BatchNorm(w0))]))
    prev = w0
    for s, (width, n_blocks) in enumerate(config.stages):
        if config.sma_enabled and width % sma_cfg.channel_reduction:
            raise ConfigError(f"stage {s}: width {width} not divisible by CR={sma_cfg.channel_reduction}")
        stage = Sequential()
        if s > 0:
            stage.append("down", Sequential([
                ("lif", LIF(config.neuron)), ("conv", Conv2d(prev, width, 3, rng, stride=2)), ("bn", BatchNorm(width)),
            ]))
            structure.append("conv")
        if config.sma_enabled:
            stage.append("sma", SmaBlock(width, t, sma_cfg, config.azo, rng))
            structure.append("sma")
        for i in range(n_blocks):
            stage.append(f"block{i}", MsResidualBlock(width, config.neuron, rng, config.bottleneck))
            structure.append("residual")
        layers.append(f"stage{s}", stage)
        prev = width
    layers.append("head_lif", LIF(config.neuron))
    layers.append("pool", AvgPoolGlobal())
    layers.append("flatten", Flatten())
    if config.head_dropout > 0:
        layers.append("dropout", Dropout(config.head_dropout))
    layers.append("readout", Linear(prev, config.classes, rng))
    structure.append("readout")
    return Model(config, layers, structure)


def build_model(config: ModelConfig) -> Model:
    if config.arch == "vgg":
        return build_vgg(config)
    if config.arch == "ms_resnet":
        return build_ms_resnet(config)
    raise ConfigError(f"unknown architecture {config.arch!r}")


# ---------------------------------------------------------------------------
# declarative config files


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())


def neuron_to_dict(n: NeuronConfig) -> dict[str, str]:
    d = {"tau": repr(n.tau), "u_threshold": repr(n.u_threshold), "u_reset": repr(n.u_reset),
         "detach_reset": str(n.detach_reset).lower()}
    if isinstance(n.surrogate, ATan):
        d.update(surrogate="atan", alpha=repr(n.surrogate.alpha))
    else:
        d.update(surrogate="rect", width=repr(n.surrogate.width))
    return d


def neuron_from_section(sec) -> NeuronConfig:
    kind = sec.get("surrogate", "atan").lower()
    if kind == "atan":
        sur = ATan(sec.getfloat("alpha", 2.0))
    elif kind in ("rect", "rectwindow"):
        sur = RectWindow(sec.getfloat("width", 1.0))
    else:
        raise ConfigError(f"unknown surrogate {kind!r}; expected atan or rect")
    return NeuronConfig(
        tau=sec.getfloat("tau", 2.0), u_threshold=sec.getfloat("u_threshold", 1.0),
        u_reset=sec.getfloat("u_reset", 0.0), surrogate=sur, detach_reset=sec.getboolean("detach_reset", True),
    )


def _sma_dict(s: SmaConfig) -> dict[str, str]:
    return {"kernel_sizes": ",".join(map(str, s.kernel_sizes)), "cr": str(s.channel_reduction),
            "tr": str(s.time_reduction), "activation": s.activation}


def _sma_from(sec, neuron: NeuronConfig, default: SmaConfig | None = None) -> SmaConfig:
    d = default or SmaConfig(neuron=neuron)
    return SmaConfig(
        kernel_sizes=_ints(sec.get("kernel_sizes", ",".join(map(str, d.kernel_sizes)))),
        channel_reduction=sec.getint("cr", d.channel_reduction),
        time_reduction=sec.getint("tr", d.time_reduction),
        activation=sec.get("activation", d.activation),
        neuron=neuron,
    )


def _azo_dict(a: AzoConfig | None) -> dict[str, str]:
    if a is None:
        return {"enabled": "false"}
    return {"enabled": "true", "rtr": repr(float(a.rtr)), "rcr": repr(float(a.rcr)), "guard": a.guard, "rank": a.rank}


def _azo_from(sec) -> AzoConfig | None:
    if not sec.getboolean("enabled", False):
        return None
    return AzoConfig(rtr=sec.getfloat("rtr", 4.0), rcr=sec.getfloat("rcr", 4.0),
                     guard=sec.get("guard", "time"), rank=sec.get("rank", "mean"))


def model_config_sections(cfg: ModelConfig) -> dict[str, dict[str, str]]:
    """Section -> key -> value mapping of the declarative model file."""
    out: dict[str, dict[str, str]] = {
        "model": {
            "arch": cfg.arch, "input": ",".join(map(str, cfg.input_shape)), "classes": str(cfg.classes),
            "policy": cfg.policy, "seed": str(cfg.seed),
        },
        "neuron": neuron_to_dict(cfg.neuron),
        "sma": _sma_dict(cfg.sma),
        "azo": _azo_dict(cfg.azo),
    }
    if cfg.arch == "ms_resnet":
        out["model"].update(bottleneck=str(cfg.bottleneck).lower(), sma_enabled=str(cfg.sma_enabled).lower(),
                            head_dropout=repr(cfg.head_dropout))
        for i, (wd, nb) in enumerate(cfg.stages):
            out[f"stage.{i}"] = {"width": str(wd), "blocks": str(nb)}
    else:
        for i, b in enumerate(cfg.blocks or default_vgg_blocks()):
            sec = {"kind": b.kind}
            if b.kind in ("conv", "affine"):
                sec["width"] = str(b.width)
            if b.kind == "conv":
                sec.update(kernel=str(b.kernel), stride=str(b.stride))
            if b.kind == "maxpool":
                sec.update(window=str(b.window), stride=str(b.stride))
            if b.kind == "dropout":
                sec["p"] = repr(b.p)
            if b.sma is not None:
                sec.update({f"sma_{k}": v for k, v in _sma_dict(b.sma).items()})
            out[f"block.{i}"] = sec
    return out


def model_config_to_text(cfg: ModelConfig) -> str:
    parser = configparser.ConfigParser()
    parser.read_dict(model_config_sections(cfg))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _numbered(parser, prefix: str) -> list[str]:
    names = [s for s in parser.sections() if s.startswith(prefix)]
    try:
        return sorted(names, key=lambda s: int(s[len(prefix):]))
    except ValueError:
        raise ConfigError(f"section names must look like [{prefix}N]: {names}") from None


def model_config_from_parser(parser: configparser.ConfigParser) -> ModelConfig:
    if not parser.has_section("model"):
        raise ConfigError("model config needs a [model] section")
    m = parser["model"]
    neuron = neuron_from_section(parser["neuron"]) if parser.has_section("neuron") else NeuronConfig()
    empty = configparser.ConfigParser()
    empty.read_dict({"x": {}})
    sma = _sma_from(parser["sma"] if parser.has_section("sma") else empty["x"], neuron)
    azo = _azo_from(parser["azo"]) if parser.has_section("azo") else None
    arch = m.get("arch", "vgg")
    try:
        shape = _ints(m.get("input", "8,2,32,32"))
        if len(shape) != 4:
            raise ConfigError(f"[model] input must be T,C,H,W, got {shape}")
        common = dict(arch=arch, input_shape=shape, classes=m.getint("classes", 4),
                      policy=m.get("policy", "S3+L1"), neuron=neuron, sma=sma, azo=azo, seed=m.getint("seed", 0))
        if arch == "ms_resnet":
            stages = tuple((parser[s].getint("width"), parser[s].getint("blocks")) for s in _numbered(parser, "stage."))
            if not stages:
                raise ConfigError("ms_resnet config needs [stage.N] sections")
            return ModelConfig(stages=stages, bottleneck=m.getboolean("bottleneck", False),
                               sma_enabled=m.getboolean("sma_enabled", True),
                               head_dropout=m.getfloat("head_dropout", 0.0), **common)
        blocks = []
        for s in _numbered(parser, "block."):
            sec = parser[s]
            kind = sec.get("kind", "conv")
            bsma = None
            if any(k.startswith("sma_") for k in sec):
                sub = configparser.ConfigParser()
                sub.read_dict({"x": {k[4:]: v for k, v in sec.items() if k.startswith("sma_")}})
                bsma = _sma_from(sub["x"], neuron, sma)
            blocks.append(BlockSpec(
                kind, width=sec.getint("width", 0), kernel=sec.getint("kernel", 3),
                stride=sec.getint("stride", 2 if kind == "maxpool" else 1), window=sec.getint("window", 2),
                p=sec.getfloat("p", 0.0), sma=bsma,
            ))
        return ModelConfig(blocks=tuple(blocks), **common)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad model config value: {exc}") from None


def load_model_config(path: str | Path) -> ModelConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model config not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    return model_config_from_parser(parser)


# ---------------------------------------------------------------------------
# parameter container
#
# b"SMAP" | u16 version | u32 meta_len | meta (UTF-8 JSON) | u32 count |
# count * (u16 name_len | name | u8 ndim | ndim * u32 dim | prod(dims) * f64 LE)

CONTAINER_MAGIC = b"SMAP"
CONTAINER_VERSION = 1


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [CONTAINER_MAGIC, struct.pack("<HI", CONTAINER_VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode()
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"parameter file not found: {path}")
    raw = path.read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated at offset {len(raw)} while reading {what} "
                              f"(needed {n} bytes at offset {pos})")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CONTAINER_MAGIC:
        raise FormatError(f"{path}: not a parameter container (bad magic)")
    version, meta_len = struct.unpack("<HI", take(6, "header"))
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    meta = json.loads(take(meta_len, "metadata").decode())
    (count,) = struct.unpack("<I", take(4, "entry count"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode()
        (ndim,) = struct.unpack("<B", take(1, f"rank of {name}"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"shape of {name}"))
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * n, f"data of {name}"), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes after offset {pos}")
    return arrays, meta


def save_params(model: Model, path: str | Path) -> None:
    write_arrays(path, model.state_arrays(), {"model_config": model_config_to_text(model.config)})


def load_params(model: Model, path: str | Path) -> dict:
    """Copy stored parameters and buffers into ``model`` after validating names and shapes."""
    arrays, meta = read_arrays(path)
    expected = model.state_arrays()
    problems = []
    for (en, ea), (gn, ga) in zip(expected.items(), arrays.items()):
        if en != gn:
            problems.append(f"first mismatched path: expected {en!r}, file has {gn!r}")
            break
        if ea.shape != ga.shape:
            problems.append(f"first mismatched path: {en!r} expected shape {ea.shape}, file has {ga.shape}")
            break
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in expected]
    if not problems and (missing or extra):
        problems.append("name sets differ")
    if problems:
        detail = "; ".join(problems)
        if missing:
            detail += f"; missing {len(missing)} (e.g. {missing[:3]})"
        if extra:
            detail += f"; unexpected {len(extra)} (e.g. {extra[:3]})"
        raise ShapeError(f"{path}: parameters do not match the model: {detail}")
    for name, arr in arrays.items():
        expected[name][...] = arr
    return meta
