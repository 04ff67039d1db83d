"""Net1D regressor: residual 1-D convolution stages with squeeze-and-excitation.

Layout for the default configuration (input 1 x 1800)::

    stem    conv(32, k15, s2) -> bn -> relu [-> maxpool]      1800 -> 900
    stage1  2 blocks, 32 ch,  first block stride 2             900 -> 450
    stage2  2 blocks, 64 ch                                    450 -> 225
    stage3  2 blocks, 128 ch                                   225 -> 113
    stage4  3 blocks, 256 ch                                   113 -> 57
    head    global-avg-pool -> dense(64) -> relu -> dense(1)

A block is ``relu(se(bn(conv(relu(bn(conv(x)))))) + shortcut(x))``; the
shortcut is a strided 1x1 convolution (with bias) whenever the channel count
or length changes, identity otherwise. Convolutions followed by batchnorm
carry no bias. Inputs are centred and scaled by fixed constants before the
stem and the head output is de-standardised with the label constants
stored on the model, so ``forward`` returns days.
"""
from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor

CHECKPOINT_MAGIC = b"CTGAGE01"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class Net1DConfig:
    in_channels: int = 1
    input_len: int = 1800
    stem_channels: int = 32
    stem_kernel: int = 15
    stem_stride: int = 2
    stem_pool: int = 1
    # (blocks, channels, kernel, stride) per stage; stride applies to the first block
    stages: tuple = ((2, 32, 7, 2), (2, 64, 7, 2), (2, 128, 7, 2), (3, 256, 7, 2))
    se_reduction: int = 4
    head_hidden: int = 64
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    input_center: float = 140.0
    input_scale: float = 25.0

    @classmethod
    def compact(cls, **overrides) -> "Net1DConfig":
        """Narrow variant for CPU-scale experiments (~104k parameters)."""
        base = dict(stem_channels=16, stem_kernel=15, stem_stride=2, stem_pool=2,
                    stages=((1, 16, 7, 2), (1, 32, 7, 2), (1, 48, 7, 2), (1, 64, 7, 2)),
                    head_hidden=32)
        base.update(overrides)
        return cls(**base)

    def length_schedule(self) -> list:
        """Temporal length after the stem and after each stage."""
        lengths = []
        n = T.conv_output_length(self.input_len, self.stem_kernel, self.stem_stride)
        if self.stem_pool > 1:
            n = (n - self.stem_pool) // self.stem_pool + 1 if n >= self.stem_pool else 0
        lengths.append(n)
        for _, _, kernel, stride in self.stages:
            n = T.conv_output_length(n, kernel, stride)
            lengths.append(n)
        return lengths

    def validate(self) -> "Net1DConfig":
        if self.in_channels not in (1, 2):
            raise ConfigError(f"in_channels must be 1 or 2, got {self.in_channels}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        if self.se_reduction < 1 or self.bn_eps <= 0 or self.input_scale <= 0:
            raise ConfigError("se_reduction >= 1, bn_eps > 0 and input_scale > 0 required")
        cum = self.stem_stride * max(self.stem_pool, 1)
        if cum > self.input_len:
            raise ConfigError(f"stem: stride product {cum} exceeds input length {self.input_len}")
        for i, (blocks, channels, kernel, stride) in enumerate(self.stages, 1):
            if blocks < 1 or kernel < 1 or stride < 1:
                raise ConfigError(f"stage {i}: blocks, kernel and stride must be >= 1")
            if channels < self.se_reduction:
                raise ConfigError(f"stage {i}: {channels} channels < se_reduction {self.se_reduction}")
            cum *= stride
            if cum > self.input_len:
                raise ConfigError(f"stage {i}: stride product {cum} exceeds input length {self.input_len}")
        if min(self.length_schedule()) < 1:
            raise ConfigError(f"length schedule underflows: {self.length_schedule()}")
        return self

    def to_json(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Net1DConfig":
        d = dict(d)
        d["stages"] = tuple(tuple(int(v) for v in s) for s in d["stages"])
        return cls(**d)


def _block_specs(cfg: Net1DConfig):
    cin = cfg.stem_channels
    for s, (blocks, channels, kernel, stride) in enumerate(cfg.stages, 1):
        for b in range(1, blocks + 1):
            st = stride if b == 1 else 1
            yield f"stage{s}.block{b}", cin, channels, kernel, st
            cin = channels


def parameter_shapes(cfg: Net1DConfig) -> list:
    """Ordered (name, shape) list; this order is the checkpoint contract."""
    shapes = [("stem.conv.weight", (cfg.stem_channels, cfg.in_channels, cfg.stem_kernel)),
              ("stem.bn.gamma", (cfg.stem_channels,)),
              ("stem.bn.beta", (cfg.stem_channels,))]
    cout = cfg.stem_channels
    for name, cin, cout, k, stride in _block_specs(cfg):
        red = cout // cfg.se_reduction
        shapes += [(f"{name}.conv1.weight", (cout, cin, k)),
                   (f"{name}.bn1.gamma", (cout,)), (f"{name}.bn1.beta", (cout,)),
                   (f"{name}.conv2.weight", (cout, cout, k)),
                   (f"{name}.bn2.gamma", (cout,)), (f"{name}.bn2.beta", (cout,)),
                   (f"{name}.se.fc1.weight", (cout, red)), (f"{name}.se.fc1.bias", (red,)),
                   (f"{name}.se.fc2.weight", (red, cout)), (f"{name}.se.fc2.bias", (cout,))]
        if cin != cout or stride != 1:
            shapes += [(f"{name}.shortcut.weight", (cout, cin, 1)),
                       (f"{name}.shortcut.bias", (cout,))]
    shapes += [("head.fc1.weight", (cout, cfg.head_hidden)), ("head.fc1.bias", (cfg.head_hidden,)),
               ("head.fc2.weight", (cfg.head_hidden, 1)), ("head.fc2.bias", (1,))]
    return shapes


def buffer_shapes(cfg: Net1DConfig) -> list:
    names = ["stem.bn"]
    for name, *_ in _block_specs(cfg):
        names += [f"{name}.bn1", f"{name}.bn2"]
    shapes = []
    widths = dict((n.rsplit(".", 1)[0], s[0]) for n, s in parameter_shapes(cfg) if n.endswith(".gamma"))
    for n in names:
        shapes += [(f"{n}.running_mean", (widths[n],)), (f"{n}.running_var", (widths[n],))]
    return shapes


def is_norm_param(name: str) -> bool:
    return name.endswith(".gamma") or name.endswith(".beta")


@dataclass
class Model:
    config: Net1DConfig
    params: dict
    buffers: dict
    mode: str = "train"
    label_mean: float = 0.0
    label_sd: float = 1.0
    meta: dict = field(default_factory=dict)

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "eval"
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "Model":
        new = copy.deepcopy(self)
        for name, p in new.params.items():
            new.params[name] = Tensor(p.data.astype(dtype), requires_grad=True, name=name)
        new.buffers = {k: v.astype(dtype) for k, v in new.buffers.items()}
        return new

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict:
        out = {n: p.data for n, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state_arrays(self, arrays: dict):
        for n, p in self.params.items():
            p.data[...] = arrays[n]
        for n, b in self.buffers.items():
            b[...] = arrays[n]

    # -------------------------------------------------------------- forward

    def _bn(self, x: Tensor, prefix: str) -> Tensor:
        p, c = self.params, self.config
        return T.batchnorm1d(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"],
                             self.buffers[f"{prefix}.running_mean"],
                             self.buffers[f"{prefix}.running_var"],
                             training=self.mode == "train", momentum=c.bn_momentum, eps=c.bn_eps)

    def _se(self, x: Tensor, prefix: str, se_enabled: bool) -> Tensor:
        if not se_enabled:
            return x
        p = self.params
        z = T.global_avg_pool(x)
        z = T.relu(T.dense(z, p[f"{prefix}.fc1.weight"], p[f"{prefix}.fc1.bias"]))
        s = T.sigmoid(T.dense(z, p[f"{prefix}.fc2.weight"], p[f"{prefix}.fc2.bias"]))
        return T.scale_channels(x, s)

    def _block(self, x: Tensor, name: str, kernel: int, stride: int, se_enabled: bool) -> Tensor:
        p = self.params
        h = T.conv1d(x, p[f"{name}.conv1.weight"], stride=stride)
        h = T.relu(self._bn(h, f"{name}.bn1"))
        h = T.conv1d(h, p[f"{name}.conv2.weight"], stride=1)
        h = self._bn(h, f"{name}.bn2")
        h = self._se(h, f"{name}.se", se_enabled)
        if f"{name}.shortcut.weight" in p:
            sc = T.conv1d(x, p[f"{name}.shortcut.weight"], p[f"{name}.shortcut.bias"],
                          stride=stride, padding="valid")
        else:
            sc = x
        return T.relu(T.add(h, sc))

    def forward_standardized(self, x: Tensor, se_enabled: bool = True) -> Tensor:
        """Head output in label z-units, shape [b]."""
        c, p = self.config, self.params
        if x.data.ndim != 3 or x.shape[1] != c.in_channels or x.shape[2] != c.input_len:
            raise T.ShapeError(f"expected input [b, {c.in_channels}, {c.input_len}], got {x.shape}")
        h = T.affine(x, 1.0 / c.input_scale, -c.input_center / c.input_scale)
        h = T.conv1d(h, p["stem.conv.weight"], stride=c.stem_stride)
        h = T.relu(self._bn(h, "stem.bn"))
        if c.stem_pool > 1:
            h = T.max_pool1d(h, c.stem_pool, c.stem_pool)
        for name, _, _, kernel, stride in _block_specs(c):
            h = self._block(h, name, kernel, stride, se_enabled)
        h = T.global_avg_pool(h)
        h = T.relu(T.dense(h, p["head.fc1.weight"], p["head.fc1.bias"]))
        h = T.dense(h, p["head.fc2.weight"], p["head.fc2.bias"])
        return T.reshape(h, (x.shape[0],))

    def forward(self, x: Tensor, se_enabled: bool = True) -> Tensor:
        """Predicted ages in days, shape [b]."""
        z = self.forward_standardized(x, se_enabled)
        return T.affine(z, self.label_sd, self.label_mean)


def build(config: Net1DConfig, seed: int = 0, dtype=np.float32) -> Model:
    """He-uniform weights drawn in parameter order; zero biases; gamma 1, beta 0."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config):
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif name.endswith(".beta") or name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 3 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    buffers = {}
    for name, shape in buffer_shapes(config):
        buffers[name] = (np.zeros(shape) if name.endswith("mean") else np.ones(shape)).astype(dtype)
    return Model(config=config, params=params, buffers=buffers)


def predict(model: Model, batch, chunk: int = 256) -> np.ndarray:
    """Ages in days for batch[b, c, input_len]; evaluated without recording a tape."""
    data = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    data = data.astype(model.dtype, copy=False)
    c = model.config
    if data.ndim != 3 or data.shape[1:] != (c.in_channels, c.input_len):
        raise T.ShapeError(f"expected input [b, {c.in_channels}, {c.input_len}], got {data.shape}")
    out = []
    with T.no_tape():
        for i in range(0, data.shape[0], chunk):
            out.append(model.forward(Tensor(data[i:i + chunk])).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def input_gradient(model, sample) -> np.ndarray:
    """d(predicted age)/d(input) for sample[1, c, L], summed over channels.

    ``model`` only needs a ``forward(Tensor) -> Tensor[1]`` method.
    """
    data = sample.data if isinstance(sample, Tensor) else np.asarray(sample)
    dtype = getattr(model, "dtype", data.dtype)
    x = Tensor(np.array(data, dtype=dtype), requires_grad=True)
    with Tape() as tape:
        y = T.sum_(model.forward(x))
    backward(tape, y, wrt=[x])
    return x.grad.sum(axis=1)[0].astype(np.float64)


def backward(tape, loss, wrt=None):
    T.backward(tape, loss, wrt=wrt)


# ---------------------------------------------------------------- checkpoint

def save_checkpoint(model: Model, path, extra: dict | None = None, arrays: dict | None = None) -> None:
    """Header (magic, version, JSON length, JSON) then float32 little-endian arrays.

    The JSON lists every array name and shape in file order: parameters in
    ``parameter_shapes`` order, then batchnorm buffers in ``buffer_shapes``
    order, then any extra arrays (e.g. optimizer state).
    """
    entries = [(n, p.data) for n, p in model.params.items()]
    entries += [(n, b) for n, b in model.buffers.items()]
    entries += sorted((arrays or {}).items())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "label_mean": model.label_mean,
        "label_sd": model.label_sd,
        "n_params": len(model.params),
        "arrays": [[n, list(a.shape)] for n, a in entries],
        "meta": model.meta,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    for _, a in entries:
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[Model, dict, dict]:
    """Returns (model in eval mode, header extra, extra arrays)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += 4 * count
    config = Net1DConfig.from_json(header["config"])
    model = build(config, seed=0)
    for n, p in model.params.items():
        p.data = arrays.pop(n).astype(np.float32)
        p.grad = np.zeros_like(p.data)
    for n in list(model.buffers):
        model.buffers[n] = arrays.pop(n).astype(np.float32)
    model.label_mean = float(header["label_mean"])
    model.label_sd = float(header["label_sd"])
    model.meta = header.get("meta", {})
    return model.eval(), header.get("extra", {}), arrays
