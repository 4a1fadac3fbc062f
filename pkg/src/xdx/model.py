"""Dense-connectivity CNN classifiers built from a declarative description.

A network is a stem (7x7 stride-2 conv, BN, ReLU, 3x3 stride-2 max pool),
a sequence of dense blocks joined by channel-halving transitions, a final
BN+ReLU (the explanation target layer), global average pooling, and a
linear head. Each dense layer is BN -> ReLU -> 3x3 conv producing
``growth_rate`` channels, concatenated onto its input.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import engine
from .engine import Tensor
from .rng import SplitMix64

HEAD_KINDS = ("binary_sigmoid", "softmax", "multilabel_sigmoid")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

WEIGHT_MAGIC = b"XDXW"
WEIGHT_VERSION = 1


@dataclass(frozen=True)
class Head:
    kind: str
    units: int

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.kind == "binary_sigmoid" and self.units != 1:
            raise ValueError("binary_sigmoid head has exactly 1 logit")
        if self.units < 1:
            raise ValueError("head needs at least 1 unit")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; the channel trace is fully determined.

    After block i the channel count is channels_before + block_sizes[i] *
    growth_rate; each transition halves channels (floor) and halves the
    spatial size with 2x2 average pooling.
    """

    init_channels: int
    growth_rate: int
    block_sizes: tuple
    head: Head
    input_size: int = 224

    def __post_init__(self):
        if not self.block_sizes:
            raise ValueError("block_sizes must be nonempty")
        if any(b < 1 for b in self.block_sizes):
            raise ValueError("block_sizes entries must be positive")
        if self.init_channels < 1 or self.growth_rate < 1:
            raise ValueError("init_channels and growth_rate must be positive")
        object.__setattr__(self, "block_sizes", tuple(self.block_sizes))

    def channel_trace(self) -> list:
        """Channel count after the stem and after every block/transition."""
        trace = [self.init_channels]
        c = self.init_channels
        for i, b in enumerate(self.block_sizes):
            c = c + b * self.growth_rate
            trace.append(c)
            if i < len(self.block_sizes) - 1:
                c = c // 2
                trace.append(c)
        return trace

    def feature_channels(self) -> int:
        return self.channel_trace()[-1]

    def feature_size(self) -> int:
        """Spatial side of the final feature map: stem conv, stem pool, and
        each transition halve the input (ceil division at each step)."""
        s = _halve(self.input_size)  # stem conv, stride 2 pad 3
        s = _halve(s)  # stem pool, stride 2 pad 1
        for _ in range(len(self.block_sizes) - 1):
            s = (s - 2) // 2 + 1  # transition 2x2 average pool, stride 2
        return s


def _halve(s: int) -> int:
    return (s + 1) // 2


def densenet121_spec(head: Head, input_size: int = 224) -> NetworkSpec:
    return NetworkSpec(64, 32, (6, 12, 24, 16), head, input_size)


def toy_spec(head: Head, input_size: int = 32) -> NetworkSpec:
    return NetworkSpec(8, 4, (2, 2), head, input_size)


PRESETS: dict = {
    "densenet121": densenet121_spec,
    "toy": toy_spec,
}


def spec_from_preset(name: str, head: Head, input_size: Optional[int] = None) -> NetworkSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    if input_size is None:
        return PRESETS[name](head)
    return PRESETS[name](head, input_size)


# -- layers ---------------------------------------------------------------------


def _he_uniform(rng: SplitMix64, shape: tuple, fan_in: int) -> np.ndarray:
    """He-uniform init, generated as float32 values so that weight files
    (which store float32) round-trip bit-exactly for fresh networks."""
    bound = math.sqrt(6.0 / fan_in)
    flat = (2.0 * rng.uniform_array(int(np.prod(shape))) - 1.0) * bound
    return flat.astype(np.float32).astype(engine.DTYPE).reshape(shape)


class Conv:
    def __init__(self, name: str, cin: int, cout: int, k: int, stride: int, pad: int, rng: SplitMix64):
        self.name = name
        self.stride = stride
        self.pad = pad
        self.weight = Tensor(_he_uniform(rng, (cout, cin, k, k), cin * k * k), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return engine.conv2d(x, self.weight, stride=self.stride, pad=self.pad)

    def params(self) -> dict:
        return {f"{self.name}.weight": self.weight}

    def state(self) -> dict:
        return self.params()


class BatchNorm:
    """Per-channel batch normalization with running statistics.

    Train mode normalizes by batch statistics (biased variance) and
    updates running stats with momentum 0.1; infer mode uses the running
    stats. Scale and shift are learnable.
    """

    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=engine.DTYPE)
        self.running_var = np.ones(channels, dtype=engine.DTYPE)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if x.ndim != 4:
            raise ValueError(f"batch_norm expects [N,C,H,W], got shape {tuple(x.shape)}")
        if x.shape[1] != self.channels:
            raise ValueError(
                f"channel mismatch: input has {x.shape[1]} channels, norm state has {self.channels}"
            )
        c = self.channels
        if train:
            m = engine.mean(x, axis=(0, 2, 3), keepdims=True)
            centered = x - m
            var = engine.mean(centered * centered, axis=(0, 2, 3), keepdims=True)
            inv_std = engine.power(var + engine.Tensor(np.full((1, c, 1, 1), BN_EPS)), -0.5)
            xn = centered * inv_std
            with engine.no_grad():
                bm = m.data.reshape(c)
                bv = var.data.reshape(c)
                self.running_mean = (1.0 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * bm
                self.running_var = (1.0 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * bv
        else:
            rm = Tensor(self.running_mean.reshape(1, c, 1, 1))
            inv = Tensor(1.0 / np.sqrt(self.running_var + BN_EPS).reshape(1, c, 1, 1))
            xn = (x - rm) * inv
        g = engine.reshape(self.gamma, (1, c, 1, 1))
        b = engine.reshape(self.beta, (1, c, 1, 1))
        return xn * g + b

    def params(self) -> dict:
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def state(self) -> dict:
        d = self.params()
        d[f"{self.name}.running_mean"] = self.running_mean
        d[f"{self.name}.running_var"] = self.running_var
        return d


def batch_norm(x: Tensor, state: BatchNorm, mode: str) -> Tensor:
    """Functional form: mode is 'train' or 'infer'."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return state(x, train=(mode == "train"))


class Linear:
    def __init__(self, name: str, fin: int, fout: int, rng: SplitMix64):
        self.name = name
        self.weight = Tensor(_he_uniform(rng, (fin, fout), fin), requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return engine.matmul(x, self.weight) + self.bias

    def params(self) -> dict:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def state(self) -> dict:
        return self.params()


class DenseLayer:
    """BN -> ReLU -> 3x3 conv adding growth_rate channels via concatenation."""

    def __init__(self, name: str, cin: int, growth: int, rng: SplitMix64):
        self.bn = BatchNorm(f"{name}.bn", cin)
        self.conv = Conv(f"{name}.conv", cin, growth, 3, 1, 1, rng)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        out = self.conv(engine.relu(self.bn(x, train)))
        return engine.concat_channels(x, out)

    def modules(self):
        return (self.bn, self.conv)


class Transition:
    """BN -> ReLU -> 1x1 conv halving channels -> 2x2 average pool."""

    def __init__(self, name: str, cin: int, rng: SplitMix64):
        self.bn = BatchNorm(f"{name}.bn", cin)
        self.conv = Conv(f"{name}.conv", cin, cin // 2, 1, 1, 0, rng)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        h = self.conv(engine.relu(self.bn(x, train)))
        return engine.pool2d(h, "average", 2, 2)

    def modules(self):
        return (self.bn, self.conv)


class Network:
    """Instantiated network with uniquely named parameter tensors."""

    def __init__(self, spec: NetworkSpec, seed: int):
        self.spec = spec
        self.seed = seed
        rng = SplitMix64(seed)

        self.stem_conv = Conv("stem.conv", 1, spec.init_channels, 7, 2, 3, rng)
        self.stem_bn = BatchNorm("stem.bn", spec.init_channels)
        self.blocks: list = []
        self.transitions: list = []
        c = spec.init_channels
        for bi, layers in enumerate(spec.block_sizes, start=1):
            block = []
            for li in range(1, layers + 1):
                block.append(DenseLayer(f"block{bi}.layer{li}", c, spec.growth_rate, rng))
                c += spec.growth_rate
            self.blocks.append(block)
            if bi < len(spec.block_sizes):
                self.transitions.append(Transition(f"transition{bi}", c, rng))
                c //= 2
        self.final_bn = BatchNorm("final_bn", c)
        self.head = Linear("head", c, spec.head.units, rng)
        self._modules = self._collect_modules()
        names = list(self.named_parameters())
        if len(names) != len(set(names)):
            raise AssertionError("duplicate parameter name")

    def _collect_modules(self) -> list:
        mods = [self.stem_conv, self.stem_bn]
        ti = iter(self.transitions)
        for bi, block in enumerate(self.blocks):
            for layer in block:
                mods.extend(layer.modules())
            if bi < len(self.blocks) - 1:
                mods.extend(next(ti).modules())
        mods.extend([self.final_bn, self.head])
        return mods

    # -- parameter access ------------------------------------------------------

    def named_parameters(self) -> dict:
        out: dict = {}
        for m in self._modules:
            out.update(m.params())
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def state_tensors(self) -> dict:
        """All serializable tensors: parameters plus BN running stats."""
        out: dict = {}
        for m in self._modules:
            out.update(m.state())
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            if flag and p.grad is None:
                p.grad = np.zeros_like(p.data)

    # -- forward -----------------------------------------------------------------

    def capture_points(self) -> list:
        names = ["stem"]
        for bi in range(1, len(self.blocks) + 1):
            names.append(f"block{bi}")
            if bi < len(self.blocks):
                names.append(f"transition{bi}")
        names.append("features")
        return names

    def _stages(self) -> list:
        stages = [("stem", self._run_stem)]
        for bi, block in enumerate(self.blocks, start=1):
            stages.append((f"block{bi}", self._block_runner(block)))
            if bi < len(self.blocks):
                stages.append((f"transition{bi}", self._transition_runner(self.transitions[bi - 1])))
        stages.append(("features", self._run_features))
        return stages

    def _run_stem(self, h: Tensor, train: bool) -> Tensor:
        h = self.stem_conv(h)
        h = engine.relu(self.stem_bn(h, train))
        return engine.pool2d(h, "max", 3, 2, pad=1)

    @staticmethod
    def _block_runner(block) -> Callable:
        def run(h: Tensor, train: bool) -> Tensor:
            for layer in block:
                h = layer(h, train)
            return h

        return run

    @staticmethod
    def _transition_runner(trans) -> Callable:
        def run(h: Tensor, train: bool) -> Tensor:
            return trans(h, train)

        return run

    def _run_features(self, h: Tensor, train: bool) -> Tensor:
        return engine.relu(self.final_bn(h, train))

    def _check_input(self, batch: Tensor) -> tuple:
        single = batch.ndim == 3
        if not single and batch.ndim != 4:
            raise ValueError(f"expected [1,H,W] or [N,1,H,W] input, got shape {tuple(batch.shape)}")
        shape = batch.shape[-3:]
        want = (1, self.spec.input_size, self.spec.input_size)
        if tuple(shape) != want:
            raise ValueError(f"input shape mismatch: expected {want}, got {tuple(shape)}")
        x = engine.reshape(batch, (1,) + tuple(batch.shape)) if single else batch
        return x, single

    def _head_from_features(self, h: Tensor) -> Tensor:
        pooled = engine.mean(h, axis=(2, 3))
        return self.head(pooled)

    def forward(self, batch: Tensor, train: bool = False) -> Tensor:
        """Logits for a [1,H,W] image or [N,1,H,W] batch. The head
        activation is not applied; losses and predictors own it."""
        x, single = self._check_input(batch)
        for _, run in self._stages():
            x = run(x, train)
        logits = self._head_from_features(x)
        return engine.reshape(logits, (self.spec.head.units,)) if single else logits

    def forward_with_capture(self, batch: Tensor, layer: str = "features"):
        """Forward returning (logits, captured) where ``captured`` is a fresh
        gradient-tracked leaf holding the named stage's output.

        The prefix up to the capture point runs without graph construction;
        parameters never participate, so their data and gradients are
        untouched by a subsequent backward pass.
        """
        stages = self._stages()
        names = [n for n, _ in stages]
        if layer not in names:
            raise ValueError(f"unknown capture layer {layer!r}; known: {names}")
        x, single = self._check_input(batch)
        with engine.no_grad():
            for name, run in stages:
                x = run(x, train=False)
                if name == layer:
                    break
        captured = Tensor(x.data.copy(), requires_grad=True)
        was = {id(p): p.requires_grad for p in self.parameters()}
        self.set_requires_grad(False)
        try:
            h = captured
            after = names.index(layer) + 1
            for _, run in stages[after:]:
                h = run(h, train=False)
            logits = self._head_from_features(h)
        finally:
            for p in self.parameters():
                p.requires_grad = was[id(p)]
        logits = engine.reshape(logits, (self.spec.head.units,)) if single else logits
        return logits, captured


def build_network(spec: NetworkSpec, seed: int) -> Network:
    """Deterministically initialized network: same spec and seed give
    bit-identical parameters."""
    return Network(spec, seed)


def forward(net: Network, batch: Tensor) -> Tensor:
    return net.forward(batch, train=False)


# -- weight file format -----------------------------------------------------------
#
# magic "XDXW", then little-endian: u32 version=1, u32 tensor_count, and per
# tensor {u16 name_len, UTF-8 name, u8 ndim, u32 dims[ndim], f32 data row-major}.


def save_weights(net: Network, path) -> None:
    tensors = net.state_tensors()
    buf = bytearray()
    buf += WEIGHT_MAGIC
    buf += struct.pack("<II", WEIGHT_VERSION, len(tensors))
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else t
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def read_weight_file(path) -> dict:
    """Parse a weight file into {name: float32 ndarray}; any truncation or
    header mismatch rejects the whole file."""
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHT_MAGIC:
        raise ValueError(f"bad magic: expected {WEIGHT_MAGIC!r}, got {raw[:4]!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ValueError("truncated weight file")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    out: dict = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n_vals = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(4 * n_vals), dtype="<f4").reshape(dims)
        if name in out:
            raise ValueError(f"duplicate tensor name {name!r} in weight file")
        out[name] = data
    if pos != len(raw):
        raise ValueError(f"{len(raw) - pos} trailing bytes after last tensor")
    return out


def load_weights(net: Network, path, partial: bool = False) -> list:
    """Load a weight file into the network; returns the names loaded.

    Without ``partial`` the file's name set must equal the network's.
    With ``partial`` the intersection is loaded (transfer-learning use)
    and must be nonempty. Validation happens before any assignment, so a
    rejected load leaves the network untouched.
    """
    loaded = read_weight_file(path)
    targets = net.state_tensors()
    unknown = sorted(set(loaded) - set(targets))
    missing = sorted(set(targets) - set(loaded))
    if not partial:
        if unknown:
            raise ValueError(f"unknown tensor name {unknown[0]!r} (use partial load to skip)")
        if missing:
            raise ValueError(f"weight file missing tensor {missing[0]!r} (use partial load)")
    names = sorted(set(loaded) & set(targets))
    if partial and not names:
        raise ValueError("partial load matched no tensor names")
    for name in names:
        want = targets[name]
        want_shape = tuple(want.data.shape) if isinstance(want, Tensor) else tuple(want.shape)
        if tuple(loaded[name].shape) != want_shape:
            raise ValueError(
                f"shape mismatch for {name!r}: file has {tuple(loaded[name].shape)}, "
                f"network has {want_shape}"
            )
    for name in names:
        arr = loaded[name].astype(engine.DTYPE)
        tgt = targets[name]
        if isinstance(tgt, Tensor):
            tgt.data[...] = arr
        else:
            tgt[...] = arr
    return names
