"""Generator, attention and discriminator networks from CycleGAN-style layer notation.

Layer strings follow the usual grammar: ``c7s1-32-R`` is a 7x7 convolution,
stride 1, 32 filters, ReLU; ``tc64s2`` a 3x3 stride-2 transpose convolution
with ReLU; ``r128`` a residual block of two 3x3 convolutions; ``up2`` nearest
neighbour upsampling. Activation suffixes: R relu, LR leaky relu (0.2),
S sigmoid, T tanh, none for a linear head.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from .tensor import Tensor, ShapeError
from .tensor import ops

ROLES = ("generator", "attention", "discriminator")
KERNELS = (7, 4, 3, 1)
INIT_STD = 0.02

_SUFFIX = {"R": "relu", "LR": "leaky_relu_0.2", "S": "sigmoid", "T": "tanh", None: "none"}
_CONV_RE = re.compile(r"^c(\d+)s(\d+)-(\d+)(?:-(R|LR|S|T))?$")
_TCONV_RE = re.compile(r"^tc(\d+)s(\d+)$")
_RES_RE = re.compile(r"^r(\d+)$")

GENERATOR_LAYERS = ["c7s1-32-R", "c3s2-64-R", "c3s2-128-R", *["r128"] * 9,
                    "tc64s2", "tc32s2", "c3s1-3-T"]
ATTENTION_LAYERS = ["c7s1-32-R", "c3s2-64-R", "r64", "up2", "c3s1-64-R", "up2", "c3s1-32-R",
                    "c7s1-1-S"]
DISCRIMINATOR_LAYERS = ["c4s2-64-LR", "c4s2-128-LR", "c4s2-256-LR", "c4s1-512-LR", "c4s1-1"]


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | transpose_conv | upsample | residual_block
    kernel: int = 0
    stride: int = 1
    filters: int = 0
    activation: str = "none"
    normalized: bool = False
    padding: int = 0
    padding_mode: str = "zero"  # zero | reflect

    def __post_init__(self):
        if self.kind not in ("conv", "transpose_conv", "upsample", "residual_block"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind != "upsample" and self.kernel not in KERNELS:
            raise ValueError(f"kernel {self.kernel} not in {KERNELS}")
        if self.activation not in ops.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def parse_layer(token: str, role: str) -> LayerSpec:
    """Parse one notation token into a LayerSpec (normalization filled in later).

    Padding conventions: stride-1 convolutions in the generator and attention
    nets use reflection padding; strided and discriminator convolutions pad
    with zeros (one pixel for the 4x4 discriminator kernels).
    """
    if token == "up2":
        return LayerSpec("upsample", stride=2)
    m = _RES_RE.match(token)
    if m:
        return LayerSpec("residual_block", kernel=3, stride=1, filters=int(m.group(1)),
                         activation="relu", padding=1, padding_mode="reflect")
    m = _TCONV_RE.match(token)
    if m:
        return LayerSpec("transpose_conv", kernel=3, stride=int(m.group(2)), filters=int(m.group(1)),
                         activation="relu", padding=1)
    m = _CONV_RE.match(token)
    if m:
        k, s, f = int(m.group(1)), int(m.group(2)), int(m.group(3))
        act = _SUFFIX[m.group(4)]
        if role == "discriminator":
            return LayerSpec("conv", kernel=k, stride=s, filters=f, activation=act, padding=1)
        mode = "reflect" if s == 1 else "zero"
        return LayerSpec("conv", kernel=k, stride=s, filters=f, activation=act,
                         padding=(k - 1) // 2, padding_mode=mode)
    raise ValueError(f"cannot parse layer token {token!r}")


@dataclass
class NetworkSpec:
    role: str
    layers: list[LayerSpec]
    width_multiplier: Fraction = Fraction(1)
    in_channels: int = 3

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        self.width_multiplier = Fraction(self.width_multiplier)
        if self.width_multiplier <= 0:
            raise ValueError("width multiplier must be positive")
        head = self.layers[-1]
        expected = {"generator": (3, "tanh"), "attention": (1, "sigmoid"),
                    "discriminator": (1, "none")}[self.role]
        if (head.filters, head.activation) != expected:
            raise ValueError(f"{self.role} head must be {expected}, got "
                             f"{(head.filters, head.activation)}")

    @classmethod
    def from_notation(cls, role: str, tokens: list[str], width_multiplier=1) -> "NetworkSpec":
        layers = [parse_layer(t, role) for t in tokens]
        n = len(layers)
        # instance norm after every layer but the last
        layers = [replace(l, normalized=(i < n - 1 and l.kind != "upsample")) for i, l in enumerate(layers)]
        return cls(role, layers, Fraction(width_multiplier))

    def scaled_filters(self, index: int) -> int:
        layer = self.layers[index]
        if index == len(self.layers) - 1:
            return layer.filters
        scaled = layer.filters * self.width_multiplier
        if scaled.denominator != 1 or scaled < 1:
            raise ValueError(f"layer {index}: {layer.filters} x {self.width_multiplier} "
                             "is not a positive integer width")
        return int(scaled)

    @property
    def total_stride(self) -> int:
        down = 1
        for l in self.layers:
            if l.kind == "conv" and l.stride > 1:
                down *= l.stride
        return down

    def to_dict(self) -> dict:
        return {"role": self.role, "width_multiplier": str(self.width_multiplier),
                "in_channels": self.in_channels, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(d["role"], [LayerSpec(**l) for l in d["layers"]],
                   Fraction(d["width_multiplier"]), d.get("in_channels", 3))


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD,
                     dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class Network:
    """Instantiated parameters for a NetworkSpec plus its forward pass."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, instance_norm_enabled: bool = True,
                 dtype=np.float32, params: Optional[Mapping[str, np.ndarray]] = None):
        self.spec = spec
        self.instance_norm_enabled = instance_norm_enabled
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        cin = spec.in_channels
        for i, layer in enumerate(spec.layers):
            if layer.kind == "upsample":
                continue
            cout = spec.scaled_filters(i)
            k = layer.kernel
            if layer.kind == "conv":
                self._add(f"layer{i}.weight", truncated_normal(rng, (cout, cin, k, k), dtype=dtype))
                self._add(f"layer{i}.bias", np.zeros(cout, dtype=dtype))
            elif layer.kind == "transpose_conv":
                self._add(f"layer{i}.weight", truncated_normal(rng, (cin, cout, k, k), dtype=dtype))
                self._add(f"layer{i}.bias", np.zeros(cout, dtype=dtype))
            else:
                if cin != cout:
                    raise ShapeError(f"residual block {i} needs {cin} == {cout} channels")
                for j in (1, 2):
                    self._add(f"layer{i}.conv{j}.weight", truncated_normal(rng, (cout, cout, k, k), dtype=dtype))
                    self._add(f"layer{i}.conv{j}.bias", np.zeros(cout, dtype=dtype))
            cin = cout
        if params is not None:
            self.load_arrays(params)

    def _add(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = Tensor(arr, requires_grad=True, name=name)

    # -- parameters -----------------------------------------------------------
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise KeyError("parameter names do not match the network spec")
        for k, p in self.params.items():
            a = np.asarray(arrays[k])
            if a.shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {a.shape}")
            p.data = a.astype(self.dtype, copy=True)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def with_instance_norm(self, enabled: bool) -> "Network":
        """A copy of this network with normalization switched; weights copied bitwise."""
        return Network(self.spec, instance_norm_enabled=enabled, dtype=self.dtype,
                       params=self.arrays())

    def astype(self, dtype) -> "Network":
        return Network(self.spec, instance_norm_enabled=self.instance_norm_enabled, dtype=dtype,
                       params=self.arrays())

    # -- forward --------------------------------------------------------------
    def __call__(self, x: Tensor, params: Optional[Mapping[str, Tensor]] = None) -> Tensor:
        return self.forward(x, params)

    def forward(self, x: Tensor, params: Optional[Mapping[str, Tensor]] = None) -> Tensor:
        """Run the layer pipeline; ``params`` optionally overrides stored tensors by name."""
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected N x {self.spec.in_channels} x H x W input, got {x.shape}")
        stride = self.spec.total_stride
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ShapeError(f"spatial size {x.shape[2:]} not divisible by total stride {stride}")
        P = self.params if params is None else {**self.params, **params}
        h = x
        for i, layer in enumerate(self.spec.layers):
            h = self._layer(h, i, layer, P)
        return h

    def _norm(self, h: Tensor, layer: LayerSpec) -> Tensor:
        if layer.normalized and self.instance_norm_enabled:
            return ops.instance_norm(h)
        return h

    def _conv(self, h: Tensor, layer: LayerSpec, w: Tensor, b: Tensor) -> Tensor:
        if layer.padding_mode == "reflect":
            h = ops.pad2d(h, layer.padding, "reflect")
            return ops.conv2d(h, w, b, stride=layer.stride, padding=0)
        return ops.conv2d(h, w, b, stride=layer.stride, padding=layer.padding)

    def _layer(self, h: Tensor, i: int, layer: LayerSpec, P: Mapping[str, Tensor]) -> Tensor:
        if layer.kind == "upsample":
            return ops.nearest_upsample2x(h)
        if layer.kind == "residual_block":
            r = self._conv(h, layer, P[f"layer{i}.conv1.weight"], P[f"layer{i}.conv1.bias"])
            r = ops.relu(self._norm(r, layer))
            r = self._conv(r, layer, P[f"layer{i}.conv2.weight"], P[f"layer{i}.conv2.bias"])
            return h + self._norm(r, layer)
        w, b = P[f"layer{i}.weight"], P[f"layer{i}.bias"]
        if layer.kind == "transpose_conv":
            h = ops.transpose_conv2d(h, w, b, stride=layer.stride, padding=layer.padding,
                                     output_padding=layer.stride - 1)
        else:
            h = self._conv(h, layer, w, b)
        return ops.activation(self._norm(h, layer), layer.activation)


def _check_multiplier(width_multiplier) -> Fraction:
    m = Fraction(width_multiplier)
    if m <= 0:
        raise ValueError("width multiplier must be positive")
    return m


def generator_spec(width_multiplier=1, n_residual: int = 9) -> NetworkSpec:
    tokens = GENERATOR_LAYERS[:3] + ["r128"] * n_residual + GENERATOR_LAYERS[-3:]
    return NetworkSpec.from_notation("generator", tokens, _check_multiplier(width_multiplier))


def attention_spec(width_multiplier=1) -> NetworkSpec:
    spec = NetworkSpec.from_notation("attention", ATTENTION_LAYERS, _check_multiplier(width_multiplier))
    # The listed layers downsample once but upsample twice; the first 7x7
    # convolution takes stride 2 so the map comes back at input resolution.
    spec.layers[0] = replace(spec.layers[0], stride=2)
    return spec


def discriminator_spec(width_multiplier=1) -> NetworkSpec:
    return NetworkSpec.from_notation("discriminator", DISCRIMINATOR_LAYERS,
                                     _check_multiplier(width_multiplier))


def _validated(spec: NetworkSpec) -> NetworkSpec:
    for i in range(len(spec.layers)):
        if spec.layers[i].kind != "upsample":
            spec.scaled_filters(i)
    return spec


def build_generator(width_multiplier=1, n_residual: int = 9, seed: int = 0, dtype=np.float32) -> Network:
    return Network(_validated(generator_spec(width_multiplier, n_residual)), seed=seed, dtype=dtype)


def build_attention(width_multiplier=1, seed: int = 0, dtype=np.float32) -> Network:
    return Network(_validated(attention_spec(width_multiplier)), seed=seed, dtype=dtype)


def build_discriminator(width_multiplier=1, instance_norm_enabled: bool = True, seed: int = 0,
                        dtype=np.float32) -> Network:
    return Network(_validated(discriminator_spec(width_multiplier)), seed=seed,
                   instance_norm_enabled=instance_norm_enabled, dtype=dtype)


def network_from_dict(d: Mapping, arrays: Mapping[str, np.ndarray]) -> Network:
    return Network(NetworkSpec.from_dict(d["spec"]), instance_norm_enabled=d["instance_norm_enabled"],
                   params=arrays)


def network_to_dict(net: Network) -> dict:
    return {"spec": net.spec.to_dict(), "instance_norm_enabled": net.instance_norm_enabled}


def forward(net: Network, x: Tensor) -> Tensor:
    return net.forward(x)
