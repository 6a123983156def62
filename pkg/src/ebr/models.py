"""Energy models ``U(x) = ||x - psi(x)||^2`` and their networks.

Two parameterizations of ``psi`` are provided:

* ``conv-ae``: ``psi = decoder(encoder(x))`` with a low-dimensional code.
* ``ge-nn``: a convolutional predictor whose first-layer kernels have a zero
  center tap, so ``psi(x)`` at a site never reads ``x`` at that site.

Networks are described by an :class:`ArchDescriptor` (a flat list of
:class:`Layer` records) and interpreted by :class:`Network`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import ops
from .core.optim import init_params
from .core.tensor import Tensor, as_tensor, no_grad
from .data.io import tensor_io_read, tensor_io_write

__all__ = [
    "Layer", "ArchDescriptor", "Network", "EnergyModel", "GradCorrector",
    "build_genn_lorenz", "build_convae_mnist", "genn_lorenz_arch", "convae_mnist_arch",
    "default_corrector", "psi_apply", "energy_eval", "save_checkpoint", "load_checkpoint",
]

ACTIVATIONS = ("linear", "relu")
LAYER_KINDS = ("conv", "tconv", "dense", "avgpool", "upsample", "flatten", "reshape", "residual")


@dataclass(frozen=True)
class Layer:
    kind: str
    filters: int = 0
    width: int = 1
    stride: int = 1
    activation: str = "linear"
    zero_center: bool = False
    size: int = 2
    shape: tuple = ()
    body: tuple = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.zero_center and (self.kind != "conv" or self.width % 2 == 0):
            raise ValueError("zero_center needs a conv layer with odd width")
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "body", tuple(
            b if isinstance(b, Layer) else Layer.from_dict(b) for b in self.body))

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v != Layer.__dataclass_fields__[k].default}
        d["kind"] = self.kind
        if self.body:
            d["body"] = [b.to_dict() for b in self.body]
        if self.shape:
            d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Layer":
        return cls(**d)


@dataclass(frozen=True)
class ArchDescriptor:
    """Layer chain for inputs of ``input_shape`` (no batch axis).

    For auto-encoders ``code_layer`` splits the chain: ``layers[:code_layer]``
    is the encoder, the rest the decoder.
    """

    input_shape: tuple
    layers: tuple
    code_layer: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, Layer) else Layer.from_dict(l) for l in self.layers))
        self.shapes()

    def shapes(self) -> list[tuple]:
        """Per-layer output shapes; raises if the chain does not fit."""
        out, s = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                s = _out_shape(layer, s)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from None
            out.append(s)
        return out

    @property
    def output_shape(self) -> tuple:
        return self.shapes()[-1] if self.layers else self.input_shape

    @property
    def code_shape(self) -> tuple | None:
        if self.code_layer is None:
            return None
        return self.shapes()[self.code_layer - 1]

    def to_json(self) -> str:
        return json.dumps({"input_shape": list(self.input_shape),
                           "layers": [l.to_dict() for l in self.layers],
                           "code_layer": self.code_layer}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArchDescriptor":
        d = json.loads(text)
        return cls(tuple(d["input_shape"]), tuple(d["layers"]), d.get("code_layer"))


def _out_shape(layer: Layer, s: tuple) -> tuple:
    spatial, c = s[:-1], s[-1]
    k = layer.kind
    if k == "conv":
        if not spatial:
            raise ValueError(f"conv needs spatial axes, input shape {s}")
        return tuple(-(-n // layer.stride) for n in spatial) + (layer.filters,)
    if k == "tconv":
        return tuple(n * layer.stride for n in spatial) + (layer.filters,)
    if k == "dense":
        if len(s) != 1:
            raise ValueError(f"dense needs a flat input, got {s}")
        return (layer.filters,)
    if k in ("avgpool", "upsample"):
        if k == "avgpool" and any(n % layer.size for n in spatial):
            raise ValueError(f"pool size {layer.size} does not divide {spatial}")
        f = (lambda n: n // layer.size) if k == "avgpool" else (lambda n: n * layer.size)
        return tuple(f(n) for n in spatial) + (c,)
    if k == "flatten":
        return (int(np.prod(s)),)
    if k == "reshape":
        if int(np.prod(layer.shape)) != int(np.prod(s)):
            raise ValueError(f"cannot reshape {s} to {layer.shape}")
        return layer.shape
    if k == "residual":
        inner = s
        for b in layer.body:
            inner = _out_shape(b, inner)
        if inner != s:
            raise ValueError(f"residual body maps {s} to {inner}")
        return s
    raise ValueError(k)


def _param_specs(layer: Layer, s: tuple, prefix: str):
    """Yield (name, shape, fan_in) for a layer's parameters at input shape ``s``."""
    if layer.kind in ("conv", "tconv"):
        rank = len(s) - 1
        cin = s[-1]
        yield f"{prefix}.w", (layer.width,) * rank + (cin, layer.filters), layer.width ** rank * cin
        yield f"{prefix}.b", (layer.filters,), 0
    elif layer.kind == "dense":
        yield f"{prefix}.w", (s[0], layer.filters), s[0]
        yield f"{prefix}.b", (layer.filters,), 0
    elif layer.kind == "residual":
        inner = s
        for j, b in enumerate(layer.body):
            yield from _param_specs(b, inner, f"{prefix}.{j}")
            inner = _out_shape(b, inner)


def _residual_tails(arch: ArchDescriptor):
    for i, layer in enumerate(arch.layers):
        if layer.kind == "residual":
            last = max((j for j, b in enumerate(layer.body) if b.kind in ("conv", "tconv", "dense")),
                       default=None)
            if last is not None:
                yield f"L{i}.{last}.w"


def _center(w: np.ndarray) -> tuple:
    return tuple(k // 2 for k in w.shape[:-2])


class Network:
    """Parameters plus an interpreter for an :class:`ArchDescriptor`."""

    def __init__(self, arch: ArchDescriptor, params: dict[str, Tensor]):
        self.arch = arch
        self.params = params
        self._zero_centered = [f"L{i}.w" for i, l in enumerate(arch.layers) if l.zero_center]
        expected = {name for name, _, _ in self._specs_of(arch)}
        if set(params) != expected:
            raise ValueError(f"parameter names {sorted(params)} do not match descriptor {sorted(expected)}")
        self.project_constraints()

    @classmethod
    def build(cls, arch: ArchDescriptor, seed: int, dtype=np.float64, stream: int = 0):
        """Random weights, zero biases.

        The last kernel inside each residual body starts at zero, so every
        residual unit is the identity at initialization.
        """
        identity_start = set(_residual_tails(arch))
        params = {}
        for k, (name, shape, fan_in) in enumerate(cls._specs_of(arch)):
            if name.endswith(".b") or name in identity_start:
                data = np.zeros(shape, dtype=dtype)
            else:
                data = init_params(shape, fan_in, seed, stream, k, dtype=dtype)
            params[name] = Tensor(data, requires_grad=True)
        return cls(arch, params)

    @staticmethod
    def _specs_of(arch):
        s = arch.input_shape
        for i, layer in enumerate(arch.layers):
            yield from _param_specs(layer, s, f"L{i}")
            s = _out_shape(layer, s)

    @property
    def dtype(self):
        for p in self.params.values():
            return p.dtype
        return np.dtype(np.float64)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def n_trainable(self) -> int:
        """Entry count of all parameters, excluding frozen zero center taps."""
        total = sum(p.data.size for p in self.params.values())
        for name in self._zero_centered:
            w = self.params[name].data
            total -= w.shape[-2] * w.shape[-1]
        return total

    def project_constraints(self) -> None:
        for name in self._zero_centered:
            w = self.params[name].data
            w[_center(w)] = 0.0

    def center_tap_max(self) -> float:
        vals = [np.max(np.abs(self.params[n].data[_center(self.params[n].data)]))
                for n in self._zero_centered]
        return float(max(vals)) if vals else 0.0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _layer(self, layer: Layer, x: Tensor, prefix: str) -> Tensor:
        k = layer.kind
        batch = x.shape[0]
        if k == "conv":
            y = ops.conv(x, self.params[prefix + ".w"], self.params[prefix + ".b"], layer.stride)
        elif k == "tconv":
            y = ops.conv_transpose(x, self.params[prefix + ".w"], self.params[prefix + ".b"], layer.stride)
        elif k == "dense":
            y = ops.dense(x, self.params[prefix + ".w"], self.params[prefix + ".b"])
        elif k == "avgpool":
            return ops.avgpool(x, layer.size)
        elif k == "upsample":
            return ops.upsample(x, layer.size)
        elif k == "flatten":
            return ops.reshape(x, (batch, -1))
        elif k == "reshape":
            return ops.reshape(x, (batch,) + layer.shape)
        else:
            y = x
            for j, b in enumerate(layer.body):
                y = self._layer(b, y, f"{prefix}.{j}")
            return ops.add(x, y)
        return ops.relu(y) if layer.activation == "relu" else y

    def forward(self, x, start: int = 0, stop: int | None = None) -> Tensor:
        """Apply ``layers[start:stop]`` to a batched input."""
        x = as_tensor(x, self.dtype) if not isinstance(x, Tensor) else x
        stop = len(self.arch.layers) if stop is None else stop
        for i in range(start, stop):
            x = self._layer(self.arch.layers[i], x, f"L{i}")
        return x

    __call__ = forward


class EnergyModel(Network):
    """``psi`` network with kind ``conv-ae`` or ``ge-nn``."""

    def __init__(self, kind: str, arch: ArchDescriptor, params: dict[str, Tensor], seed: int = 0):
        if kind not in ("conv-ae", "ge-nn"):
            raise ValueError(f"unknown energy model kind {kind!r}")
        if kind == "conv-ae" and arch.code_layer is None:
            raise ValueError("conv-ae descriptor needs a code_layer")
        if arch.output_shape != arch.input_shape:
            raise ValueError(f"psi must map {arch.input_shape} onto itself, got {arch.output_shape}")
        self.kind = kind
        self.seed = seed
        super().__init__(arch, params)

    @classmethod
    def create(cls, kind: str, arch: ArchDescriptor, seed: int, dtype=np.float64):
        net = Network.build(arch, seed, dtype, stream=0)
        return cls(kind, arch, net.params, seed)

    @property
    def input_shape(self) -> tuple:
        return self.arch.input_shape

    def _batched(self, x):
        x = as_tensor(x, self.dtype) if not isinstance(x, Tensor) else x
        n = len(self.input_shape)
        if x.shape == self.input_shape:
            return ops.reshape(x, (1,) + x.shape), True
        if x.ndim == n + 1 and x.shape[1:] == self.input_shape:
            return x, False
        raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")

    def psi(self, x) -> Tensor:
        xb, single = self._batched(x)
        y = self.forward(xb)
        return ops.reshape(y, self.input_shape) if single else y

    def encode(self, x) -> Tensor:
        if self.kind != "conv-ae":
            raise TypeError("only conv-ae models have an encoder")
        xb, single = self._batched(x)
        z = self.forward(xb, 0, self.arch.code_layer)
        return ops.reshape(z, z.shape[1:]) if single else z

    def decode(self, z) -> Tensor:
        if self.kind != "conv-ae":
            raise TypeError("only conv-ae models have a decoder")
        z = as_tensor(z, self.dtype) if not isinstance(z, Tensor) else z
        single = z.shape == self.arch.code_shape
        if single:
            z = ops.reshape(z, (1,) + z.shape)
        y = self.forward(z, self.arch.code_layer)
        return ops.reshape(y, self.input_shape) if single else y


class GradCorrector(Network):
    """CNN applied to the residual ``x - psi(x)``; no layers means identity."""

    @classmethod
    def create(cls, arch: ArchDescriptor, seed: int, dtype=np.float64):
        net = Network.build(arch, seed, dtype, stream=1)
        return cls(arch, net.params)

    @classmethod
    def identity(cls, input_shape, dtype=np.float64):
        c = cls(ArchDescriptor(tuple(input_shape), ()), {})
        c._dtype = np.dtype(dtype)
        return c

    @property
    def dtype(self):
        if not self.params:
            return getattr(self, "_dtype", np.dtype(np.float64))
        return super().dtype

    def __init__(self, arch: ArchDescriptor, params: dict[str, Tensor]):
        if arch.output_shape != arch.input_shape:
            raise ValueError(f"corrector must preserve shape {arch.input_shape}, got {arch.output_shape}")
        super().__init__(arch, params)

    @property
    def is_identity(self) -> bool:
        return not self.arch.layers

    def forward(self, x, start=0, stop=None):
        x = as_tensor(x, self.dtype) if not isinstance(x, Tensor) else x
        if x.shape == self.arch.input_shape:
            y = super().forward(ops.reshape(x, (1,) + x.shape), start, stop)
            return ops.reshape(y, x.shape)
        return super().forward(x, start, stop)

    __call__ = forward


# ---------------------------------------------------------------------------
# builders


def genn_lorenz_arch(n_steps: int = 200, n_filters: int = 120, n_res: int = 4) -> ArchDescriptor:
    res = Layer("residual", body=(Layer("conv", filters=6, width=1),))
    layers = (
        Layer("conv", filters=n_filters, width=3, activation="relu", zero_center=True),
        Layer("conv", filters=6, width=1, activation="relu"),
        *([res] * n_res),
        Layer("conv", filters=3, width=1),
    )
    return ArchDescriptor((n_steps, 3), layers)


def build_genn_lorenz(seed: int, n_steps: int = 200, dtype=np.float64) -> EnergyModel:
    return EnergyModel.create("ge-nn", genn_lorenz_arch(n_steps), seed, dtype)


def convae_mnist_arch() -> ArchDescriptor:
    res = Layer("residual", body=(Layer("conv", filters=40, width=3, activation="relu"),
                                  Layer("conv", filters=20, width=1)))
    layers = (
        Layer("conv", filters=20, width=3, activation="relu"),
        Layer("avgpool", size=2),
        Layer("conv", filters=40, width=3, activation="relu"),
        Layer("avgpool", size=2),
        Layer("flatten"),
        Layer("dense", filters=80, activation="relu"),
        Layer("dense", filters=20),
        # decoder
        Layer("dense", filters=7 * 7 * 20, activation="relu"),
        Layer("reshape", shape=(7, 7, 20)),
        Layer("tconv", filters=40, width=4, stride=4, activation="relu"),
        Layer("conv", filters=20, width=1),
        res,
        res,
        Layer("conv", filters=1, width=3),
    )
    return ArchDescriptor((28, 28, 1), layers, code_layer=7)


def build_convae_mnist(seed: int, dtype=np.float64) -> EnergyModel:
    return EnergyModel.create("conv-ae", convae_mnist_arch(), seed, dtype)


def default_corrector(kind: str, input_shape, seed: int, dtype=np.float64) -> GradCorrector:
    """Residual-correcting CNN with growing filter counts and a linear output."""
    input_shape = tuple(input_shape)
    c = input_shape[-1]
    if kind == "lorenz":
        layers = (Layer("conv", filters=24, width=3, activation="relu"),
                  Layer("conv", filters=48, width=3, activation="relu"),
                  Layer("conv", filters=c, width=1))
    elif kind == "mnist":
        layers = (Layer("conv", filters=32, width=3, activation="relu"),
                  Layer("conv", filters=64, width=3, activation="relu"),
                  Layer("conv", filters=c, width=3))
    else:
        raise ValueError(f"unknown corrector preset {kind!r}")
    return GradCorrector.create(ArchDescriptor(input_shape, layers), seed, dtype)


def psi_apply(model: EnergyModel, x) -> np.ndarray:
    with no_grad():
        return model.psi(x).data


def energy_eval(model: EnergyModel, x) -> float:
    """``sum((x - psi(x))**2)`` over all entries."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=model.dtype)
    r = x - psi_apply(model, x)
    return float(np.sum(r * r))


# ---------------------------------------------------------------------------
# checkpoints


def _write_net(directory: Path, prefix: str, net: Network, lines: list[str]) -> None:
    lines.append(f"{prefix}.arch={net.arch.to_json()}")
    lines.append(f"{prefix}.dtype={np.dtype(net.dtype).name}")
    lines.append(f"{prefix}.params={','.join(net.params)}")
    for name, p in net.params.items():
        tensor_io_write(directory / f"{prefix}.{name}.ebr", p.data)


def save_checkpoint(directory, model: EnergyModel, corrector: GradCorrector | None = None,
                    extra: dict | None = None) -> Path:
    """Write ``manifest.txt`` plus one EBR1 file per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["format=ebr-checkpoint-1", f"kind={model.kind}", f"seed={model.seed}",
             f"zero_center_layers={','.join(model._zero_centered)}"]
    _write_net(directory, "psi", model, lines)
    if corrector is not None:
        _write_net(directory, "corrector", corrector, lines)
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k] = v
    return out


def _read_net(directory: Path, prefix: str, meta: dict):
    arch = ArchDescriptor.from_json(meta[f"{prefix}.arch"])
    names = [n for n in meta[f"{prefix}.params"].split(",") if n]
    params = {n: Tensor(tensor_io_read(directory / f"{prefix}.{n}.ebr"), requires_grad=True)
              for n in names}
    return arch, params, np.dtype(meta[f"{prefix}.dtype"])


def load_checkpoint(directory):
    """Return ``(model, corrector_or_None, manifest)``."""
    directory = Path(directory)
    meta = read_manifest(directory / "manifest.txt")
    if meta.get("format") != "ebr-checkpoint-1":
        raise ValueError(f"{directory} is not an ebr checkpoint")
    arch, params, _ = _read_net(directory, "psi", meta)
    model = EnergyModel(meta["kind"], arch, params, int(meta.get("seed", 0)))
    corrector = None
    if "corrector.arch" in meta:
        carch, cparams, cdtype = _read_net(directory, "corrector", meta)
        corrector = GradCorrector(carch, cparams)
        corrector._dtype = cdtype
    return model, corrector, meta
