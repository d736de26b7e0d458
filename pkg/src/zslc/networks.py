"""The five dense networks: generator, inference net, three critics, and
single-layer softmax classifiers, plus their binary serialization."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine as en

ACT_NONE = "none"
ACT_RELU = "relu"
ACT_LEAKY = "leaky_relu"
_ACT_CODES = {ACT_NONE: 0, ACT_RELU: 1, ACT_LEAKY: 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

ROLE_GENERATOR = "generator"
ROLE_INFERENCE = "inference"
ROLE_CRITIC = "critic"
ROLE_CLASSIFIER = "classifier"

_MODEL_MAGIC = b"ZSLCNET1"


@dataclass
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str


@dataclass
class NetConfig:
    """Dimensions and widths shared by the builders.

    d_z defaults to d_h (noise dimension matches the attribute dimension).
    """

    d_x: int
    d_h: int
    d_z: int | None = None
    hidden: int = 64
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.d_z is None:
            self.d_z = self.d_h
        for name in ("d_x", "d_h", "d_z", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"NetConfig.{name} must be >= 1")


@dataclass
class MlpModel:
    """Parameter arrays plus the layer plan; plain data, no graph state."""

    role: str
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    leaky_slope: float = 0.2
    _bound: tuple = field(default=None, repr=False, compare=False)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_count(self) -> int:
        return sum(l.in_dim * l.out_dim + l.out_dim for l in self.layers)

    def bind(self, graph: en.Graph, trainable: bool) -> list[tuple[en.Tensor, en.Tensor]]:
        """Graph leaves for the parameters, shared across calls on one graph.

        Sharing matters: a critic evaluated on real, fake and interpolated
        inputs must accumulate all three gradient contributions on the same
        leaves.
        """
        if self._bound is not None and self._bound[0] is graph and self._bound[1] == trainable:
            return self._bound[2]
        leaves = [
            (graph.leaf(w, requires_grad=trainable), graph.leaf(b, requires_grad=trainable))
            for w, b in zip(self.weights, self.biases)
        ]
        self._bound = (graph, trainable, leaves)
        return leaves

    def param_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.params():
            h.update(str(p.shape).encode())
            h.update(p.tobytes())
        return h.hexdigest()


def _init_layer(in_dim: int, out_dim: int, rng: en.RngStream):
    # scaled-uniform fan-in init, bias 0
    bound = 1.0 / np.sqrt(in_dim)
    w = (rng.uniform((in_dim, out_dim)) * 2.0 - 1.0) * bound
    return w, np.zeros(out_dim)


def _build(role: str, dims: list[int], activations: list[str], rng: en.RngStream,
           slope: float = 0.2) -> MlpModel:
    layers, weights, biases = [], [], []
    for i, act in enumerate(activations):
        layers.append(LayerSpec(dims[i], dims[i + 1], act))
        w, b = _init_layer(dims[i], dims[i + 1], rng)
        weights.append(w)
        biases.append(b)
    return MlpModel(role, layers, weights, biases, leaky_slope=slope)


def build_generator(cfg: NetConfig, rng: en.RngStream) -> MlpModel:
    """[d_z+d_h -> hidden -> hidden -> d_x], leaky hidden, ReLU output."""
    dims = [cfg.d_z + cfg.d_h, cfg.hidden, cfg.hidden, cfg.d_x]
    return _build(ROLE_GENERATOR, dims, [ACT_LEAKY, ACT_LEAKY, ACT_RELU], rng, cfg.leaky_slope)


def build_inference(cfg: NetConfig, rng: en.RngStream) -> MlpModel:
    """[d_x -> hidden -> hidden -> d_h]; the two hidden activations are the
    latent features exposed to the recognition stage."""
    dims = [cfg.d_x, cfg.hidden, cfg.hidden, cfg.d_h]
    return _build(ROLE_INFERENCE, dims, [ACT_LEAKY, ACT_LEAKY, ACT_RELU], rng, cfg.leaky_slope)


def build_critic(input_dim: int, hidden: int, rng: en.RngStream, slope: float = 0.2) -> MlpModel:
    """[input_dim -> hidden -> hidden -> 1], linear output (Wasserstein critic)."""
    return _build(ROLE_CRITIC, [input_dim, hidden, hidden, 1], [ACT_LEAKY, ACT_LEAKY, ACT_NONE],
                  rng, slope)


def build_linear_classifier(in_dim: int, n_classes: int, rng: en.RngStream) -> MlpModel:
    return _build(ROLE_CLASSIFIER, [in_dim, n_classes], [ACT_NONE], rng)


def forward_mlp(model: MlpModel, x: en.Tensor, trainable: bool = True):
    """Run the stack; returns (output, hidden activations)."""
    if x.shape[1] != model.layers[0].in_dim:
        raise en.ShapeError(f"input dim {x.shape[1]} != {model.layers[0].in_dim}")
    leaves = model.bind(x.graph, trainable)
    hiddens = []
    h = x
    for spec, (w, b) in zip(model.layers, leaves):
        h = en.affine(h, w, b)
        if spec.activation == ACT_LEAKY:
            h = en.leaky_relu(h, model.leaky_slope)
        elif spec.activation == ACT_RELU:
            h = en.relu(h)
        if spec is not model.layers[-1]:
            hiddens.append(h)
    return h, hiddens


def forward_generator(g_model: MlpModel, z: en.Tensor, h: en.Tensor,
                      trainable: bool = True) -> en.Tensor:
    out, _ = forward_mlp(g_model, en.concat([z, h]), trainable)
    return out


def forward_inference(i_model: MlpModel, x: en.Tensor, trainable: bool = True):
    out, hiddens = forward_mlp(i_model, x, trainable)
    return out, hiddens[0], hiddens[1]


def forward_critic(d_model: MlpModel, a: en.Tensor, b: en.Tensor,
                   trainable: bool = True) -> en.Tensor:
    out, _ = forward_mlp(d_model, en.concat([a, b]), trainable)
    return en.reshape(out, (out.shape[0],))


def forward_classifier(clf: MlpModel, x: en.Tensor, trainable: bool = True) -> en.Tensor:
    out, _ = forward_mlp(clf, x, trainable)
    return out


# ---------------------------------------------------------------------------
# serialization: magic, version, role, slope, layer table, then row-major
# float64 little-endian parameter arrays in layer order (W then bias).


def serialize_model(model: MlpModel) -> bytes:
    buf = io.BytesIO()
    buf.write(_MODEL_MAGIC)
    buf.write(struct.pack("<I", 1))
    role = model.role.encode("utf-8")
    buf.write(struct.pack("<I", len(role)))
    buf.write(role)
    buf.write(struct.pack("<d", model.leaky_slope))
    buf.write(struct.pack("<I", len(model.layers)))
    for spec in model.layers:
        buf.write(struct.pack("<IIB", spec.in_dim, spec.out_dim, _ACT_CODES[spec.activation]))
    for w, b in zip(model.weights, model.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def deserialize_model(blob: bytes) -> MlpModel:
    buf = io.BytesIO(blob)
    magic = buf.read(len(_MODEL_MAGIC))
    if magic != _MODEL_MAGIC:
        raise ValueError("bad model magic bytes")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != 1:
        raise ValueError(f"unsupported model version {version}")
    (role_len,) = struct.unpack("<I", buf.read(4))
    role = buf.read(role_len).decode("utf-8")
    (slope,) = struct.unpack("<d", buf.read(8))
    (n_layers,) = struct.unpack("<I", buf.read(4))
    layers = []
    for _ in range(n_layers):
        in_dim, out_dim, act = struct.unpack("<IIB", buf.read(9))
        layers.append(LayerSpec(in_dim, out_dim, _ACT_NAMES[act]))
    weights, biases = [], []
    for spec in layers:
        nbytes = spec.in_dim * spec.out_dim * 8
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise ValueError("truncated model blob")
        weights.append(np.frombuffer(raw, dtype="<f8").reshape(spec.in_dim, spec.out_dim).copy())
        raw = buf.read(spec.out_dim * 8)
        if len(raw) != spec.out_dim * 8:
            raise ValueError("truncated model blob")
        biases.append(np.frombuffer(raw, dtype="<f8").copy())
    return MlpModel(role, layers, weights, biases, leaky_slope=slope)
