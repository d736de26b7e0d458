"""Alternating adversarial optimization: n_critic critic steps per
generator/inference step, a frozen pretrained classifier for the
classification constraint, deterministic RNG streams, and bit-exact
checkpointing."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as dt
from . import engine as en
from . import losses as ls
from . import networks as nets
from . import ot

_CKPT_MAGIC = b"ZSLCKPT1"
_MODEL_ORDER = ("generator", "inference", "d1", "d2", "d3", "theta")
_STREAMS = ("noise", "interp", "shuffle")


@dataclass
class TrainState:
    models: dict                 # name -> MlpModel, keys _MODEL_ORDER
    adam: dict                   # name -> AdamState
    rng: dict                    # name -> RngStream
    hp: ls.HyperParams
    net: nets.NetConfig
    seen_class_ids: np.ndarray
    ablation: str = "s4"
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def seen_index(self) -> np.ndarray:
        idx = np.full(int(self.seen_class_ids.max()) + 1, -1, dtype=np.int64)
        idx[self.seen_class_ids] = np.arange(len(self.seen_class_ids))
        return idx

    def param_hashes(self) -> dict:
        return {name: m.param_hash() for name, m in self.models.items()}


def pretrain_classifier(ds: dt.GzslDataset, epochs: int, lr: float,
                        rng: en.RngStream, batch_size: int = 64) -> nets.MlpModel:
    """Single linear softmax layer over seen classes, trained on train-seen
    features; frozen afterwards."""
    if len(ds.partition[dt.TRAIN_SEEN]) == 0:
        raise ValueError("train_seen partition is empty")
    seen = ds.seen_classes
    index = np.full(int(seen.max()) + 1, -1, dtype=np.int64)
    index[seen] = np.arange(len(seen))
    clf = nets.build_linear_classifier(ds.d_x, len(seen), rng)
    adam = en.AdamState(clf.params())
    for _ in range(epochs):
        for x, y, _ in dt.batches(ds, dt.TRAIN_SEEN, batch_size, rng, True):
            graph = en.Graph()
            logits = nets.forward_classifier(clf, graph.constant(x))
            loss = en.softmax_cross_entropy(logits, index[y])
            leaves = [t for pair in clf.bind(graph, True) for t in pair]
            grads = en.backward(loss, leaves)
            en.adam_step(clf.params(), [grads[t] for t in leaves], adam, lr, 0.9, 0.999)
    return clf


def classifier_accuracy(clf: nets.MlpModel, x: np.ndarray, labels: np.ndarray) -> float:
    graph = en.Graph()
    logits = nets.forward_classifier(clf, graph.constant(x), trainable=False)
    return float(np.mean(np.argmax(logits.data, axis=1) == labels))


def init_state(ds: dt.GzslDataset, hp: ls.HyperParams, net: nets.NetConfig = None,
               ablation: str = "s4", pretrain_epochs: int = 30,
               pretrain_lr: float = 1e-2) -> TrainState:
    if net is None:
        net = nets.NetConfig(d_x=ds.d_x, d_h=ds.d_h)
    if net.d_x != ds.d_x or net.d_h != ds.d_h:
        raise en.ShapeError(f"net dims ({net.d_x},{net.d_h}) vs dataset ({ds.d_x},{ds.d_h})")
    seed = hp.seed
    models = {
        "generator": nets.build_generator(net, en.RngStream(seed, "init/generator")),
        "inference": nets.build_inference(net, en.RngStream(seed, "init/inference")),
        "d1": nets.build_critic(net.d_x + net.d_h, net.hidden, en.RngStream(seed, "init/d1")),
        "d2": nets.build_critic(net.d_h + net.d_x, net.hidden, en.RngStream(seed, "init/d2")),
        "d3": nets.build_critic(net.d_x + net.d_h, net.hidden, en.RngStream(seed, "init/d3")),
        "theta": pretrain_classifier(ds, pretrain_epochs, pretrain_lr,
                                     en.RngStream(seed, "pretrain")),
    }
    adam = {name: en.AdamState(m.params()) for name, m in models.items()}
    rng = {name: en.RngStream(seed, name) for name in _STREAMS}
    return TrainState(models, adam, rng, hp, net, ds.seen_classes.copy(), ablation)


def _check_report(state: TrainState, report: ls.LossReport):
    vals = report.to_dict()
    for key in ("wgan1", "wgan2", "joint_d3", "joint_max", "cls", "align", "total"):
        if not np.isfinite(vals[key]):
            raise en.NumericalError(f"non-finite term {key!r} at step {report.step}")
    residual = report.composition_residual(state.hp)
    if residual > 1e-12:
        raise en.NumericalError(
            f"loss composition identity violated at step {report.step}: residual {residual}")


def _adam_update(state: TrainState, name: str, graph: en.Graph, loss: en.Tensor):
    model = state.models[name]
    leaves = [t for pair in model.bind(graph, True) for t in pair]
    grads = en.backward(loss, leaves)
    hp = state.hp
    en.adam_step(model.params(), [grads[t] for t in leaves], state.adam[name],
                 hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps)


def critic_phase(state: TrainState, batch) -> ls.LossReport:
    """One Adam ascent step each for D1, D2, D3 (sequentially), with x-hat
    and h-hat computed fresh and detached from G and I."""
    x_np, y_np, h_np = batch
    hp = state.hp
    b = len(x_np)
    graph = en.Graph()
    x = graph.constant(x_np)
    h = graph.constant(h_np)
    z = en.sample_gaussian(graph, state.rng["noise"], (b, state.net.d_z))
    xhat = nets.forward_generator(state.models["generator"], z, h, trainable=False).detach()
    hhat = nets.forward_inference(state.models["inference"], x, trainable=False)[0].detach()

    xt = ls.interpolate(x, xhat, rng=state.rng["interp"])
    v1 = ls.wgan_critic_value(state.models["d1"], (x, h), (xhat, h), (xt, h), hp.gp_lambda)
    _adam_update(state, "d1", graph, en.neg(v1))

    ht = ls.interpolate(h, hhat, rng=state.rng["interp"])
    v2 = ls.wgan_critic_value(state.models["d2"], (h, x), (hhat, x), (ht, x), hp.gp_lambda)
    _adam_update(state, "d2", graph, en.neg(v2))

    # one alpha per sample shared by both slots: the segment between the
    # joint pairs (x, h-hat) and (x-hat, h)
    alpha = state.rng["interp"].uniform((b, 1))
    xt3 = ls.interpolate(x, xhat, alpha=alpha)
    ht3 = ls.interpolate(hhat, h, alpha=alpha)
    v3 = ls.joint_critic_value(state.models["d3"], x, hhat, xhat, h, xt3, ht3, hp.gp_lambda)
    _adam_update(state, "d3", graph, en.neg(v3))

    report = ls.LossReport(step=state.step, phase="critic", wgan1=v1.item(),
                           wgan2=v2.item(), joint_d3=v3.item())
    report.total = report.recombined(hp)
    _check_report(state, report)
    state.step += 1
    state.history.append(report)
    return report


def generator_phase(state: TrainState, batch) -> ls.LossReport:
    """One Adam descent step on the combined objective, updating G and I
    jointly; critics and the pretrained classifier stay frozen."""
    x_np, y_np, h_np = batch
    hp = state.hp
    b = len(x_np)
    graph = en.Graph()
    x = graph.constant(x_np)
    h = graph.constant(h_np)
    z = en.sample_gaussian(graph, state.rng["noise"], (b, state.net.d_z))
    xhat = nets.forward_generator(state.models["generator"], z, h)
    hhat, _, _ = nets.forward_inference(state.models["inference"], x)

    adv_gen = en.neg(en.reduce_mean(
        nets.forward_critic(state.models["d1"], xhat, h, trainable=False)))
    _, cls_raw = ls.cls_loss(state.models["theta"], xhat, state.seen_index[y_np], hp.beta)
    l_gen = ls.generator_objective(adv_gen, cls_raw, hp.beta)

    adv_inf = en.neg(en.reduce_mean(
        nets.forward_critic(state.models["d2"], hhat, x, trainable=False)))
    if hp.gamma > 0:
        # ground-truth attribute per class present in the batch
        uniq, first = np.unique(y_np, return_index=True)
        attr_table = np.zeros((int(uniq.max()) + 1, h_np.shape[1]))
        attr_table[uniq] = h_np[first]
        align_raw, _ = ot.alignment_loss(hhat, y_np, attr_table, hp.epsilon)
    else:
        align_raw = graph.constant(0.0)
    l_inf = ls.inference_objective(adv_inf, align_raw, hp.gamma)

    if hp.alpha2 != 0:
        l_jm = ls.joint_max_loss(state.models["d3"], x, hhat, xhat, h)
    else:
        l_jm = graph.constant(0.0)

    total = ls.total_objective(l_gen, l_inf, l_jm, hp.alpha1, hp.alpha2)

    gen_leaves = [t for pair in state.models["generator"].bind(graph, True) for t in pair]
    inf_leaves = [t for pair in state.models["inference"].bind(graph, True) for t in pair]
    grads = en.backward(total, gen_leaves + inf_leaves)
    en.adam_step(state.models["generator"].params(), [grads[t] for t in gen_leaves],
                 state.adam["generator"], hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps)
    en.adam_step(state.models["inference"].params(), [grads[t] for t in inf_leaves],
                 state.adam["inference"], hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps)

    report = ls.LossReport(step=state.step, phase="generator",
                           wgan1=adv_gen.item(), wgan2=adv_inf.item(),
                           joint_max=l_jm.item(), cls=cls_raw.item(),
                           align=align_raw.item(), total=total.item())
    _check_report(state, report)
    state.step += 1
    state.history.append(report)
    return report


def fit(ds: dt.GzslDataset, hp: ls.HyperParams, net: nets.NetConfig = None,
        ablation: str = "s4", state: TrainState = None, log_fn=None,
        checkpoint_path=None, checkpoint_every: int = 0,
        pretrain_epochs: int = 30, pretrain_lr: float = 1e-2):
    """Run (or resume) the epochs x batches loop; n_critic critic phases
    precede every generator phase.  Deterministic given hp.seed."""
    if state is None:
        state = init_state(ds, hp, net, ablation, pretrain_epochs, pretrain_lr)
    while state.epoch < state.hp.epochs:
        for batch in dt.batches(ds, dt.TRAIN_SEEN, state.hp.batch_size,
                                state.rng["shuffle"], True):
            for _ in range(state.hp.n_critic):
                report = critic_phase(state, batch)
                if log_fn:
                    log_fn(report)
            report = generator_phase(state, batch)
            if log_fn:
                log_fn(report)
        state.epoch += 1
        if checkpoint_path and checkpoint_every and state.epoch % checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    if checkpoint_path:
        save_checkpoint(state, checkpoint_path)
    return state, state.history


# ---------------------------------------------------------------------------
# checkpointing: magic | u32 version | u64 header length | header JSON |
# float64 little-endian arrays in manifest order.  Deterministic bytes.


def _header(state: TrainState) -> dict:
    return {
        "version": 1,
        "ablation": state.ablation,
        "epoch": state.epoch,
        "step": state.step,
        "hp": asdict(state.hp),
        "net": asdict(state.net),
        "seen_class_ids": state.seen_class_ids.tolist(),
        "rng": {name: state.rng[name].counter for name in _STREAMS},
        "models": {
            name: {
                "role": m.role,
                "slope": m.leaky_slope,
                "layers": [[l.in_dim, l.out_dim, l.activation] for l in m.layers],
            }
            for name, m in state.models.items()
        },
        "adam_t": {name: state.adam[name].t for name in _MODEL_ORDER},
    }


def save_checkpoint(state: TrainState, path):
    header = json.dumps(_header(state), sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in _MODEL_ORDER:
            for p in state.models[name].params():
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
            st = state.adam[name]
            for buf in list(st.m) + list(st.v):
                fh.write(np.ascontiguousarray(buf, dtype="<f8").tobytes())


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError("bad checkpoint magic bytes")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))

        def read_array(shape):
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * 8)
            if len(raw) != n * 8:
                raise ValueError("truncated checkpoint")
            return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        models, adam = {}, {}
        for name in _MODEL_ORDER:
            spec = header["models"][name]
            layers = [nets.LayerSpec(i, o, a) for i, o, a in spec["layers"]]
            weights, biases = [], []
            for l in layers:
                weights.append(read_array((l.in_dim, l.out_dim)))
                biases.append(read_array((l.out_dim,)))
            model = nets.MlpModel(spec["role"], layers, weights, biases, spec["slope"])
            st = en.AdamState(model.params())
            st.m = [read_array(p.shape) for p in model.params()]
            st.v = [read_array(p.shape) for p in model.params()]
            st.t = header["adam_t"][name]
            models[name] = model
            adam[name] = st
        extra = fh.read(1)
        if extra:
            raise ValueError("trailing bytes in checkpoint")

    hp = ls.HyperParams(**header["hp"])
    net = nets.NetConfig(**header["net"])
    rng = {name: en.RngStream(hp.seed, name, counter=header["rng"][name]) for name in _STREAMS}
    return TrainState(models, adam, rng, hp, net,
                      np.array(header["seen_class_ids"], dtype=np.int64),
                      header["ablation"], header["epoch"], header["step"])
