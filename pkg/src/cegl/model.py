"""Two-layer message-passing classifier trained on weak segment labels.

Forward pass, per graph: node states start at the raw frame features.
Each layer first aggregates every node's neighborhood into a message,
then re-embeds the node as ReLU(W . concat(state, message)). After the
final layer an attention readout collapses the node embeddings into one
graph vector, and a sigmoid head scores it.

Aggregator kinds
----------------
mean     message_i = sum_j e_ij h_j / sum_j e_ij   (zero vector if no
         positive edges; the zero diagonal keeps the node itself out)
maxpool  elementwise max over {e_ij h_j, j != i}
gated    a gated recurrence walked over neighbors j in ascending
         temporal order, state initialized to the node's own embedding.
         With message m = e_ij h_j and state s, one step is

             z = logistic(U . [s, m])        (update gate)
             r = logistic(R . [s, m])        (reset gate)
             c = tanh(C . [r * s, m])        (candidate)
             s <- (1 - z) * s + z * c

         The final state is the message. The recurrence is deliberately
         order-dependent; frames carry a natural temporal order.

Readout kinds: attention (softmax over u . tanh(W_a h_i), then the
attention-weighted node sum divided by n), mean, sum, maxpool.

Gradients are derived by hand (no autodiff) and checked against central
finite differences in the test suite. Training is plain SGD on the
binary cross entropy of the segment labels.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError, TruncatedFileError
from .graph import SegmentGraph, SimilarityConfig
from .numerics import make_rng, sigmoid, softmax

log = logging.getLogger(__name__)

AGGREGATOR_KINDS = ("mean", "maxpool", "gated")
READOUT_KINDS = ("attention", "mean", "sum", "maxpool")

CEGM_MAGIC = b"CEGM"
CEGM_VERSION = 1

LOSS_CLAMP = 1e-12


@dataclass
class GateWeights:
    """Weights of one layer's gated aggregator; each maps [state, message]."""

    update: np.ndarray  # (d, 2d)
    reset: np.ndarray  # (d, 2d)
    candidate: np.ndarray  # (d, 2d)


@dataclass
class ModelParams:
    layer_dims: tuple[int, ...]  # (d_in, h1, h2)
    transforms: list[np.ndarray]  # layer l: (dims[l+1], 2*dims[l])
    gates: list[GateWeights]  # layer l: square in dims[l]
    attn_transform: np.ndarray  # (a_dim, dims[-1])
    attn_vector: np.ndarray  # (a_dim,)
    clf_weights: np.ndarray  # (dims[-1],)
    clf_bias: float
    aggregator_kind: str = "gated"
    readout_kind: str = "attention"
    # The attention readout divides the weighted node sum by n on top of
    # the softmax normalization (the default). Setting this False drops
    # the extra 1/n (softmax already sums to one), which keeps the graph
    # embedding scale independent of segment length.
    attention_averaged: bool = True

    @property
    def a_dim(self) -> int:
        return self.attn_vector.shape[0]


@dataclass
class Gradients:
    """Same array layout as ModelParams, holding d(loss)/d(parameter)."""

    transforms: list[np.ndarray]
    gates: list[GateWeights]
    attn_transform: np.ndarray
    attn_vector: np.ndarray
    clf_weights: np.ndarray
    clf_bias: float


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 8
    epochs: int = 100
    seed: int = 0
    init_scale: float = 1.0
    shuffle: bool = True
    class_weighting: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")


def init_params(
    layer_dims,
    aggregator_kind: str = "gated",
    readout_kind: str = "attention",
    seed: int = 0,
    a_dim: int | None = None,
    init_scale: float = 1.0,
    attention_averaged: bool = True,
) -> ModelParams:
    """Seeded uniform(-s, s) weights with s = init_scale / sqrt(fan_in); biases 0."""
    layer_dims = tuple(int(d) for d in layer_dims)
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ConfigError(f"layer_dims must be positive, got {layer_dims}")
    if aggregator_kind not in AGGREGATOR_KINDS:
        raise ConfigError(f"unknown aggregator_kind {aggregator_kind!r}")
    if readout_kind not in READOUT_KINDS:
        raise ConfigError(f"unknown readout_kind {readout_kind!r}")
    if a_dim is None:
        a_dim = layer_dims[-1]
    if a_dim < 1:
        raise ConfigError("a_dim must be positive")

    rng = make_rng(seed)

    def draw(shape, fan_in):
        s = init_scale / np.sqrt(fan_in)
        return rng.uniform(-1.0, 1.0, size=shape) * s

    transforms, gates = [], []
    for prev, cur in zip(layer_dims[:-1], layer_dims[1:]):
        transforms.append(draw((cur, 2 * prev), 2 * prev))
        gates.append(
            GateWeights(
                update=draw((prev, 2 * prev), 2 * prev),
                reset=draw((prev, 2 * prev), 2 * prev),
                candidate=draw((prev, 2 * prev), 2 * prev),
            )
        )
    h_last = layer_dims[-1]
    return ModelParams(
        layer_dims=layer_dims,
        transforms=transforms,
        gates=gates,
        attn_transform=draw((a_dim, h_last), h_last),
        attn_vector=draw((a_dim,), a_dim),
        clf_weights=draw((h_last,), h_last),
        clf_bias=0.0,
        aggregator_kind=aggregator_kind,
        readout_kind=readout_kind,
        attention_averaged=attention_averaged,
    )


def zero_gradients(params: ModelParams) -> Gradients:
    return Gradients(
        transforms=[np.zeros_like(w) for w in params.transforms],
        gates=[
            GateWeights(
                np.zeros_like(g.update),
                np.zeros_like(g.reset),
                np.zeros_like(g.candidate),
            )
            for g in params.gates
        ],
        attn_transform=np.zeros_like(params.attn_transform),
        attn_vector=np.zeros_like(params.attn_vector),
        clf_weights=np.zeros_like(params.clf_weights),
        clf_bias=0.0,
    )


# ---------------------------------------------------------------------------
# Neighborhood aggregation


@dataclass
class _GatedStep:
    state: np.ndarray  # state entering the step, (n, d)
    neighbor: np.ndarray  # neighbor index per node, (n,)
    weight: np.ndarray  # edge weight per node, (n,)
    gate_in: np.ndarray  # [state, message], (n, 2d)
    cand_in: np.ndarray  # [reset * state, message], (n, 2d)
    z: np.ndarray
    r: np.ndarray
    cand: np.ndarray


def _mean_messages(edge_w: np.ndarray, h: np.ndarray):
    deg = edge_w.sum(axis=1)
    msgs = edge_w @ h
    nz = deg > 0
    msgs[nz] /= deg[nz, None]
    msgs[~nz] = 0.0
    return msgs, deg


def _maxpool_messages(edge_w: np.ndarray, h: np.ndarray):
    n, d = h.shape
    if n == 1:
        return np.zeros_like(h), None
    prod = edge_w[:, :, None] * h[None, :, :]
    prod[np.arange(n), np.arange(n), :] = -np.inf
    argmax = prod.argmax(axis=1)  # (n, d), first index wins on ties
    msgs = np.take_along_axis(prod, argmax[:, None, :], axis=1)[:, 0, :]
    return msgs, argmax


def _gated_messages(edge_w: np.ndarray, h: np.ndarray, gates: GateWeights):
    n, d = h.shape
    state = h.copy()
    steps: list[_GatedStep] = []
    idx = np.arange(n)
    # Node i's p-th neighbor in ascending temporal order is p for p < i,
    # else p + 1; all nodes advance one step together.
    for p in range(n - 1):
        j = np.where(p < idx, p, p + 1)
        w = edge_w[idx, j]
        msg = w[:, None] * h[j]
        gate_in = np.concatenate([state, msg], axis=1)
        z = sigmoid(gate_in @ gates.update.T)
        r = sigmoid(gate_in @ gates.reset.T)
        cand_in = np.concatenate([r * state, msg], axis=1)
        cand = np.tanh(cand_in @ gates.candidate.T)
        steps.append(_GatedStep(state, j, w, gate_in, cand_in, z, r, cand))
        state = (1.0 - z) * state + z * cand
    return state, steps


def aggregate_neighbors(
    g: SegmentGraph,
    h: np.ndarray,
    gates: GateWeights | None = None,
    kind: str = "mean",
) -> np.ndarray:
    """Per-node neighborhood message under the chosen aggregator."""
    if h.shape[0] != g.n:
        raise ValueError(f"embeddings have {h.shape[0]} rows for a {g.n}-node graph")
    if kind == "mean":
        return _mean_messages(g.edge_weights, h)[0]
    if kind == "maxpool":
        return _maxpool_messages(g.edge_weights, h)[0]
    if kind == "gated":
        if gates is None:
            raise ValueError("gated aggregation requires gate weights")
        if gates.update.shape != (h.shape[1], 2 * h.shape[1]):
            raise ValueError(
                f"gate weights {gates.update.shape} do not fit embeddings of dim {h.shape[1]}"
            )
        return _gated_messages(g.edge_weights, h, gates)[0]
    raise ConfigError(f"unknown aggregator kind {kind!r}")


def layer_forward(
    g: SegmentGraph,
    h: np.ndarray,
    transform: np.ndarray,
    gates: GateWeights | None = None,
    kind: str = "mean",
) -> np.ndarray:
    """One graph-convolution layer: aggregate, concat with self, transform, ReLU."""
    msgs = aggregate_neighbors(g, h, gates, kind)
    stacked = np.concatenate([h, msgs], axis=1)
    if transform.shape[1] != stacked.shape[1]:
        raise ValueError(
            f"transform expects {transform.shape[1]} inputs, got {stacked.shape[1]}"
        )
    return np.maximum(stacked @ transform.T, 0.0)


# ---------------------------------------------------------------------------
# Readout and head


def attention_readout(
    h: np.ndarray,
    attn_transform: np.ndarray,
    attn_vector: np.ndarray,
    averaged: bool = True,
):
    """Additive attention over nodes; returns (graph embedding, weights).

    score_i = u . tanh(W_a h_i), alpha = softmax(score),
    h_g = (1/n) * sum_i alpha_i h_i. `averaged=False` drops the 1/n
    (see ModelParams.attention_averaged).
    """
    if h.shape[0] < 1:
        raise ValueError("readout needs at least one node")
    tanh_proj = np.tanh(h @ attn_transform.T)
    scores = tanh_proj @ attn_vector
    alpha = softmax(scores)
    denom = h.shape[0] if averaged else 1
    h_g = (alpha[:, None] * h).sum(axis=0) / denom
    return h_g, alpha


def classify(h_g: np.ndarray, params: ModelParams) -> float:
    """Sigmoid head over the graph embedding."""
    return float(sigmoid(float(params.clf_weights @ h_g) + params.clf_bias))


def loss(y_hat: float, y: int) -> float:
    """Binary cross entropy with clamped logs."""
    p = min(max(y_hat, LOSS_CLAMP), 1.0 - LOSS_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


# ---------------------------------------------------------------------------
# Forward with cache, exact backward


@dataclass
class ForwardCache:
    graph: SegmentGraph
    params: ModelParams
    node_embeddings: list[np.ndarray]  # H^0 .. H^L
    messages: list[np.ndarray]  # per layer
    stacked_inputs: list[np.ndarray]  # per layer, [H, messages]
    preacts: list[np.ndarray]  # per layer, before ReLU
    mean_degrees: list[np.ndarray | None]  # per layer (mean kind)
    maxpool_argmax: list[np.ndarray | None]  # per layer (maxpool kind)
    gated_steps: list[list[_GatedStep] | None]  # per layer (gated kind)
    attn_tanh: np.ndarray | None
    attention_weights: np.ndarray | None  # alpha
    readout_argmax: np.ndarray | None  # maxpool readout
    graph_embedding: np.ndarray
    logit: float
    prediction: float  # y_hat


def forward(g: SegmentGraph, params: ModelParams) -> ForwardCache:
    """Full forward pass caching every intermediate needed by backward."""
    if g.feature_dim != params.layer_dims[0]:
        raise ValueError(
            f"graph features have dim {g.feature_dim}, model expects {params.layer_dims[0]}"
        )
    kind = params.aggregator_kind
    h = g.node_features
    embeddings = [h]
    messages, stacked_inputs, preacts = [], [], []
    mean_degrees, maxpool_argmax, gated_steps = [], [], []

    for transform, gates in zip(params.transforms, params.gates):
        deg = argmax = steps = None
        if kind == "mean":
            msgs, deg = _mean_messages(g.edge_weights, h)
        elif kind == "maxpool":
            msgs, argmax = _maxpool_messages(g.edge_weights, h)
        else:
            msgs, steps = _gated_messages(g.edge_weights, h, gates)
        stacked = np.concatenate([h, msgs], axis=1)
        pre = stacked @ transform.T
        h = np.maximum(pre, 0.0)
        messages.append(msgs)
        stacked_inputs.append(stacked)
        preacts.append(pre)
        mean_degrees.append(deg)
        maxpool_argmax.append(argmax)
        gated_steps.append(steps)
        embeddings.append(h)

    attn_tanh = alpha = readout_argmax = None
    if params.readout_kind == "attention":
        attn_tanh = np.tanh(h @ params.attn_transform.T)
        scores = attn_tanh @ params.attn_vector
        alpha = softmax(scores)
        denom = g.n if params.attention_averaged else 1
        h_g = (alpha[:, None] * h).sum(axis=0) / denom
    elif params.readout_kind == "mean":
        h_g = h.mean(axis=0)
    elif params.readout_kind == "sum":
        h_g = h.sum(axis=0)
    elif params.readout_kind == "maxpool":
        readout_argmax = h.argmax(axis=0)
        h_g = h[readout_argmax, np.arange(h.shape[1])]
    else:
        raise ConfigError(f"unknown readout kind {params.readout_kind!r}")

    logit = float(params.clf_weights @ h_g) + params.clf_bias
    return ForwardCache(
        graph=g,
        params=params,
        node_embeddings=embeddings,
        messages=messages,
        stacked_inputs=stacked_inputs,
        preacts=preacts,
        mean_degrees=mean_degrees,
        maxpool_argmax=maxpool_argmax,
        gated_steps=gated_steps,
        attn_tanh=attn_tanh,
        attention_weights=alpha,
        readout_argmax=readout_argmax,
        graph_embedding=h_g,
        logit=logit,
        prediction=float(sigmoid(logit)),
    )


def _mean_backward(edge_w, deg, d_msgs):
    scaled = np.zeros_like(d_msgs)
    nz = deg > 0
    scaled[nz] = d_msgs[nz] / deg[nz, None]
    return edge_w.T @ scaled


def _maxpool_backward(edge_w, argmax, d_msgs, n, d):
    dh = np.zeros((n, d))
    if argmax is None:  # single node, messages were constant zero
        return dh
    rows = argmax.ravel()
    cols = np.tile(np.arange(d), n)
    weights = edge_w[np.repeat(np.arange(n), d), rows]
    np.add.at(dh, (rows, cols), weights * d_msgs.ravel())
    return dh


def _gated_backward(gates, steps, d_msgs, h, grad_gates: GateWeights):
    d = h.shape[1]
    dh = np.zeros_like(h)
    dstate = d_msgs.copy()
    for st in reversed(steps):
        dz = dstate * (st.cand - st.state)
        dcand = dstate * st.z
        dprev = dstate * (1.0 - st.z)

        dpre_c = dcand * (1.0 - st.cand**2)
        grad_gates.candidate += dpre_c.T @ st.cand_in
        dcand_in = dpre_c @ gates.candidate
        d_rs = dcand_in[:, :d]
        dmsg = dcand_in[:, d:].copy()
        dr = d_rs * st.state
        dprev += d_rs * st.r

        dpre_r = dr * st.r * (1.0 - st.r)
        grad_gates.reset += dpre_r.T @ st.gate_in
        dgate_in = dpre_r @ gates.reset
        dprev += dgate_in[:, :d]
        dmsg += dgate_in[:, d:]

        dpre_z = dz * st.z * (1.0 - st.z)
        grad_gates.update += dpre_z.T @ st.gate_in
        dgate_in = dpre_z @ gates.update
        dprev += dgate_in[:, :d]
        dmsg += dgate_in[:, d:]

        np.add.at(dh, st.neighbor, st.weight[:, None] * dmsg)
        dstate = dprev
    dh += dstate  # recurrence started from the node's own embedding
    return dh


def backward(cache: ForwardCache, g: SegmentGraph, params: ModelParams, y: int) -> Gradients:
    """Exact gradients of the cross-entropy loss w.r.t. every parameter."""
    if cache.graph is not g or cache.params is not params:
        raise ConfigError("stale cache: backward needs the cache from forward on the same graph and params")
    grads = zero_gradients(params)
    n = g.n
    h_final = cache.node_embeddings[-1]

    dlogit = cache.prediction - y  # sigmoid + cross entropy identity
    grads.clf_weights += dlogit * cache.graph_embedding
    grads.clf_bias += dlogit
    dh_g = dlogit * params.clf_weights

    kind = params.readout_kind
    if kind == "attention":
        alpha = cache.attention_weights
        t = cache.attn_tanh
        denom = n if params.attention_averaged else 1
        dalpha = (h_final @ dh_g) / denom
        dh = alpha[:, None] * dh_g[None, :] / denom
        dscores = alpha * (dalpha - float(alpha @ dalpha))
        grads.attn_vector += t.T @ dscores
        dt = np.outer(dscores, params.attn_vector)
        dpre = dt * (1.0 - t**2)
        grads.attn_transform += dpre.T @ h_final
        dh = dh + dpre @ params.attn_transform
    elif kind == "mean":
        dh = np.broadcast_to(dh_g / n, h_final.shape).copy()
    elif kind == "sum":
        dh = np.broadcast_to(dh_g, h_final.shape).copy()
    else:  # maxpool
        dh = np.zeros_like(h_final)
        cols = np.arange(h_final.shape[1])
        dh[cache.readout_argmax, cols] += dh_g

    agg = params.aggregator_kind
    for layer in reversed(range(len(params.transforms))):
        transform = params.transforms[layer]
        prev_dim = params.layer_dims[layer]
        dpre = dh * (cache.preacts[layer] > 0)
        grads.transforms[layer] += dpre.T @ cache.stacked_inputs[layer]
        dstacked = dpre @ transform
        dh_self = dstacked[:, :prev_dim]
        d_msgs = dstacked[:, prev_dim:]

        h_in = cache.node_embeddings[layer]
        if agg == "mean":
            dh_in = _mean_backward(g.edge_weights, cache.mean_degrees[layer], d_msgs)
        elif agg == "maxpool":
            dh_in = _maxpool_backward(
                g.edge_weights, cache.maxpool_argmax[layer], d_msgs, n, prev_dim
            )
        else:
            dh_in = _gated_backward(
                params.gates[layer],
                cache.gated_steps[layer],
                d_msgs,
                h_in,
                grads.gates[layer],
            )
        dh = dh_self + dh_in

    return grads


# ---------------------------------------------------------------------------
# Optimization


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """One plain gradient-descent update; rejects non-finite gradients."""
    arrays = (
        grads.transforms
        + [a for gw in grads.gates for a in (gw.update, gw.reset, gw.candidate)]
        + [grads.attn_transform, grads.attn_vector, grads.clf_weights]
    )
    if not all(np.isfinite(a).all() for a in arrays) or not np.isfinite(grads.clf_bias):
        raise NumericError("non-finite gradient; step aborted")
    return replace(
        params,
        transforms=[w - lr * gw for w, gw in zip(params.transforms, grads.transforms)],
        gates=[
            GateWeights(
                update=pg.update - lr * gg.update,
                reset=pg.reset - lr * gg.reset,
                candidate=pg.candidate - lr * gg.candidate,
            )
            for pg, gg in zip(params.gates, grads.gates)
        ],
        attn_transform=params.attn_transform - lr * grads.attn_transform,
        attn_vector=params.attn_vector - lr * grads.attn_vector,
        clf_weights=params.clf_weights - lr * grads.clf_weights,
        clf_bias=params.clf_bias - lr * grads.clf_bias,
    )


def _accumulate(total: Gradients, part: Gradients, scale: float) -> None:
    for acc, new in zip(total.transforms, part.transforms):
        acc += scale * new
    for acc, new in zip(total.gates, part.gates):
        acc.update += scale * new.update
        acc.reset += scale * new.reset
        acc.candidate += scale * new.candidate
    total.attn_transform += scale * part.attn_transform
    total.attn_vector += scale * part.attn_vector
    total.clf_weights += scale * part.clf_weights
    total.clf_bias += scale * part.clf_bias


def train(
    graphs: list[tuple[SegmentGraph, int]],
    params: ModelParams,
    cfg: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Mini-batch SGD over labelled segment graphs.

    Shuffling is deterministic from cfg.seed; within a batch, gradients
    are accumulated in fixed index order and averaged. Returns the final
    parameters and the mean per-graph loss of each epoch.
    """
    if not graphs:
        raise ConfigError("training needs at least one labelled graph")
    d_in = params.layer_dims[0]
    for g, label in graphs:
        if g.feature_dim != d_in:
            raise ConfigError(
                f"graph feature dim {g.feature_dim} does not match model input dim {d_in}"
            )
        if label not in (0, 1):
            raise ConfigError(f"labels must be 0 or 1, got {label!r}")
    labels = np.array([label for _, label in graphs])
    if labels.min() == labels.max():
        log.warning("training data holds a single class (%d) only", labels[0])

    class_weight = {0: 1.0, 1: 1.0}
    if cfg.class_weighting:
        for c in (0, 1):
            count = int((labels == c).sum())
            if count:
                class_weight[c] = len(graphs) / (2.0 * count)

    rng = make_rng(cfg.seed)
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(graphs)) if cfg.shuffle else np.arange(len(graphs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            total = zero_gradients(params)
            for i in batch:
                g, y = graphs[int(i)]
                w = class_weight[y]
                cache = forward(g, params)
                epoch_loss += w * loss(cache.prediction, y)
                _accumulate(total, backward(cache, g, params, y), w / len(batch))
            params = sgd_step(params, total, cfg.learning_rate)
        history.append(epoch_loss / len(graphs))
    return params, history


# ---------------------------------------------------------------------------
# Parameter vector packing (gradient checks) and checkpoints


def _param_entries(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    entries = []
    for i, (w, gw) in enumerate(zip(params.transforms, params.gates)):
        entries.append((f"layer{i}.transform", w))
        entries.append((f"layer{i}.gate_update", gw.update))
        entries.append((f"layer{i}.gate_reset", gw.reset))
        entries.append((f"layer{i}.gate_candidate", gw.candidate))
    entries.append(("attention.transform", params.attn_transform))
    entries.append(("attention.vector", params.attn_vector))
    entries.append(("classifier.weights", params.clf_weights))
    entries.append(("classifier.bias", np.array([params.clf_bias])))
    return entries


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in _param_entries(params)])


def flatten_gradients(params: ModelParams, grads: Gradients) -> np.ndarray:
    pieces = []
    for i in range(len(params.transforms)):
        pieces.append(grads.transforms[i].ravel())
        pieces.append(grads.gates[i].update.ravel())
        pieces.append(grads.gates[i].reset.ravel())
        pieces.append(grads.gates[i].candidate.ravel())
    pieces += [
        grads.attn_transform.ravel(),
        grads.attn_vector.ravel(),
        grads.clf_weights.ravel(),
        np.array([grads.clf_bias]),
    ]
    return np.concatenate(pieces)


def unflatten_params(vector: np.ndarray, template: ModelParams) -> ModelParams:
    entries = _param_entries(template)
    sizes = [a.size for _, a in entries]
    if vector.size != sum(sizes):
        raise ValueError(f"vector has {vector.size} entries, expected {sum(sizes)}")
    chunks = np.split(np.asarray(vector, dtype=np.float64), np.cumsum(sizes)[:-1])
    shaped = [c.reshape(a.shape).copy() for c, (_, a) in zip(chunks, entries)]
    n_layers = len(template.transforms)
    transforms = [shaped[4 * i] for i in range(n_layers)]
    gates = [
        GateWeights(shaped[4 * i + 1], shaped[4 * i + 2], shaped[4 * i + 3])
        for i in range(n_layers)
    ]
    tail = shaped[4 * n_layers :]
    return replace(
        template,
        transforms=transforms,
        gates=gates,
        attn_transform=tail[0],
        attn_vector=tail[1],
        clf_weights=tail[2],
        clf_bias=float(tail[3][0]),
    )


def save_checkpoint(
    params: ModelParams, path, similarity: SimilarityConfig | None = None
) -> None:
    """Binary checkpoint: magic, version, JSON header, float64 LE blobs."""
    entries = _param_entries(params)
    header = {
        "layer_dims": list(params.layer_dims),
        "aggregator_kind": params.aggregator_kind,
        "readout_kind": params.readout_kind,
        "a_dim": params.a_dim,
        "attention_averaged": params.attention_averaged,
        "similarity": None if similarity is None else similarity.to_dict(),
        "params": [{"name": name, "shape": list(a.shape)} for name, a in entries],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(a.astype("<f8").tobytes() for _, a in entries)
    out = (
        CEGM_MAGIC
        + struct.pack("<I", CEGM_VERSION)
        + struct.pack("<I", len(header_bytes))
        + header_bytes
        + blob
    )
    Path(path).write_bytes(out)


def load_checkpoint(path) -> tuple[ModelParams, SimilarityConfig | None]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 12:
        raise TruncatedFileError(f"checkpoint header truncated: {len(raw)} bytes")
    if raw[:4] != CEGM_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {CEGM_MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CEGM_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", raw, 8)
    if len(raw) < 12 + header_len:
        raise TruncatedFileError("checkpoint header truncated")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from exc

    shapes = [(e["name"], tuple(e["shape"])) for e in header["params"]]
    total = sum(int(np.prod(s)) if s else 1 for _, s in shapes)
    expected = 12 + header_len + 8 * total
    if len(raw) != expected:
        raise TruncatedFileError(
            f"checkpoint payload length mismatch: expected {expected} bytes, got {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=12 + header_len)

    arrays: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = flat[pos : pos + size].reshape(shape).astype(np.float64)
        pos += size

    layer_dims = tuple(header["layer_dims"])
    n_layers = len(layer_dims) - 1
    params = ModelParams(
        layer_dims=layer_dims,
        transforms=[arrays[f"layer{i}.transform"] for i in range(n_layers)],
        gates=[
            GateWeights(
                arrays[f"layer{i}.gate_update"],
                arrays[f"layer{i}.gate_reset"],
                arrays[f"layer{i}.gate_candidate"],
            )
            for i in range(n_layers)
        ],
        attn_transform=arrays["attention.transform"],
        attn_vector=arrays["attention.vector"],
        clf_weights=arrays["classifier.weights"],
        clf_bias=float(arrays["classifier.bias"][0]),
        aggregator_kind=header["aggregator_kind"],
        readout_kind=header["readout_kind"],
        attention_averaged=bool(header.get("attention_averaged", True)),
    )
    sim = header.get("similarity")
    return params, None if sim is None else SimilarityConfig.from_dict(sim)
