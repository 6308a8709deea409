"""Dynamic hypergraph neural network with hand-written backpropagation.

Per timestep, ``L`` hypergraph convolutions map node features to node and
hyperedge embeddings::

    X_edge' = De^-1 H^T Dv^-1/2 X Theta
    X_node' = Dv^-1/2 H W X_edge'

with a rectifier between layers. Final-layer node embeddings are stacked over
time and passed through a causal temporal convolution (tanh), whose last
position feeds the task decoders. The contact-pattern head convolves node and
edge embeddings over ``k - 1`` frames, multiplies the selected node and
location vectors element-wise and scores the pair with a small MLP.

Both decoders add a state residual to their logit: a learned scalar times the
earliest observed "has been infected" flag for source detection, and a learned
vector dotted with the last observed one-hot state for forecasting.

All arrays are float64. Parameters live in a plain ``dict[str, ndarray]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .hypergraph import INFECTED, RECOVERED, DynamicHypergraph, StateSequence, degree_operators, pinv_diag

TASKS = ("detect", "forecast")


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int = 3
    hidden: int = 32
    num_layers: int = 2
    kernel: int = 3
    mlp_hidden: int = 32

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError(f"kernel width must be >= 1, got {self.kernel}")
        if self.num_layers < 1 or self.hidden < 1 or self.in_dim < 1 or self.mlp_hidden < 1:
            raise ValueError("layer sizes must be positive")

    def param_shapes(self) -> dict:
        h, k = self.hidden, self.kernel
        shapes = {}
        for layer in range(self.num_layers):
            shapes[f"theta_{layer}"] = (self.in_dim if layer == 0 else h, h)
        shapes.update(
            phi_temporal=(h, h, k),
            phi_pattern=(h, h, k),
            mlp_w1=(h, self.mlp_hidden),
            mlp_b1=(self.mlp_hidden,),
            mlp_w2=(self.mlp_hidden,),
            mlp_b2=(),
            det_w=(h,),
            det_b=(),
            det_r=(),
            fc_w=(h,),
            fc_b=(),
            fc_res=(self.in_dim,),
        )
        return shapes


def init_params(config: ModelConfig, rng) -> dict:
    """Glorot-uniform weights; biases and residual weights start at zero."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.startswith(("theta", "phi", "mlp_w")) and len(shape) >= 1:
            if len(shape) == 3:
                fan_in, fan_out = shape[0] * shape[2], shape[1] * shape[2]
            elif len(shape) == 2:
                fan_in, fan_out = shape
            else:
                fan_in, fan_out = shape[0], 1
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif name in ("det_w", "fc_w"):
            params[name] = rng.normal(0.0, 0.1, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- hypergraph convolution ---------------------------------------------------


class FrameOps:
    """Incidence and normalisation vectors for one timestep."""

    __slots__ = ("H", "Ht", "dv_isqrt", "de_inv", "w")

    def __init__(self, H, edge_weight=None):
        H = sp.csr_matrix(H, dtype=np.float64)
        deg = degree_operators(H, edge_weight)
        self.H = H
        self.Ht = H.T.tocsr()
        self.dv_isqrt = pinv_diag(deg.node_degree, 0.5)
        self.de_inv = pinv_diag(deg.edge_degree, 1.0)
        self.w = deg.edge_weight


def _check_layer_shapes(ops: FrameOps, X, theta):
    if X.shape[0] != ops.H.shape[0]:
        raise ValueError(f"node features have {X.shape[0]} rows, incidence has {ops.H.shape[0]}")
    if X.shape[1] != theta.shape[0]:
        raise ValueError(f"feature dim {X.shape[1]} does not match Theta input dim {theta.shape[0]}")


def hgnn_layer(H, X, theta, edge_weight=None):
    """One hypergraph convolution (no activation); returns ``(X_node', X_edge')``."""
    ops = H if isinstance(H, FrameOps) else FrameOps(H, edge_weight)
    X = np.asarray(X, dtype=np.float64)
    _check_layer_shapes(ops, X, theta)
    B = (ops.dv_isqrt[:, None] * X) @ theta
    edge = ops.de_inv[:, None] * (ops.Ht @ B)
    node = ops.dv_isqrt[:, None] * (ops.H @ (ops.w[:, None] * edge))
    return node, edge


def _hgnn_frame_forward(ops: FrameOps, X, thetas):
    caches = []
    z = X
    node = edge = None
    for layer, theta in enumerate(thetas):
        _check_layer_shapes(ops, z, theta)
        A = ops.dv_isqrt[:, None] * z
        B = A @ theta
        edge = ops.de_inv[:, None] * (ops.Ht @ B)
        node = ops.dv_isqrt[:, None] * (ops.H @ (ops.w[:, None] * edge))
        caches.append((A, node))
        if layer < len(thetas) - 1:
            z = np.maximum(node, 0.0)
    return node, edge, caches


def _hgnn_frame_backward(ops: FrameOps, thetas, caches, g_node, g_edge, g_thetas):
    g_z = g_node
    for layer in reversed(range(len(thetas))):
        A, node = caches[layer]
        last = layer == len(thetas) - 1
        g_pre = g_z if last else g_z * (node > 0)
        g_e = ops.w[:, None] * (ops.Ht @ (ops.dv_isqrt[:, None] * g_pre))
        if last and g_edge is not None:
            g_e = g_e + g_edge
        g_B = ops.H @ (ops.de_inv[:, None] * g_e)
        g_thetas[layer] += A.T @ g_B
        if layer > 0:
            g_z = ops.dv_isqrt[:, None] * (g_B @ thetas[layer].T)


def hgnn_encode(H, X, thetas, edge_weight=None):
    """Stack of layers with a rectifier between them; returns final ``(node, edge)``."""
    ops = H if isinstance(H, FrameOps) else FrameOps(H, edge_weight)
    node, edge, _ = _hgnn_frame_forward(ops, np.asarray(X, dtype=np.float64), thetas)
    return node, edge


def temporal_stack(frames) -> np.ndarray:
    """Stack per-timestep ``(M, d)`` embeddings into a ``(T', M, d)`` sequence."""
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise ValueError("no frames to stack")
    shape = frames[0].shape
    for t, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError(f"frame {t} has shape {f.shape}, expected {shape}")
    return np.stack(frames, axis=0)


# -- temporal convolution -----------------------------------------------------

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
}


def _conv_pre(seq, phi):
    T, k = seq.shape[0], phi.shape[2]
    pre = np.zeros(seq.shape[:2] + (phi.shape[1],))
    for tau in range(min(k, T)):
        pre[tau:] += seq[: T - tau] @ np.ascontiguousarray(phi[:, :, tau])
    return pre


def _stacked_taps(seq, phi):
    # [x_t | x_{t-1} | ... | x_{t-k+1}] at the final position, zeros before the start
    T, k = seq.shape[0], phi.shape[2]
    taps = [seq[T - 1 - tau] if tau < T else np.zeros_like(seq[0]) for tau in range(k)]
    return np.concatenate(taps, axis=1)


def _flat_kernel(phi):
    d_in, d_out, k = phi.shape
    return phi.transpose(2, 0, 1).reshape(k * d_in, d_out)


def _conv_last(seq, phi):
    """Pre-activation of the causal convolution at the final position only."""
    return _stacked_taps(seq, phi) @ _flat_kernel(phi)


def _conv_last_backward(seq, phi, g_last):
    T, (d_in, d_out, k) = seq.shape[0], phi.shape
    g_flat = _stacked_taps(seq, phi).T @ g_last
    g_phi = g_flat.reshape(k, d_in, d_out).transpose(1, 2, 0).copy()
    g_taps = g_last @ _flat_kernel(phi).T
    g_seq = np.zeros_like(seq)
    for tau in range(min(k, T)):
        g_seq[T - 1 - tau] = g_taps[:, tau * d_in:(tau + 1) * d_in]
    return g_seq, g_phi


def temporal_conv(seq, phi, activation="tanh"):
    """Causal convolution along axis 0 of a ``(T', M, d_in)`` sequence.

    ``phi`` has shape ``(d_in, d_out, k)``; tap ``tau`` multiplies the input
    ``tau`` steps in the past, with zeros before the first frame.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if phi.ndim != 3 or phi.shape[2] < 1:
        raise ValueError("kernel must have shape (d_in, d_out, k) with k >= 1")
    if seq.shape[-1] != phi.shape[0]:
        raise ValueError(f"sequence channels {seq.shape[-1]} != kernel input channels {phi.shape[0]}")
    act = _ACTIVATIONS[activation][0] if isinstance(activation, str) else activation
    return act(_conv_pre(seq, phi))


# -- heads --------------------------------------------------------------------


def _mlp_forward(prod, params):
    a1 = prod @ params["mlp_w1"] + params["mlp_b1"]
    h1 = np.maximum(a1, 0.0)
    logit = h1 @ params["mlp_w2"] + params["mlp_b2"]
    return logit, (prod, a1, h1)


def contact_score(node_seq, edge_seq, phi_pattern, mlp: dict, pairs) -> np.ndarray:
    """Score each ``(individual, location)`` pair for contact at the next frame.

    ``node_seq`` (T', N, d) and ``edge_seq`` (T', E, d) cover the frames that
    precede the target; ``mlp`` holds ``mlp_w1, mlp_b1, mlp_w2, mlp_b2``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    N, E = node_seq.shape[1], edge_seq.shape[1]
    if pairs.size and ((pairs[:, 0] < 0).any() or (pairs[:, 0] >= N).any()
                       or (pairs[:, 1] < 0).any() or (pairs[:, 1] >= E).any()):
        raise IndexError("candidate pair index out of range")
    zn = _conv_last(np.asarray(node_seq, dtype=np.float64), phi_pattern)
    ze = _conv_last(np.asarray(edge_seq, dtype=np.float64), phi_pattern)
    logit, _ = _mlp_forward(zn[pairs[:, 0]] * ze[pairs[:, 1]], mlp)
    return expit(logit)


def decode_detection(h, first_observed, w, b, r) -> np.ndarray:
    """Source scores ``sigmoid(h @ w + b + r * first_observed)``."""
    return expit(h @ w + b + r * first_observed)


def decode_forecast(h, last_observed, w, b, res) -> np.ndarray:
    """Infection probabilities ``sigmoid(h @ w + b + last_observed @ res)``.

    ``last_observed`` is the one-hot state at the final observed frame.
    """
    return expit(h @ w + b + last_observed @ res)


def rank_nodes(scores) -> np.ndarray:
    """Node ids by descending score, ties broken by ascending id."""
    scores = np.asarray(scores)
    return np.lexsort((np.arange(len(scores)), -scores))


# -- episode windows ----------------------------------------------------------


class Window:
    """Model input for one episode: incidences and masked states on ``[0, ks]``."""

    def __init__(self, hypergraph: DynamicHypergraph, states: StateSequence, edge_weight=None):
        T = states.num_timesteps
        if T > hypergraph.num_timesteps:
            raise ValueError("more state frames than hypergraph timesteps")
        if states.num_individuals != hypergraph.num_individuals:
            raise ValueError("state and hypergraph disagree on the number of individuals")
        self.hypergraph = hypergraph
        self.states = states
        self.edge_weight = edge_weight
        self.X = states.onehot()
        self.length = T
        self.num_nodes = hypergraph.num_individuals
        self.num_edges = hypergraph.num_locations
        observed = np.flatnonzero((states.codes >= 0).any(axis=1))
        self.first_observed_step = int(observed[0]) if observed.size else T
        if observed.size:
            first = states.codes[self.first_observed_step]
            self.first_observed = ((first == INFECTED) | (first == RECOVERED)).astype(np.float64)
        else:
            self.first_observed = np.zeros(self.num_nodes)
        self._ops = {}

    def ops(self, t: int) -> FrameOps:
        if t not in self._ops:
            self._ops[t] = FrameOps(self.hypergraph.incidence(t), self.edge_weight)
        return self._ops[t]


@dataclass
class ForwardCache:
    task: str
    frames: dict
    task_frames: list
    pattern_frames: list
    h_pre: np.ndarray
    h: np.ndarray
    task_out: np.ndarray
    first_observed: np.ndarray
    last_observed: np.ndarray
    pattern: dict | None


def _thetas(params, config):
    return [params[f"theta_{i}"] for i in range(config.num_layers)]


def forward(window: Window, params: dict, config: ModelConfig, task: str, pattern_t0: int | None = None,
            pattern_pairs=None):
    """Run the network on one window.

    Only frames inside the receptive field of the outputs are encoded: the
    last ``k`` frames for the task decoder and ``[t0, t0 + k - 2]`` for the
    pattern head. Returns ``(task_probs, pattern_scores, cache)``;
    ``pattern_scores`` is None unless ``pattern_t0`` and ``pattern_pairs`` are given.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    thetas = _thetas(params, config)
    k, T = config.kernel, window.length
    task_frames = list(range(max(0, T - k), T))
    pattern_frames = []
    if pattern_t0 is not None and pattern_pairs is not None:
        if k < 2:
            raise ValueError("contact-pattern head needs kernel width k >= 2")
        if not 0 <= pattern_t0 <= T - k:
            raise ValueError(f"pattern window start {pattern_t0} outside [0, {T - k}]")
        pattern_frames = list(range(pattern_t0, pattern_t0 + k - 1))

    frames = {}
    for t in sorted(set(task_frames) | set(pattern_frames)):
        ops = window.ops(t)
        node, edge, caches = _hgnn_frame_forward(ops, window.X[t], thetas)
        frames[t] = (node, edge, caches, ops)

    seq = temporal_stack([frames[t][0] for t in task_frames])
    h_pre = _conv_last(seq, params["phi_temporal"])
    h = np.tanh(h_pre)
    if task == "detect":
        out = decode_detection(h, window.first_observed, params["det_w"], params["det_b"], params["det_r"])
    else:
        out = decode_forecast(h, window.X[-1], params["fc_w"], params["fc_b"], params["fc_res"])

    pattern = None
    scores = None
    if pattern_frames:
        pairs = np.asarray(pattern_pairs, dtype=np.int64).reshape(-1, 2)
        node_seq = temporal_stack([frames[t][0] for t in pattern_frames])
        edge_seq = temporal_stack([frames[t][1] for t in pattern_frames])
        zn = _conv_last(node_seq, params["phi_pattern"])
        ze = _conv_last(edge_seq, params["phi_pattern"])
        logit, mlp_cache = _mlp_forward(zn[pairs[:, 0]] * ze[pairs[:, 1]], params)
        scores = expit(logit)
        pattern = dict(pairs=pairs, node_seq=node_seq, edge_seq=edge_seq, zn=zn, ze=ze,
                       mlp=mlp_cache, scores=scores)

    cache = ForwardCache(task, frames, task_frames, pattern_frames, h_pre, h, out,
                         window.first_observed, window.X[-1], pattern)
    return out, scores, cache


def backward(cache: ForwardCache | None, params: dict, config: ModelConfig, g_task=None, g_pattern=None) -> dict:
    """Gradients of a scalar loss for every parameter.

    ``g_task`` and ``g_pattern`` are the loss gradients with respect to the
    task probabilities and pattern scores returned by :func:`forward`.
    """
    if cache is None:
        raise ValueError("backward requires the cache from a forward pass")
    grads = zeros_like_params(params)
    thetas = _thetas(params, config)
    g_thetas = [grads[f"theta_{i}"] for i in range(config.num_layers)]
    g_node = {t: None for t in cache.frames}
    g_edge = {t: None for t in cache.frames}

    def acc(store, t, g):
        store[t] = g if store[t] is None else store[t] + g

    if g_task is not None:
        s = cache.task_out
        g_logit = np.asarray(g_task, dtype=np.float64) * s * (1.0 - s)
        if cache.task == "detect":
            grads["det_w"] = cache.h.T @ g_logit
            grads["det_b"] = np.asarray(g_logit.sum())
            grads["det_r"] = np.asarray(cache.first_observed @ g_logit)
            g_h = np.outer(g_logit, params["det_w"])
        else:
            grads["fc_w"] = cache.h.T @ g_logit
            grads["fc_b"] = np.asarray(g_logit.sum())
            grads["fc_res"] = cache.last_observed.T @ g_logit
            g_h = np.outer(g_logit, params["fc_w"])
        seq = np.stack([cache.frames[t][0] for t in cache.task_frames])
        g_seq, grads["phi_temporal"] = _conv_last_backward(seq, params["phi_temporal"],
                                                           g_h * (1.0 - cache.h * cache.h))
        for i, t in enumerate(cache.task_frames):
            acc(g_node, t, g_seq[i])

    if g_pattern is not None and cache.pattern is not None:
        pc = cache.pattern
        s = pc["scores"]
        g_logit = np.asarray(g_pattern, dtype=np.float64) * s * (1.0 - s)
        prod, a1, h1 = pc["mlp"]
        grads["mlp_w2"] = h1.T @ g_logit
        grads["mlp_b2"] = np.asarray(g_logit.sum())
        g_a1 = np.outer(g_logit, params["mlp_w2"]) * (a1 > 0)
        grads["mlp_w1"] = prod.T @ g_a1
        grads["mlp_b1"] = g_a1.sum(axis=0)
        g_prod = g_a1 @ params["mlp_w1"].T
        v, e = pc["pairs"][:, 0], pc["pairs"][:, 1]
        g_zn = np.zeros_like(pc["zn"])
        g_ze = np.zeros_like(pc["ze"])
        np.add.at(g_zn, v, g_prod * pc["ze"][e])
        np.add.at(g_ze, e, g_prod * pc["zn"][v])
        g_phi = np.zeros_like(params["phi_pattern"])
        for seq, g_last, store in ((pc["node_seq"], g_zn, g_node), (pc["edge_seq"], g_ze, g_edge)):
            g_seq, g_p = _conv_last_backward(seq, params["phi_pattern"], g_last)
            g_phi += g_p
            for i, t in enumerate(cache.pattern_frames):
                acc(store, t, g_seq[i])
        grads["phi_pattern"] = g_phi

    for t, (node, edge, caches, ops) in cache.frames.items():
        if g_node[t] is None and g_edge[t] is None:
            continue
        gn = g_node[t] if g_node[t] is not None else np.zeros_like(node)
        _hgnn_frame_backward(ops, thetas, caches, gn, g_edge[t], g_thetas)
    return grads


# -- checkpoints --------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, config: ModelConfig, extra: dict | None = None) -> None:
    """Write an ``.npz`` holding every tensor plus the JSON model config."""
    meta = {"model": asdict(config), "extra": extra or {}}
    arrays = {f"param/{k}": np.asarray(v) for k, v in sorted(params.items())}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(params, config, extra)``; rejects tensors with unexpected shapes."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        params = {k.split("/", 1)[1]: data[k].astype(np.float64) for k in data.files if k.startswith("param/")}
    config = ModelConfig(**meta["model"])
    expected = config.param_shapes()
    if set(params) != set(expected):
        raise CheckpointError(f"checkpoint tensors {sorted(params)} do not match {sorted(expected)}")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise CheckpointError(f"tensor {name} has shape {params[name].shape}, expected {tuple(shape)}")
    return params, config, meta.get("extra", {})
