"""From-scratch two-layer LSTM classifier.

Plain numpy, double precision: forward pass, backpropagation through time,
softmax cross-entropy, Adam, a deterministic training loop, and a versioned
binary model format. Gate row blocks are ordered [input, forget, cell, output]
throughout.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .windows import NormStats, apply_norm, fit_norm, stratified_split

HIDDEN_SIZE = 128
INPUT_DIM = 3
N_CLASSES = 3
GATE_ORDER = b"ifgo"

_MODEL_MAGIC = b"NNLM"
_MODEL_VERSION = 1


class ModelError(ValueError):
    """Shape mismatch, non-finite numerics, or a bad model file."""


def _sigmoid(z):
    # piecewise form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmLayerParams:
    W_ih: np.ndarray  # (4H, D)
    W_hh: np.ndarray  # (4H, H)
    b: np.ndarray     # (4H,)

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_ih.shape[1]


@dataclass
class ModelParams:
    layer1: LstmLayerParams
    layer2: LstmLayerParams
    head_W: np.ndarray  # (classes, H)
    head_b: np.ndarray  # (classes,)

    @property
    def hidden(self) -> int:
        return self.layer1.hidden

    @property
    def input_dim(self) -> int:
        return self.layer1.input_dim

    @property
    def n_classes(self) -> int:
        return self.head_W.shape[0]

    def as_arrays(self) -> list:
        """Fixed flattening order used by Adam, clipping, and serialization."""
        return [self.layer1.W_ih, self.layer1.W_hh, self.layer1.b,
                self.layer2.W_ih, self.layer2.W_hh, self.layer2.b,
                self.head_W, self.head_b]

    @staticmethod
    def from_arrays(arrays) -> "ModelParams":
        a = list(arrays)
        return ModelParams(
            layer1=LstmLayerParams(a[0], a[1], a[2]),
            layer2=LstmLayerParams(a[3], a[4], a[5]),
            head_W=a[6], head_b=a[7])

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays([a.copy() for a in self.as_arrays()])


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(params: ModelParams, lr: float = 1e-3) -> "AdamState":
        return AdamState(m=[np.zeros_like(a) for a in params.as_arrays()],
                         v=[np.zeros_like(a) for a in params.as_arrays()],
                         t=0, lr=lr)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    grad_clip_norm: float = 5.0
    init_scale: float = 1.0
    hidden: int = HIDDEN_SIZE

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def init_params(seed: int, hidden: int = HIDDEN_SIZE, input_dim: int = INPUT_DIM,
                n_classes: int = N_CLASSES, init_scale: float = 1.0) -> ModelParams:
    """Uniform(-k, k) init with k = init_scale / sqrt(hidden); forget-gate
    bias starts at 1.0 to keep early memory open."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    k = init_scale / np.sqrt(hidden)

    def layer(d_in):
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        return LstmLayerParams(
            W_ih=rng.uniform(-k, k, size=(4 * hidden, d_in)),
            W_hh=rng.uniform(-k, k, size=(4 * hidden, hidden)),
            b=b)

    return ModelParams(
        layer1=layer(input_dim),
        layer2=layer(hidden),
        head_W=rng.uniform(-k, k, size=(n_classes, hidden)),
        head_b=np.zeros(n_classes))


# --- forward -------------------------------------------------------------

def _layer_forward(layer: LstmLayerParams, x):
    """x: (B, T, D) -> hidden sequence (B, T, H) plus the per-step cache."""
    b_sz, t_len, _ = x.shape
    h_dim = layer.hidden
    h = np.zeros((b_sz, h_dim))
    c = np.zeros((b_sz, h_dim))
    gates_i = np.empty((t_len, b_sz, h_dim))
    gates_f = np.empty((t_len, b_sz, h_dim))
    gates_g = np.empty((t_len, b_sz, h_dim))
    gates_o = np.empty((t_len, b_sz, h_dim))
    cells = np.empty((t_len, b_sz, h_dim))
    tanh_c = np.empty((t_len, b_sz, h_dim))
    hs = np.empty((t_len, b_sz, h_dim))
    for t in range(t_len):
        z = x[:, t, :] @ layer.W_ih.T + h @ layer.W_hh.T + layer.b
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim:2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates_i[t], gates_f[t], gates_g[t], gates_o[t] = i, f, g, o
        cells[t], tanh_c[t], hs[t] = c, tc, h
    cache = {"x": x, "i": gates_i, "f": gates_f, "g": gates_g, "o": gates_o,
             "c": cells, "tanh_c": tanh_c, "h": hs}
    return hs.transpose(1, 0, 2), cache


def forward_batch(params: ModelParams, x):
    """x: (B, T, D) -> (logits (B, classes), cache for BPTT)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.input_dim:
        raise ModelError(f"expected input (B, T, {params.input_dim}), got {x.shape}")
    if x.shape[1] < 1:
        raise ModelError("input sequence length must be >= 1")
    h1, cache1 = _layer_forward(params.layer1, x)
    h2, cache2 = _layer_forward(params.layer2, h1)
    logits = h2[:, -1, :] @ params.head_W.T + params.head_b
    if not np.all(np.isfinite(logits)):
        for t in range(x.shape[1]):
            if not np.all(np.isfinite(cache2["h"][t])):
                raise ModelError(f"non-finite activation at timestep {t}")
        raise ModelError("non-finite logits")
    return logits, {"l1": cache1, "l2": cache2, "h2_last": h2[:, -1, :]}


def lstm_forward(params: ModelParams, window):
    """Single (T, D) window -> (logits (classes,), cache). The classifier head
    reads the layer-2 hidden state at the final timestep."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ModelError(f"expected a (T, D) window, got shape {window.shape}")
    if not np.all(np.isfinite(window)):
        raise ModelError("non-finite value in input window")
    logits, cache = forward_batch(params, window[None, :, :])
    return logits[0], cache


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label: int):
    """Cross-entropy of one logit vector; returns (loss, dloss/dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[-1]):
        raise ModelError(f"label {label} outside [0, {logits.shape[-1]})")
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum()) + logits.max()
    loss = lse - logits[label]
    dlogits = softmax(logits)
    dlogits[label] -= 1.0
    return loss, dlogits


def softmax_xent_batch(logits, labels):
    """Mean cross-entropy over a batch; dlogits already carries the 1/B factor."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    losses = lse - logits[np.arange(b), labels]
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    return float(losses.mean()), dlogits / b


# --- backward ------------------------------------------------------------

def _layer_backward(layer: LstmLayerParams, cache, dh_seq):
    """dh_seq: (T, B, H) upstream gradient on each hidden output.

    Returns (dx (B, T, D), LstmLayerParams-shaped gradients)."""
    x = cache["x"]
    b_sz, t_len, _ = x.shape
    h_dim = layer.hidden
    gi, gf, gg, go = cache["i"], cache["f"], cache["g"], cache["o"]
    cells, tanh_c, hs = cache["c"], cache["tanh_c"], cache["h"]

    dW_ih = np.zeros_like(layer.W_ih)
    dW_hh = np.zeros_like(layer.W_hh)
    db = np.zeros_like(layer.b)
    dx = np.empty((b_sz, t_len, layer.input_dim))
    dh_next = np.zeros((b_sz, h_dim))
    dc_next = np.zeros((b_sz, h_dim))

    for t in range(t_len - 1, -1, -1):
        dh = dh_seq[t] + dh_next
        do = dh * tanh_c[t] * go[t] * (1.0 - go[t])
        dc = dh * go[t] * (1.0 - tanh_c[t] ** 2) + dc_next
        c_prev = cells[t - 1] if t > 0 else np.zeros((b_sz, h_dim))
        di = dc * gg[t] * gi[t] * (1.0 - gi[t])
        df = dc * c_prev * gf[t] * (1.0 - gf[t])
        dg = dc * gi[t] * (1.0 - gg[t] ** 2)
        dc_next = dc * gf[t]

        dz = np.concatenate([di, df, dg, do], axis=1)  # (B, 4H)
        h_prev = hs[t - 1] if t > 0 else np.zeros((b_sz, h_dim))
        dW_ih += dz.T @ x[:, t, :]
        dW_hh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx[:, t, :] = dz @ layer.W_ih
        dh_next = dz @ layer.W_hh

    return dx, LstmLayerParams(W_ih=dW_ih, W_hh=dW_hh, b=db)


def backward_bptt(params: ModelParams, dlogits, cache, clip_norm: float | None = None):
    """Gradients of the (already batch-averaged) loss w.r.t. every parameter.

    dlogits: (B, classes) from softmax_xent_batch. When clip_norm is given,
    the full gradient is rescaled so its global L2 norm is at most clip_norm.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    h2_last = cache["h2_last"]
    if dlogits.shape[0] != h2_last.shape[0]:
        raise ModelError("cache/batch size mismatch")

    dhead_W = dlogits.T @ h2_last
    dhead_b = dlogits.sum(axis=0)
    dh2_last = dlogits @ params.head_W

    t_len = cache["l2"]["x"].shape[1]
    b_sz = dlogits.shape[0]
    dh2_seq = np.zeros((t_len, b_sz, params.layer2.hidden))
    dh2_seq[-1] = dh2_last
    dh1_full, grads2 = _layer_backward(params.layer2, cache["l2"], dh2_seq)
    dh1_seq = dh1_full.transpose(1, 0, 2)
    _, grads1 = _layer_backward(params.layer1, cache["l1"], dh1_seq)

    grads = ModelParams(layer1=grads1, layer2=grads2, head_W=dhead_W, head_b=dhead_b)
    if clip_norm is not None:
        grads = clip_global_norm(grads, clip_norm)
    return grads


def grad_global_norm(grads: ModelParams) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in grads.as_arrays())))


def clip_global_norm(grads: ModelParams, max_norm: float) -> ModelParams:
    norm = grad_global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        return ModelParams.from_arrays([a * scale for a in grads.as_arrays()])
    return grads


# --- optimizer -----------------------------------------------------------

def adam_step(params: ModelParams, grads: ModelParams, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    p_arrays = params.as_arrays()
    g_arrays = grads.as_arrays()
    for g in g_arrays:
        if not np.all(np.isfinite(g)):
            raise ModelError("non-finite gradient entry")
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return ModelParams.from_arrays(new_p), replace(state, m=new_m, v=new_v, t=t)


# --- training and prediction --------------------------------------------

def predict_proba(params: ModelParams, window):
    """Class probabilities for one normalized (T, D) window."""
    logits, _ = lstm_forward(params, window)
    return softmax(logits)


def predict_batch(params: ModelParams, windows):
    logits, _ = forward_batch(params, windows)
    return softmax(logits)


def accuracy(params: ModelParams, inputs, labels, batch_size: int = 256) -> float:
    labels = np.asarray(labels)
    hits = 0
    for lo in range(0, len(labels), batch_size):
        probs = predict_batch(params, inputs[lo:lo + batch_size])
        hits += int((probs.argmax(axis=1) == labels[lo:lo + batch_size]).sum())
    return hits / max(1, len(labels))


def train(dataset, split, config: TrainConfig):
    """Train on dataset.inputs[split.train] (already normalized), tracking
    per-epoch mean train loss and held-out accuracy.

    Returns (ModelParams, history list of {epoch, train_loss, test_acc}).
    Deterministic for a fixed config.seed.
    """
    train_idx = np.asarray(split.train)
    test_idx = np.asarray(split.test)
    if train_idx.size == 0:
        raise ValueError("empty train split")
    x_train = np.asarray(dataset.inputs, dtype=np.float64)[train_idx]
    y_train = np.asarray(dataset.labels)[train_idx]
    x_test = np.asarray(dataset.inputs, dtype=np.float64)[test_idx]
    y_test = np.asarray(dataset.labels)[test_idx]

    params = init_params(config.seed, hidden=config.hidden,
                         input_dim=x_train.shape[2],
                         init_scale=config.init_scale)
    state = AdamState.init(params, lr=config.lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))))

    history = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(train_idx.size)
        losses = []
        for lo in range(0, train_idx.size, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            logits, cache = forward_batch(params, x_train[sel])
            loss, dlogits = softmax_xent_batch(logits, y_train[sel])
            grads = backward_bptt(params, dlogits, cache,
                                  clip_norm=config.grad_clip_norm)
            params, state = adam_step(params, grads, state)
            losses.append(loss)
        test_acc = accuracy(params, x_test, y_test) if test_idx.size else float("nan")
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "test_acc": test_acc})
    return params, history


@dataclass
class ModelBundle:
    """Model weights plus the training-split normalization statistics that
    every inference path must apply first."""
    params: ModelParams
    stats: NormStats


def train_on_dataset(dataset, config: TrainConfig, test_frac: float = 0.2):
    """Full desk pipeline: stratified split, fit/apply normalization on the
    train split, train. Returns (bundle, history, split)."""
    split = stratified_split(dataset.labels, test_frac=test_frac, seed=config.seed)
    stats = fit_norm(dataset.inputs[split.train])
    normalized = replace(dataset, inputs=apply_norm(dataset.inputs, stats))
    params, history = train(normalized, split, config)
    return ModelBundle(params=params, stats=stats), history, split


# --- serialization -------------------------------------------------------

def save_model(bundle: ModelBundle, path) -> None:
    """NNLM format: magic, version u16, H u16, D u16, classes u16, gate-order
    tag, norm stats, float64 weights in as_arrays() order, trailing CRC32."""
    params = bundle.params
    path = Path(path)
    out = bytearray()
    out += struct.pack("<4sHHHH4s", _MODEL_MAGIC, _MODEL_VERSION,
                       params.hidden, params.input_dim, params.n_classes, GATE_ORDER)
    out += bundle.stats.mean.astype("<f8").tobytes()
    out += bundle.stats.std.astype("<f8").tobytes()
    for a in params.as_arrays():
        out += a.astype("<f8").tobytes(order="C")
    crc = zlib.crc32(bytes(out)) & 0xFFFFFFFF
    out += struct.pack("<I", crc)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(out))


def _param_shapes(hidden: int, input_dim: int, n_classes: int):
    return [(4 * hidden, input_dim), (4 * hidden, hidden), (4 * hidden,),
            (4 * hidden, hidden), (4 * hidden, hidden), (4 * hidden,),
            (n_classes, hidden), (n_classes,)]


def load_model(path) -> ModelBundle:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise ModelError(f"{path}: truncated model file")
    magic, version, hidden, input_dim, n_classes, gate_order = \
        struct.unpack("<4sHHHH4s", raw[:16])
    if magic != _MODEL_MAGIC:
        raise ModelError(f"{path}: bad magic {magic!r}")
    if version != _MODEL_VERSION:
        raise ModelError(f"{path}: unsupported model version {version}")
    if gate_order != GATE_ORDER:
        raise ModelError(f"{path}: unknown gate order tag {gate_order!r}")
    crc_stored, = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc_stored:
        raise ModelError(f"{path}: checksum mismatch")

    shapes = _param_shapes(hidden, input_dim, n_classes)
    expected = 16 + 8 * (2 * input_dim + sum(int(np.prod(s)) for s in shapes)) + 4
    if len(raw) != expected:
        raise ModelError(f"{path}: expected {expected} bytes, found {len(raw)}")

    offset = 16
    mean = np.frombuffer(raw, dtype="<f8", count=input_dim, offset=offset).copy()
    offset += 8 * input_dim
    std = np.frombuffer(raw, dtype="<f8", count=input_dim, offset=offset).copy()
    offset += 8 * input_dim
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count,
                                    offset=offset).reshape(shape).copy())
        offset += 8 * count
    return ModelBundle(params=ModelParams.from_arrays(arrays),
                       stats=NormStats(mean=mean, std=std))
