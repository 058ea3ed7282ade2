"""Small trainable RNN transducer written directly in numpy.

The model has three parameter groups:

* ``encoder``: stacked (optionally bidirectional) LSTM layers, with a single
  time-subsampling stride applied after the first layer;
* ``prediction``: label embedding (with a dedicated start-of-sequence row)
  feeding one LSTM layer;
* ``joint``: ``tanh(enc @ We + pred @ Wp + b) @ Wo + bo`` followed by a
  log-softmax over the ``V`` labels plus blank (blank is index ``V``).

Gradients come from an explicit reverse sweep over the cached forward pass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import LogitsLattice, log_softmax, rnnt_loss_and_grad
from .lstm import lstm_backward, lstm_forward, reverse_padded

GROUPS = ("encoder", "prediction", "joint")


class NumericalError(RuntimeError):
    """A loss or gradient went non-finite."""


@dataclass
class ModelConfig:
    input_dim: int = 8
    vocab_size: int = 16
    encoder_layers: int = 2
    encoder_units: int = 64
    encoder_bidirectional: bool = True
    time_subsample_factor: int = 2
    prediction_units: int = 64
    joint_units: int = 64
    init_scale: float = 0.1
    seed: int = 0
    forget_bias: float = 1.0

    def __post_init__(self):
        counts = (self.input_dim, self.vocab_size, self.encoder_layers, self.encoder_units,
                  self.time_subsample_factor, self.prediction_units, self.joint_units)
        if min(counts) < 1:
            raise ValueError("all ModelConfig counts must be >= 1")

    @property
    def directions(self) -> int:
        return 2 if self.encoder_bidirectional else 1

    @property
    def encoder_dim(self) -> int:
        return self.encoder_units * self.directions

    @property
    def blank(self) -> int:
        return self.vocab_size

    @property
    def start_symbol(self) -> int:
        # embedding row reserved for the start-of-sequence input
        return self.vocab_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: dict = field(default_factory=dict)
    prediction: dict = field(default_factory=dict)
    joint: dict = field(default_factory=dict)

    def group(self, name: str) -> dict:
        return getattr(self, name)

    def items(self):
        for g in GROUPS:
            for k, v in self.group(g).items():
                yield g, k, v

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, *({k: v.copy() for k, v in self.group(g).items()}
                                          for g in GROUPS))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, *({k: np.zeros_like(v) for k, v in self.group(g).items()}
                                          for g in GROUPS))

    def num_params(self) -> int:
        return sum(v.size for _, _, v in self.items())

    def equal(self, other: "ModelParams", groups=GROUPS) -> bool:
        return all(np.array_equal(v, other.group(g)[k])
                   for g in groups for k, v in self.group(g).items())


@dataclass
class TrainabilityMask:
    encoder_trainable: bool = True
    prediction_trainable: bool = True
    joint_trainable: bool = True

    def trainable(self, group: str) -> bool:
        return getattr(self, f"{group}_trainable")

    def any(self) -> bool:
        return self.encoder_trainable or self.prediction_trainable or self.joint_trainable

    @classmethod
    def only(cls, *groups: str) -> "TrainabilityMask":
        return cls(*(g in groups for g in GROUPS))


@dataclass
class DecoderState:
    """Recurrent states, batched along axis 0.

    ``encoder[layer][direction]`` and ``prediction`` are ``(h, c)`` pairs.
    ``None`` anywhere means a zero state.
    """

    encoder: list | None = None
    prediction: tuple | None = None


def _enc_key(layer: int, direction: int) -> str:
    return f"l{layer}_{'bw' if direction else 'fw'}"


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform ``[-init_scale, init_scale]`` initialization, deterministic in ``seed``."""
    rng = np.random.default_rng(config.seed)
    s = config.init_scale

    def u(*shape):
        return rng.uniform(-s, s, size=shape)

    H, P, J = config.encoder_units, config.prediction_units, config.joint_units
    params = ModelParams(config)
    in_dim = config.input_dim
    for layer in range(config.encoder_layers):
        for d in range(config.directions):
            params.encoder[f"{_enc_key(layer, d)}_W"] = u(in_dim + H, 4 * H)
            params.encoder[f"{_enc_key(layer, d)}_b"] = u(4 * H)
        in_dim = config.encoder_dim
    params.prediction["embedding"] = u(config.vocab_size + 1, P)
    params.prediction["W"] = u(2 * P, 4 * P)
    params.prediction["b"] = u(4 * P)
    params.joint["enc_W"] = u(config.encoder_dim, J)
    params.joint["pred_W"] = u(P, J)
    params.joint["b"] = u(J)
    params.joint["out_W"] = u(J, config.vocab_size + 1)
    params.joint["out_b"] = u(config.vocab_size + 1)
    return params


def pad_batch(seqs, dtype=np.float64):
    """Stack variable-length arrays along a new batch axis, zero-padded."""
    seqs = [np.asarray(s, dtype=dtype) for s in seqs]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    T = int(lengths.max()) if len(seqs) else 0
    out = np.zeros((len(seqs), T) + seqs[0].shape[1:], dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


def subsampled_lengths(lengths, s: int):
    return -(-np.asarray(lengths) // s)


# ---------------------------------------------------------------------------
# encoder


def encoder_forward(params: ModelParams, x, lengths, initial=None):
    """Batched encoder pass. Returns ``(enc, enc_lengths, final_states, cache)``."""
    cfg = params.config
    s = cfg.time_subsample_factor
    caches = []
    finals = []
    h = x
    lens = np.asarray(lengths)
    for layer in range(cfg.encoder_layers):
        outs, layer_final, layer_cache = [], [], []
        for d in range(cfg.directions):
            key = _enc_key(layer, d)
            h0, c0 = (None, None)
            if initial is not None and initial[layer][d] is not None:
                h0, c0 = initial[layer][d]
            inp = reverse_padded(h, lens) if d else h
            out, fin, cache = lstm_forward(params.encoder[f"{key}_W"], params.encoder[f"{key}_b"],
                                           inp, lens, h0, c0, cfg.forget_bias)
            outs.append(reverse_padded(out, lens) if d else out)
            layer_final.append(fin)
            layer_cache.append(cache)
        h = np.concatenate(outs, axis=-1) if len(outs) > 1 else outs[0]
        caches.append((lens, layer_cache, h.shape[1]))
        finals.append(layer_final)
        if layer == 0 and s > 1:
            h = h[:, ::s]
            lens = subsampled_lengths(lens, s)
    return h, lens, finals, caches


def encoder_backward(params: ModelParams, caches, d_enc, grads: ModelParams):
    cfg = params.config
    s = cfg.time_subsample_factor
    H = cfg.encoder_units
    d_h = d_enc
    for layer in range(cfg.encoder_layers - 1, -1, -1):
        lens, layer_cache, T_full = caches[layer]
        if layer == 0 and s > 1:
            full = np.zeros((d_h.shape[0], T_full, d_h.shape[2]))
            full[:, ::s] = d_h
            d_h = full
        d_in = None
        for d in range(cfg.directions):
            key = _enc_key(layer, d)
            d_out = d_h[:, :, d * H:(d + 1) * H]
            if d:
                d_out = reverse_padded(d_out, lens)
            dW, db, dx, _ = lstm_backward(layer_cache[d], d_out)
            if d:
                dx = reverse_padded(dx, lens)
            grads.encoder[f"{key}_W"] += dW
            grads.encoder[f"{key}_b"] += db
            d_in = dx if d_in is None else d_in + dx
        d_h = d_in
    return d_h


def encode(params: ModelParams, features, initial_state: DecoderState | None = None) -> np.ndarray:
    """Encode one utterance ``(T, d)`` into ``(ceil(T/s), encoder_dim)`` vectors."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.config.input_dim:
        raise ValueError(f"expected features of shape (T, {params.config.input_dim}), "
                         f"got {features.shape}")
    initial = initial_state.encoder if initial_state is not None else None
    enc, _, _, _ = encoder_forward(params, features[None], np.array([len(features)]), initial)
    return enc[0]


def encode_with_state(params: ModelParams, features, initial_state: DecoderState | None = None):
    """Like :func:`encode` but also returns the final encoder states."""
    features = np.asarray(features, dtype=np.float64)
    initial = initial_state.encoder if initial_state is not None else None
    enc, _, finals, _ = encoder_forward(params, features[None], np.array([len(features)]), initial)
    return enc[0], DecoderState(encoder=finals)


# ---------------------------------------------------------------------------
# prediction network


def prediction_forward(params: ModelParams, label_ids, lengths, initial=None):
    """Run the prediction LSTM over already-prefixed inputs ``(B, U+1)``."""
    cfg = params.config
    emb = params.prediction["embedding"][label_ids]
    h0, c0 = initial if initial is not None else (None, None)
    out, fin, cache = lstm_forward(params.prediction["W"], params.prediction["b"], emb,
                                   lengths, h0, c0, cfg.forget_bias)
    return out, fin, (label_ids, cache)


def prediction_backward(params: ModelParams, cache, d_pred, grads: ModelParams):
    label_ids, lstm_cache = cache
    dW, db, d_emb, _ = lstm_backward(lstm_cache, d_pred)
    grads.prediction["W"] += dW
    grads.prediction["b"] += db
    np.add.at(grads.prediction["embedding"], label_ids, d_emb)


def predict_step(params: ModelParams, state, previous_label: int | None):
    """Feed one label (``None`` or ``start_symbol`` for sequence start).

    ``state`` is an ``(h, c)`` pair of 1-D vectors or ``None`` for zeros.
    Returns ``(prediction_vector, new_state)``.
    """
    cfg = params.config
    label = cfg.start_symbol if previous_label is None else int(previous_label)
    if not 0 <= label <= cfg.vocab_size:
        raise ValueError(f"label {label} out of range for vocabulary of {cfg.vocab_size}")
    P = cfg.prediction_units
    if state is None:
        h = np.zeros(P)
        c = np.zeros(P)
    else:
        h, c = state
    W, b = params.prediction["W"], params.prediction["b"]
    z = params.prediction["embedding"][label] @ W[:P] + h @ W[P:] + b
    z[P:2 * P] += cfg.forget_bias
    i = 1.0 / (1.0 + np.exp(-z[:P]))
    f = 1.0 / (1.0 + np.exp(-z[P:2 * P]))
    g = np.tanh(z[2 * P:3 * P])
    o = 1.0 / (1.0 + np.exp(-z[3 * P:]))
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, (h_new, c_new)


# ---------------------------------------------------------------------------
# joint network


def joint_forward(params: ModelParams, enc, pred):
    """Batched joint over the full grid: enc (B,T,E), pred (B,U1,P) -> (B,T,U1,K)."""
    jp = params.joint
    a = enc @ jp["enc_W"]
    b = pred @ jp["pred_W"]
    hidden = np.tanh(a[:, :, None, :] + b[:, None, :, :] + jp["b"])
    logits = hidden @ jp["out_W"] + jp["out_b"]
    return log_softmax(logits), (enc, pred, hidden)


def joint_backward(params: ModelParams, cache, d_logits, grads: ModelParams):
    enc, pred, hidden = cache
    jp = params.joint
    gj = grads.joint
    gj["out_W"] += np.einsum("btuj,btuk->jk", hidden, d_logits)
    gj["out_b"] += d_logits.sum(axis=(0, 1, 2))
    d_pre = (d_logits @ jp["out_W"].T) * (1.0 - hidden * hidden)
    gj["b"] += d_pre.sum(axis=(0, 1, 2))
    d_a = d_pre.sum(axis=2)
    d_b = d_pre.sum(axis=1)
    gj["enc_W"] += np.einsum("bte,btj->ej", enc, d_a)
    gj["pred_W"] += np.einsum("bup,buj->pj", pred, d_b)
    return d_a @ jp["enc_W"].T, d_b @ jp["pred_W"].T


def joint(params: ModelParams, encoder_vector, prediction_vector) -> np.ndarray:
    """Log-probabilities over ``V + 1`` symbols for one (frame, label-context) pair."""
    jp = params.joint
    encoder_vector = np.asarray(encoder_vector, dtype=np.float64)
    prediction_vector = np.asarray(prediction_vector, dtype=np.float64)
    if encoder_vector.shape[-1] != jp["enc_W"].shape[0]:
        raise ValueError("encoder vector has the wrong dimension")
    if prediction_vector.shape[-1] != jp["pred_W"].shape[0]:
        raise ValueError("prediction vector has the wrong dimension")
    hidden = np.tanh(encoder_vector @ jp["enc_W"] + prediction_vector @ jp["pred_W"] + jp["b"])
    return log_softmax(hidden @ jp["out_W"] + jp["out_b"])


# ---------------------------------------------------------------------------
# lattice + loss


def prefixed_labels(params: ModelParams, labels_list):
    """``[start, y1..yU]`` per utterance, padded; lengths are ``U + 1``."""
    start = params.config.start_symbol
    seqs = [np.concatenate([[start], np.asarray(y, dtype=np.int64)]) for y in labels_list]
    return pad_batch(seqs, dtype=np.int64)


def build_lattice(params: ModelParams, features, labels,
                  initial_state: DecoderState | None = None) -> LogitsLattice:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    enc = encode(params, features, initial_state)
    ids, lens = prefixed_labels(params, [labels])
    pred_init = initial_state.prediction if initial_state is not None else None
    pred, _, _ = prediction_forward(params, ids, lens, pred_init)
    log_probs, _ = joint_forward(params, enc[None], pred)
    return LogitsLattice(log_probs[0], labels)


@dataclass
class BatchResult:
    loss: float  # mean negative log-likelihood over the batch
    losses: np.ndarray
    grads: ModelParams
    final_state: DecoderState


def loss_and_grads(params: ModelParams, features_list, labels_list,
                   initial_state: DecoderState | None = None) -> BatchResult:
    """Mean transducer loss over a batch and its gradient for every parameter."""
    x, lengths = pad_batch(features_list)
    enc_init = initial_state.encoder if initial_state is not None else None
    pred_init = initial_state.prediction if initial_state is not None else None
    enc, enc_lens, enc_final, enc_cache = encoder_forward(params, x, lengths, enc_init)
    ids, id_lens = prefixed_labels(params, labels_list)
    pred, pred_final, pred_cache = prediction_forward(params, ids, id_lens, pred_init)
    log_probs, joint_cache = joint_forward(params, enc, pred)

    B = len(features_list)
    losses = np.zeros(B)
    d_logits = np.zeros_like(log_probs)
    for i in range(B):
        T, U1 = int(enc_lens[i]), int(id_lens[i])
        lp = log_probs[i, :T, :U1]
        res = rnnt_loss_and_grad(LogitsLattice(lp, labels_list[i]))
        if not math.isfinite(res.negative_log_likelihood):
            raise NumericalError(f"non-finite loss for batch item {i}")
        losses[i] = res.negative_log_likelihood
        g = res.gradient
        d_logits[i, :T, :U1] = (g - np.exp(lp) * g.sum(axis=-1, keepdims=True)) / B

    grads = params.zeros_like()
    d_enc, d_pred = joint_backward(params, joint_cache, d_logits, grads)
    prediction_backward(params, pred_cache, d_pred, grads)
    encoder_backward(params, enc_cache, d_enc, grads)
    return BatchResult(float(losses.mean()), losses, grads,
                       DecoderState(encoder=enc_final, prediction=pred_final))


# ---------------------------------------------------------------------------
# optimizer


def global_norm(grads: ModelParams, groups=GROUPS) -> float:
    return math.sqrt(sum(float(np.sum(v * v)) for g in groups for v in grads.group(g).values()))


def apply_gradients(params: ModelParams, grads: ModelParams, mask: TrainabilityMask,
                    learning_rate: float, clip_norm: float = 1.0,
                    velocity: ModelParams | None = None, momentum: float = 0.9):
    """Clipped SGD-with-momentum step on the trainable groups.

    Returns ``(new_params, new_velocity)``. Frozen groups (and their velocity)
    are carried over untouched.
    """
    if not mask.any():
        raise ValueError("trainability mask freezes every group")
    active = [g for g in GROUPS if mask.trainable(g)]
    for g in active:
        for k, v in grads.group(g).items():
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite gradient in {g}/{k}")
    norm = global_norm(grads, active)
    scale = 1.0 if norm <= clip_norm else clip_norm / norm
    if velocity is None:
        velocity = params.zeros_like()
    new_params = params.copy()
    new_velocity = velocity.copy()
    for g in active:
        for k, grad in grads.group(g).items():
            v = momentum * velocity.group(g)[k] + scale * grad
            new_velocity.group(g)[k] = v
            new_params.group(g)[k] = params.group(g)[k] - learning_rate * v
    return new_params, new_velocity
