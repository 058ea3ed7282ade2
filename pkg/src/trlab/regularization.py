"""Training-time regularizers: weight noise, spectrogram masking, and two
ways of replacing the all-zero initial recurrent state."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GROUPS, DecoderState, ModelConfig, ModelParams


@dataclass
class VariationalNoiseConfig:
    stddev: float = 0.0
    start_step: int = 0
    groups: tuple = ("encoder",)

    def __post_init__(self):
        if self.stddev < 0:
            raise ValueError("stddev must be >= 0")
        self.groups = tuple(self.groups)
        unknown = set(self.groups) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")


@dataclass
class SpecAugmentConfig:
    n_time_masks: int = 0
    max_time_fraction: float | None = None
    max_time_frames: int | None = None
    n_freq_masks: int = 0
    max_freq_bins: int = 0
    mask_value: float = 0.0

    def __post_init__(self):
        if min(self.n_time_masks, self.n_freq_masks, self.max_freq_bins) < 0:
            raise ValueError("mask counts and widths must be >= 0")
        if self.max_time_fraction is not None and not 0 <= self.max_time_fraction <= 1:
            raise ValueError("max_time_fraction must lie in [0, 1]")

    def max_time_width(self, T: int) -> int:
        width = T if self.max_time_frames is None else self.max_time_frames
        if self.max_time_fraction is not None:
            width = min(width, math.ceil(self.max_time_fraction * T))
        return min(width, T)


@dataclass
class RssConfig:
    enabled: bool = False
    momentum: float = 0.99
    scale: float = 1.0
    groups: tuple = ("encoder", "prediction")

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.groups = tuple(self.groups)


@dataclass
class RspConfig:
    enabled: bool = False
    apply_probability: float = 0.5
    include_prediction: bool = False

    def __post_init__(self):
        if not 0 <= self.apply_probability <= 1:
            raise ValueError("apply_probability must lie in [0, 1]")


# ---------------------------------------------------------------------------
# variational weight noise


def with_variational_noise(params: ModelParams, step: int, config: VariationalNoiseConfig,
                           rng) -> ModelParams:
    """Noised copy of ``params``; ``params`` itself is never modified.

    Before ``start_step`` or with zero ``stddev`` the input object is returned.
    Noise is drawn fresh on every call, one draw per weight.
    """
    if step < config.start_step or config.stddev == 0 or not config.groups:
        return params
    noised = params.copy()
    for g in config.groups:
        for k, v in noised.group(g).items():
            v += rng.normal(0.0, config.stddev, size=v.shape)
    return noised


# ---------------------------------------------------------------------------
# SpecAugment (time and frequency masks only)


def spec_augment(features, config: SpecAugmentConfig, rng) -> np.ndarray:
    out = np.array(features, dtype=np.float64, copy=True)
    T, d = out.shape
    max_w = config.max_time_width(T)
    for _ in range(config.n_time_masks):
        w = int(rng.integers(0, max_w + 1))
        t0 = int(rng.integers(0, T - w + 1))
        out[t0:t0 + w, :] = config.mask_value
    max_f = min(config.max_freq_bins, d)
    for _ in range(config.n_freq_masks):
        f = int(rng.integers(0, max_f + 1))
        f0 = int(rng.integers(0, d - f + 1))
        out[:, f0:f0 + f] = config.mask_value
    return out


# ---------------------------------------------------------------------------
# recurrent-state helpers


def state_shapes(config: ModelConfig):
    enc = [[config.encoder_units] * config.directions for _ in range(config.encoder_layers)]
    return enc, config.prediction_units


def zero_state(config: ModelConfig, batch_size: int) -> DecoderState:
    enc, P = state_shapes(config)
    return DecoderState(
        encoder=[[(np.zeros((batch_size, H)), np.zeros((batch_size, H))) for H in layer]
                 for layer in enc],
        prediction=(np.zeros((batch_size, P)), np.zeros((batch_size, P))))


def _map_state(fn, *states: DecoderState) -> DecoderState:
    first = states[0]
    enc = None
    if first.encoder is not None:
        enc = [[tuple(fn(*parts) for parts in zip(*(s.encoder[l][d] for s in states)))
                for d in range(len(first.encoder[l]))] for l in range(len(first.encoder))]
    pred = None
    if first.prediction is not None:
        pred = tuple(fn(*parts) for parts in zip(*(s.prediction for s in states)))
    return DecoderState(enc, pred)


def select_examples(state: DecoderState, index) -> DecoderState:
    return _map_state(lambda a: a[index], state)


class RunningMoments:
    """Exponential moving mean/variance of final recurrent states, per unit."""

    def __init__(self, momentum: float = 0.99):
        self.momentum = momentum
        self.mean: DecoderState | None = None
        self.var: DecoderState | None = None

    @property
    def ready(self) -> bool:
        return self.mean is not None

    def update(self, final_state: DecoderState) -> None:
        batch_mean = _map_state(lambda a: a.mean(axis=0), final_state)
        batch_var = _map_state(lambda a: a.var(axis=0), final_state)
        if self.mean is None:
            self.mean, self.var = batch_mean, batch_var
            return
        m = self.momentum
        self.mean = _map_state(lambda r, b: m * r + (1 - m) * b, self.mean, batch_mean)
        self.var = _map_state(lambda r, b: m * r + (1 - m) * b, self.var, batch_var)

    def to_dict(self):
        if self.mean is None:
            return None
        return {"mean": state_to_lists(self.mean), "var": state_to_lists(self.var)}

    @classmethod
    def from_dict(cls, data, momentum: float = 0.99) -> "RunningMoments":
        rm = cls(momentum)
        if data is not None:
            rm.mean = state_from_lists(data["mean"])
            rm.var = state_from_lists(data["var"])
        return rm


def state_to_lists(state: DecoderState):
    return {
        "encoder": None if state.encoder is None else
        [[[a.tolist() for a in hc] for hc in layer] for layer in state.encoder],
        "prediction": None if state.prediction is None else [a.tolist() for a in state.prediction],
    }


def state_from_lists(data) -> DecoderState:
    enc = None if data["encoder"] is None else \
        [[tuple(np.asarray(a, dtype=np.float64) for a in hc) for hc in layer]
         for layer in data["encoder"]]
    pred = None if data["prediction"] is None else \
        tuple(np.asarray(a, dtype=np.float64) for a in data["prediction"])
    return DecoderState(enc, pred)


def rss_sample_initial_state(model_config: ModelConfig, running_moments: RunningMoments | None,
                             rng, batch_size: int = 1,
                             config: RssConfig | None = None) -> DecoderState:
    """Initial states drawn from Normal(running mean, scale * running std).

    Without moments the draw is zero-mean with standard deviation ``scale``.
    Groups not listed in ``config.groups`` (and everything when disabled)
    start from zeros.
    """
    config = config or RssConfig(enabled=True)
    state = zero_state(model_config, batch_size)
    if not config.enabled:
        return state
    have = running_moments is not None and running_moments.ready

    def draw(zero, mean, var):
        if mean is None:
            return rng.normal(0.0, config.scale, size=zero.shape)
        return mean + config.scale * np.sqrt(var) * rng.standard_normal(zero.shape)

    mean = running_moments.mean if have else zero_state(model_config, 1)
    var = running_moments.var if have else None

    enc = state.encoder
    if "encoder" in config.groups:
        enc = [[tuple(draw(z, mean.encoder[l][d][i] if have else None,
                           var.encoder[l][d][i] if have else None)
                      for i, z in enumerate(hc))
                for d, hc in enumerate(layer)] for l, layer in enumerate(state.encoder)]
    pred = state.prediction
    if "prediction" in config.groups:
        pred = tuple(draw(z, mean.prediction[i] if have else None,
                          var.prediction[i] if have else None)
                     for i, z in enumerate(pred))
    return DecoderState(enc, pred)


class RspBuffer:
    """Final states of the previous mini-batch (one entry per example)."""

    def __init__(self):
        self.states: DecoderState | None = None

    def __len__(self):
        if self.states is None:
            return 0
        if self.states.encoder is not None:
            return len(self.states.encoder[0][0][0])
        return len(self.states.prediction[0])


def rsp_store_and_fetch(buffer: RspBuffer, final_states_of_batch: DecoderState | None, rng,
                        config: RspConfig, model_config: ModelConfig,
                        next_batch_size: int) -> DecoderState:
    """Store this batch's final states and draw initial states for the next batch.

    Each next-batch example, with probability ``apply_probability``, starts from
    a uniformly chosen stored state (encoder, plus prediction when
    ``include_prediction``); otherwise from zeros.
    """
    if model_config.encoder_bidirectional:
        raise ValueError("random state passing needs a unidirectional encoder")
    if final_states_of_batch is not None:
        buffer.states = final_states_of_batch
    init = zero_state(model_config, next_batch_size)
    if not config.enabled or buffer.states is None:
        return init
    n_stored = len(buffer)
    use = rng.random(next_batch_size) < config.apply_probability
    pick = rng.integers(0, n_stored, size=next_batch_size)
    stored = select_examples(buffer.states, pick)

    def blend(z, s):
        return np.where(use[:, None], s, z)

    enc = [[tuple(blend(z, s) for z, s in zip(zl, sl)) for zl, sl in zip(zlay, slay)]
           for zlay, slay in zip(init.encoder, stored.encoder)]
    pred = init.prediction
    if config.include_prediction:
        pred = tuple(blend(z, s) for z, s in zip(init.prediction, stored.prediction))
    return DecoderState(enc, pred)
