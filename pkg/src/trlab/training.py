"""Seeded training loop, evaluation schedule and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import TaskConfig, WerBreakdown, generate_corpus, long_form_corpus, wer
from .decoding import BeamConfig, beam_search
from .model import (GROUPS, ModelConfig, ModelParams, NumericalError, TrainabilityMask,
                    apply_gradients, init_params, loss_and_grads)
from .regularization import (RspBuffer, RspConfig, RssConfig, RunningMoments,
                             SpecAugmentConfig, VariationalNoiseConfig, rsp_store_and_fetch,
                             rss_sample_initial_state, spec_augment, state_from_lists,
                             state_to_lists, with_variational_noise)

MAGIC = "TRLAB1"


class ConfigError(ValueError):
    pass


class TrainingAborted(NumericalError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"numerical failure at step {step}: {reason}")
        self.step = step


@dataclass
class MaskChange:
    """From ``step`` on (steps count from 1), train only the flagged groups."""
    step: int
    encoder: bool = True
    prediction: bool = True
    joint: bool = True

    @property
    def mask(self) -> TrainabilityMask:
        return TrainabilityMask(self.encoder, self.prediction, self.joint)


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train_utterances: int = 400
    train_tokens: tuple = (3, 12)
    max_train_frames: int = 120  # training length cap
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 0.05
    lr_decay_every: int | None = None  # step decay: multiply by lr_decay_factor this often
    lr_decay_factor: float = 0.5
    clip_norm: float = 1.0
    mask_schedule: tuple = ()
    variational_noise: VariationalNoiseConfig = field(default_factory=VariationalNoiseConfig)
    spec_augment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    rss: RssConfig = field(default_factory=RssConfig)
    rsp: RspConfig = field(default_factory=RspConfig)
    eval_every: int = 250
    eval_short_utterances: int = 30
    eval_long_utterances: int = 10
    long_pieces: tuple = (5, 10)  # long-form probes join this many short utterances
    eval_beam_size: int = 4
    data_seed: int = 1
    train_seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1 or self.train_utterances < self.batch_size:
            raise ConfigError("need batch_size >= 1 and at least one batch of training data")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.eval_short_utterances < 1 or self.eval_long_utterances < 1:
            raise ConfigError("eval sets must be nonempty")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.rsp.enabled and self.model.encoder_bidirectional:
            raise ConfigError("random state passing needs a unidirectional encoder")
        if self.model.input_dim != self.task.feature_dim or \
                self.model.vocab_size != self.task.vocab_size:
            raise ConfigError("model and task disagree on feature_dim/vocab_size")
        self.train_tokens = tuple(self.train_tokens)
        self.long_pieces = tuple(self.long_pieces)
        self.mask_schedule = tuple(sorted(self.mask_schedule, key=lambda m: m.step))

    def learning_rate_at(self, step: int) -> float:
        if not self.lr_decay_every:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** ((step - 1) // self.lr_decay_every)

    def mask_at(self, step: int) -> TrainabilityMask:
        mask = TrainabilityMask()
        for change in self.mask_schedule:
            if step >= change.step:
                mask = change.mask
        return mask

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build a config from (possibly partial) nested JSON data."""
        nested = {"model": ModelConfig, "task": TaskConfig,
                  "variational_noise": VariationalNoiseConfig, "spec_augment": SpecAugmentConfig,
                  "rss": RssConfig, "rsp": RspConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {}
        try:
            for k, v in data.items():
                if k in nested:
                    kwargs[k] = _build(nested[k], v)
                elif k == "mask_schedule":
                    kwargs[k] = tuple(_build(MaskChange, m) for m in v)
                else:
                    kwargs[k] = v
            return cls(**kwargs)
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err


def _build(cls, data):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**data)


# ---------------------------------------------------------------------------
# data


@dataclass
class DataSplits:
    train: list
    short_eval: list
    long_eval: list


def make_data(config: ExperimentConfig) -> DataSplits:
    """Training corpus and the two eval sets, all pure functions of ``data_seed``."""
    task, cap, tokens = config.task, config.max_train_frames, config.train_tokens
    seed = config.data_seed
    return DataSplits(
        train=generate_corpus(task, config.train_utterances, tokens, seed, cap, "train"),
        short_eval=generate_corpus(task, config.eval_short_utterances, tokens, seed + 7919, cap,
                                   "short"),
        long_eval=long_form_corpus(task, config.eval_long_utterances, config.long_pieces, tokens,
                                   seed + 104729, cap))


def evaluate(params: ModelParams, utterances, beam: BeamConfig) -> WerBreakdown:
    total = WerBreakdown()
    for u in utterances:
        best, _, _ = beam_search(params, u.features, beam)
        total = total + wer(u.labels, best.labels)
    return total


# ---------------------------------------------------------------------------
# training state and checkpoints


@dataclass
class TrainState:
    params: ModelParams
    velocity: ModelParams
    step: int
    rng: np.random.Generator
    moments: RunningMoments
    rsp_buffer: RspBuffer


def clone_state(state: TrainState) -> TrainState:
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng.bit_generator.state
    moments = RunningMoments.from_dict(state.moments.to_dict(), state.moments.momentum)
    buf = RspBuffer()
    if state.rsp_buffer.states is not None:
        buf.states = state_from_lists(state_to_lists(state.rsp_buffer.states))
    return TrainState(state.params.copy(), state.velocity.copy(), state.step, rng, moments, buf)


def initial_state(config: ExperimentConfig, params: ModelParams | None = None) -> TrainState:
    params = params.copy() if params is not None else init_params(config.model)
    return TrainState(params, params.zeros_like(), 0, np.random.default_rng(config.train_seed),
                      RunningMoments(config.rss.momentum), RspBuffer())


def _params_to_json(p: ModelParams) -> dict:
    return {g: {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in p.group(g).items()} for g in GROUPS}


def _params_from_json(config: ModelConfig, data: dict) -> ModelParams:
    groups = {g: {k: np.asarray(e["data"], dtype=np.float64).reshape(e["shape"])
                  for k, e in data[g].items()} for g in GROUPS}
    return ModelParams(config, groups["encoder"], groups["prediction"], groups["joint"])


def save_checkpoint(path, config: ExperimentConfig, state: TrainState) -> None:
    doc = {
        "magic": MAGIC,
        "config": config.to_dict(),
        "step": state.step,
        "params": _params_to_json(state.params),
        "velocity": _params_to_json(state.velocity),
        "rss_moments": state.moments.to_dict(),
        "rng_state": state.rng.bit_generator.state,
        "rsp_buffer": None if state.rsp_buffer.states is None
        else state_to_lists(state.rsp_buffer.states),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns ``(config, TrainState)``; the state resumes the run bit-identically."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("magic") != MAGIC:
        raise ConfigError(f"{path}: not a {MAGIC} checkpoint")
    config = ExperimentConfig.from_dict(doc["config"])
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    buf = RspBuffer()
    if doc["rsp_buffer"] is not None:
        buf.states = state_from_lists(doc["rsp_buffer"])
    state = TrainState(_params_from_json(config.model, doc["params"]),
                       _params_from_json(config.model, doc["velocity"]), doc["step"], rng,
                       RunningMoments.from_dict(doc["rss_moments"], config.rss.momentum), buf)
    return config, state


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    state: TrainState
    curve: list  # dicts: step, split, wer, del, ins, sub, n_ref
    snapshots: dict  # step -> TrainState at each evaluation
    losses: list

    @property
    def params(self) -> ModelParams:
        return self.state.params

    def rows(self, split: str) -> list:
        return [r for r in self.curve if r["split"] == split]


def _curve_row(step, split, b: WerBreakdown) -> dict:
    return {"step": step, "split": split, "wer": b.wer, "del": b.rate(b.deletions),
            "ins": b.rate(b.insertions), "sub": b.rate(b.substitutions),
            "n_ref": b.reference_length}


def train_step(config: ExperimentConfig, state: TrainState, data: DataSplits) -> float:
    """One optimizer step in place; returns the batch loss."""
    step = state.step + 1
    rng = state.rng
    idx = rng.choice(len(data.train), size=config.batch_size, replace=False)
    feats = [data.train[i].features for i in idx]
    labels = [data.train[i].labels for i in idx]
    sa = config.spec_augment
    if sa.n_time_masks or sa.n_freq_masks:
        feats = [spec_augment(f, sa, rng) for f in feats]

    init = None
    if config.rsp.enabled:
        init = rsp_store_and_fetch(state.rsp_buffer, None, rng, config.rsp, config.model,
                                   config.batch_size)
    elif config.rss.enabled:
        init = rss_sample_initial_state(config.model, state.moments, rng, config.batch_size,
                                        config.rss)

    noisy = with_variational_noise(state.params, step, config.variational_noise, rng)
    try:
        res = loss_and_grads(noisy, feats, labels, init)
        if not math.isfinite(res.loss):
            raise NumericalError("non-finite loss")
        params, velocity = apply_gradients(state.params, res.grads, config.mask_at(step),
                                           config.learning_rate_at(step), config.clip_norm,
                                           state.velocity)
    except NumericalError as err:
        raise TrainingAborted(step, str(err)) from err

    if config.rss.enabled:
        state.moments.update(res.final_state)
    if config.rsp.enabled:
        state.rsp_buffer.states = res.final_state
    state.params, state.velocity, state.step = params, velocity, step
    return res.loss


def train(config: ExperimentConfig, state: TrainState | None = None,
          data: DataSplits | None = None, until: int | None = None, log=None) -> TrainResult:
    """Run the loop from ``state`` (fresh by default) up to step ``until`` (default ``steps``).

    Evaluations happen at every multiple of ``eval_every`` and at the last step;
    each one adds short/long rows to the curve and keeps a copy of the full
    training state, so later runs can branch from any evaluated step.
    """
    data = data or make_data(config)
    state = state or initial_state(config)
    until = config.steps if until is None else until
    beam = BeamConfig(beam_size=config.eval_beam_size)
    curve, snapshots, losses = [], {}, []
    while state.step < until:
        losses.append(train_step(config, state, data))
        step = state.step
        if step % config.eval_every == 0 or step == until:
            short = evaluate(state.params, data.short_eval, beam)
            long = evaluate(state.params, data.long_eval, beam)
            curve += [_curve_row(step, "short", short), _curve_row(step, "long", long)]
            snapshots[step] = clone_state(state)
            if log:
                log(f"step {step} loss {np.mean(losses[-config.eval_every:]):.3f} "
                    f"short {short} long {long}")
    return TrainResult(state, curve, snapshots, losses)
