"""The canonical experiments: length generalization, overlapping inference, freezing.

Presets are small enough that a full run takes minutes on one CPU core. The
"early" checkpoint of a run is the evaluated step with the lowest long-form
WER; the "late" checkpoint is the last evaluated step.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import TaskConfig, WerBreakdown, wer
from .decoding import BeamConfig, BlankProfile, beam_search, blank_probability_profile
from .model import ModelConfig, ModelParams
from .overlap import (MergeConfig, SegmentationConfig, decoded_frame_count, fixed_overlap_config,
                      overlapping_decode)
from .regularization import RspConfig, RssConfig, SpecAugmentConfig, VariationalNoiseConfig
from .training import (DataSplits, ExperimentConfig, MaskChange, TrainResult, clone_state,
                       make_data, train)

PRESETS = ("nonstreaming", "streaming")


def preset(name: str, regularized: bool = False, **overrides) -> ExperimentConfig:
    """Experiment config for one of :data:`PRESETS`.

    ``regularized`` switches on the track's regularizer mix: weight noise,
    SpecAugment and random state sampling for ``nonstreaming``; weight noise,
    SpecAugment and random state passing for ``streaming``.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    streaming = name == "streaming"
    # a shared per-utterance rate plus repeated labels: splitting a run of
    # repeats needs an utterance-level duration estimate
    task = TaskConfig(vocab_size=16, feature_dim=8, frames_per_token=(3, 9), noise_std=0.3,
                      utterance_rate=True, repeat_prob=0.3)
    model = ModelConfig(input_dim=8, vocab_size=16, encoder_layers=2, encoder_units=64,
                        encoder_bidirectional=not streaming, time_subsample_factor=2,
                        prediction_units=64, joint_units=64, seed=0)
    cfg = dict(model=model, task=task, train_utterances=400, train_tokens=(3, 12),
               max_train_frames=120, steps=6000, batch_size=8, learning_rate=0.1,
               lr_decay_every=2000, lr_decay_factor=0.5,
               eval_every=500, eval_short_utterances=200, eval_long_utterances=10,
               long_pieces=(5, 10), eval_beam_size=4)
    if streaming:
        # the causal model memorizes 400 utterances and its in-domain WER
        # drifts up; with more data and a faster decay it keeps improving
        cfg.update(train_utterances=2000, lr_decay_every=1000)
    if regularized:
        steps = overrides.get("steps", cfg["steps"])
        cfg["variational_noise"] = VariationalNoiseConfig(0.02, start_step=steps // 10,
                                                          groups=("encoder",))
        cfg["spec_augment"] = SpecAugmentConfig(n_time_masks=2, max_time_fraction=0.04,
                                                n_freq_masks=1, max_freq_bins=2)
        if streaming:
            cfg["rsp"] = RspConfig(enabled=True, apply_probability=0.5)
        else:
            cfg["rss"] = RssConfig(enabled=True)
    cfg.update(overrides)
    return ExperimentConfig(**cfg)


def default_segmentation(config: ExperimentConfig, overlap_fraction: float = 1 / 8):
    """Windows as long as the training cap, overlapping by ``overlap_fraction``."""
    W = config.max_train_frames
    return SegmentationConfig(W, max(1, int(W * overlap_fraction)),
                              config.model.time_subsample_factor)


# ---------------------------------------------------------------------------
# length generalization


@dataclass
class LengthGenReport:
    result: TrainResult
    early_step: int
    late_step: int
    profiles: dict = field(default_factory=dict)  # "early"/"late" -> BlankProfile

    @property
    def curve(self) -> list:
        return self.result.curve

    def at(self, step: int, split: str = "long") -> dict:
        for row in self.result.curve:
            if row["step"] == step and row["split"] == split:
                return row
        raise KeyError((step, split))

    def params(self, which: str) -> ModelParams:
        step = self.early_step if which == "early" else self.late_step
        return self.result.snapshots[step].params


def early_and_late(result: TrainResult):
    long_rows = result.rows("long")
    early = min(long_rows, key=lambda r: (r["wer"], r["step"]))["step"]
    return early, long_rows[-1]["step"]


def profile_lengths(features, count: int = 6):
    T = len(features)
    lo = min(T, 16)
    return sorted({int(x) for x in np.linspace(lo, T, count)})


def run_length_generalization(config: ExperimentConfig, data: DataSplits | None = None,
                              profile_K: int = 5, log=None) -> LengthGenReport:
    """Train once, then locate the early/late checkpoints and profile their blank behaviour."""
    data = data or make_data(config)
    result = train(config, data=data, log=log)
    early, late = early_and_late(result)
    report = LengthGenReport(result, early, late)
    probe = data.long_eval[0].features
    lengths = profile_lengths(probe)
    for which in ("early", "late"):
        report.profiles[which] = blank_probability_profile(report.params(which), probe, lengths,
                                                           profile_K)
    return report


def profile_spread(profile: BlankProfile) -> float:
    """Mean over steps of the variance of blank probability across lengths."""
    arr = profile.as_array()
    spreads = [np.var(arr[arr[:, 1] == k, 2]) for k in np.unique(arr[:, 1])]
    return float(np.mean(spreads))


def short_monotone(rows, band: float = 0.02) -> bool:
    """True when no evaluation is worse than an earlier one by more than ``band``."""
    best = np.inf
    for r in rows:
        if r["wer"] > best + band:
            return False
        best = min(best, r["wer"])
    return True


# ---------------------------------------------------------------------------
# overlapping inference


def run_doi_comparison(params: ModelParams, utterances, seg_config: SegmentationConfig,
                       merge_config: MergeConfig | None = None,
                       beam_config: BeamConfig | None = None) -> list:
    """Plain, half-overlap and small-overlap decoding of the same utterances.

    Returns one dict per mode with pooled ``wer/del/ins/sub`` rates and the
    total number of input frames pushed through the model.
    """
    beam_config = beam_config or BeamConfig()
    half = fixed_overlap_config(seg_config.window_frames, seg_config.subsample_factor)
    totals = {m: WerBreakdown() for m in ("plain", "fixed50", "doi")}
    frames = dict.fromkeys(totals, 0)
    for u in utterances:
        T = len(u.features)
        best, _, _ = beam_search(params, u.features, beam_config)
        totals["plain"] = totals["plain"] + wer(u.labels, best.labels)
        frames["plain"] += T
        for mode, cfg in (("fixed50", half), ("doi", seg_config)):
            res = overlapping_decode(params, u.features, cfg, merge_config, beam_config)
            totals[mode] = totals[mode] + wer(u.labels, res.hypothesis.labels)
            frames[mode] += decoded_frame_count(T, cfg)
    return [{"mode": m, "wer": b.wer, "del": b.rate(b.deletions), "ins": b.rate(b.insertions),
             "sub": b.rate(b.substitutions), "n_ref": b.reference_length,
             "decoded_frames": frames[m]} for m, b in totals.items()]


# ---------------------------------------------------------------------------
# freezing


@dataclass
class FreezeReport:
    from_step: int
    frozen: TrainResult
    full_long_wer: float

    @property
    def frozen_long_wer(self) -> float:
        return self.frozen.rows("long")[-1]["wer"]


def run_freeze_experiment(config: ExperimentConfig, baseline: TrainResult, from_step: int,
                          data: DataSplits | None = None, frozen=("encoder",),
                          log=None) -> FreezeReport:
    """Continue ``baseline`` from ``from_step`` with ``frozen`` groups held fixed.

    Continuing with every group trainable reproduces ``baseline`` itself (same
    state, same random stream), so its last long-form WER is the comparison.
    """
    if from_step not in baseline.snapshots:
        raise ValueError(f"step {from_step} was not evaluated in the baseline run")
    data = data or make_data(config)
    flags = {g: g not in frozen for g in ("encoder", "prediction", "joint")}
    cfg = replace(config, mask_schedule=(MaskChange(from_step + 1, **flags),))
    state = clone_state(baseline.snapshots[from_step])
    cont = train(cfg, state=state, data=data, log=log)
    return FreezeReport(from_step, cont, baseline.rows("long")[-1]["wer"])


def with_steps(config: ExperimentConfig, steps: int) -> ExperimentConfig:
    return replace(copy.deepcopy(config), steps=steps)
