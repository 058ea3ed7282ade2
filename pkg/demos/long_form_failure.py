"""Train on short utterances, then watch long recordings lose words.

Run: python demos/long_form_failure.py [steps]
The default of 6000 steps takes about ten minutes on one core.
"""

import sys

from trlab.decoding import BeamConfig
from trlab.experiments import (default_segmentation, preset, profile_spread,
                               run_doi_comparison, run_length_generalization)
from trlab.training import make_data

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 6000
cfg = preset("nonstreaming", steps=steps)
data = make_data(cfg)
print(f"training on {len(data.train)} utterances of at most {cfg.max_train_frames} frames; "
      f"long probes are {min(len(u.features) for u in data.long_eval)}.."
      f"{max(len(u.features) for u in data.long_eval)} frames")

report = run_length_generalization(cfg, data=data, log=print)

# Short-form WER settles while the long-form curve turns around, mostly as deletions.
print("\nstep   short   long   long-deletions")
for short, long in zip(report.result.rows("short"), report.result.rows("long")):
    print(f"{short['step']:5d}  {short['wer']:.3f}  {long['wer']:.3f}  {long['del']:.3f}")
print(f"early checkpoint (best long-form) = step {report.early_step}, "
      f"late = step {report.late_step}")

# Decoding in short windows keeps every window inside the training length range.
rows = run_doi_comparison(report.params("late"), data.long_eval, default_segmentation(cfg),
                          beam_config=BeamConfig(cfg.eval_beam_size))
print("\nmode     wer    del    frames decoded")
for r in rows:
    print(f"{r['mode']:8s} {r['wer']:.3f}  {r['del']:.3f}  {r['decoded_frames']}")

# How much the first decisions' blank probability depends on how long the input is.
for which in ("early", "late"):
    print(f"{which} checkpoint: blank-probability spread across input lengths "
          f"{profile_spread(report.profiles[which]):.4f}")
