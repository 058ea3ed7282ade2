"""Command-line entry point: ``trlab <subcommand> [flags]``.

Every ExperimentConfig field is a flag: top-level fields as ``--steps 500``,
nested ones as ``--model.encoder_units 32``. Values are read as JSON when they
parse, otherwise as strings. ``--config file.json`` loads a full or partial
config first; explicit flags override it.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields, is_dataclass
from pathlib import Path

from .corpus import (WerBreakdown, error_curve, read_corpus, read_results, wer, write_corpus,
                     write_metrics, write_results)
from .decoding import BeamConfig, beam_search, blank_probability_profile, dominance_diagnostics
from .experiments import profile_lengths, run_doi_comparison, run_length_generalization
from .model import NumericalError
from .overlap import MergeConfig, SegmentationConfig, overlapping_decode
from .training import (ConfigError, ExperimentConfig, load_checkpoint, make_data,
                       save_checkpoint, train)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _config_flags(parser):
    group = parser.add_argument_group("experiment config")
    group.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    for f in fields(ExperimentConfig):
        default = f.default_factory() if callable(f.default_factory) else f.default
        if is_dataclass(default):
            for sub in fields(default):
                group.add_argument(f"--{f.name}.{sub.name}", dest=f"cfg:{f.name}.{sub.name}",
                                   metavar="V", default=argparse.SUPPRESS)
        else:
            group.add_argument(f"--{f.name}", dest=f"cfg:{f.name}", metavar="V",
                               default=argparse.SUPPRESS)


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def config_from_args(args) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, text in vars(args).items():
        if not key.startswith("cfg:"):
            continue
        path = key[4:].split(".")
        if len(path) == 2:
            data.setdefault(path[0], {})[path[1]] = _value(text)
        else:
            data[path[0]] = _value(text)
    return ExperimentConfig.from_dict(data)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _curve_rows(curve):
    return [[r["step"], r["split"], f"{r['wer']:.6f}", f"{r['del']:.6f}", f"{r['ins']:.6f}",
             f"{r['sub']:.6f}", r["n_ref"]] for r in curve]


CURVE_HEADER = ["step", "split", "wer", "del", "ins", "sub", "n_ref"]


def _load_params(path):
    try:
        return load_checkpoint(path)[1].params
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise ConfigError(f"cannot load checkpoint {path}: {err}") from err


def _load_corpus(path):
    try:
        return read_corpus(path)
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise ConfigError(f"cannot read corpus {path}: {err}") from err


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args):
    cfg = config_from_args(args)
    data = make_data(cfg)
    write_corpus(args.out, {"train": data.train, "short": data.short_eval,
                            "long": data.long_eval}[args.split])


def cmd_train(args):
    cfg = config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    res = train(cfg, log=None if args.quiet else print)
    for step, state in res.snapshots.items():
        save_checkpoint(out / f"checkpoint_{step:06d}.json", cfg, state)
    save_checkpoint(out / "checkpoint.json", cfg, res.state)
    _write_rows(out / "curve.csv", CURVE_HEADER, _curve_rows(res.curve))


def cmd_decode(args):
    params = _load_params(args.checkpoint)
    beam = BeamConfig(args.beam_size, args.max_emissions_per_frame)
    utts = _load_corpus(args.corpus)
    write_results(args.out, [(u.id, beam_search(params, u.features, beam)[0]) for u in utts])


def _seg_config(args, params):
    return SegmentationConfig(args.window, args.overlap, params.config.time_subsample_factor)


def cmd_doi_decode(args):
    params = _load_params(args.checkpoint)
    beam = BeamConfig(args.beam_size, args.max_emissions_per_frame)
    seg = _seg_config(args, params)
    merge = MergeConfig(args.tolerance)
    utts = _load_corpus(args.corpus)
    write_results(args.out, [(u.id, overlapping_decode(params, u.features, seg, merge,
                                                       beam).hypothesis) for u in utts])


def cmd_eval_wer(args):
    refs = {u.id: u.labels for u in _load_corpus(args.corpus)}
    try:
        hyps = read_results(args.results)
    except (OSError, json.JSONDecodeError, KeyError) as err:
        raise ConfigError(f"cannot read results {args.results}: {err}") from err
    missing = set(refs) - set(hyps)
    if missing:
        raise ConfigError(f"{len(missing)} utterances have no hypothesis")
    results = [(uid, wer(ref, hyps[uid]["hyp"])) for uid, ref in refs.items()]
    total = WerBreakdown()
    for _, b in results:
        total = total + b
    rows = error_curve(results) + error_curve([("all", total)])
    write_metrics(args.out, rows)
    print(f"WER {total}")


def _pick(args):
    utts = _load_corpus(args.corpus)
    if not 0 <= args.index < len(utts):
        raise ConfigError(f"--index {args.index} outside corpus of {len(utts)}")
    return utts[args.index]


def cmd_blank_profile(args):
    params = _load_params(args.checkpoint)
    utt = _pick(args)
    lengths = args.lengths or profile_lengths(utt.features)
    blank_probability_profile(params, utt.features, lengths, args.K).to_csv(args.out)


def cmd_beam_trace(args):
    params = _load_params(args.checkpoint)
    utt = _pick(args)
    _, _, trace = beam_search(params, utt.features, BeamConfig(args.beam_size), record_trace=True)
    trace.to_csv(args.out)
    print(json.dumps(dominance_diagnostics(trace)))


def cmd_length_gen(args):
    cfg = config_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_length_generalization(cfg, log=None if args.quiet else print)
    _write_rows(out / "curve.csv", CURVE_HEADER, _curve_rows(report.curve))
    for which, prof in report.profiles.items():
        prof.to_csv(out / f"blank_profile_{which}.csv")
    summary = {"early_step": report.early_step, "late_step": report.late_step,
               "early": report.at(report.early_step), "late": report.at(report.late_step)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))


def cmd_doi_compare(args):
    params = _load_params(args.checkpoint)
    utts = _load_corpus(args.corpus)
    rows = run_doi_comparison(params, utts, _seg_config(args, params), MergeConfig(args.tolerance),
                              BeamConfig(args.beam_size, args.max_emissions_per_frame))
    header = ["mode", "wer", "del", "ins", "sub", "n_ref", "decoded_frames"]
    _write_rows(args.out, header, [[r[k] if not isinstance(r[k], float) else f"{r[k]:.6f}"
                                    for k in header] for r in rows])


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def beam_flags(p):
        p.add_argument("--beam-size", type=int, default=4)
        p.add_argument("--max-emissions-per-frame", type=int, default=8)

    def window_flags(p):
        p.add_argument("--window", type=int, required=True, help="window length in input frames")
        p.add_argument("--overlap", type=int, required=True, help="overlap in input frames")
        p.add_argument("--tolerance", type=int, default=None,
                       help="match tolerance in input frames (default 25 encoder frames)")

    p = sub.add_parser("gen-corpus", help="write a corpus split as JSONL")
    _config_flags(p)
    p.add_argument("--split", choices=("train", "short", "long"), default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train and write checkpoints plus curve.csv")
    _config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="beam-search decode a corpus to results JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    beam_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("doi-decode", help="overlapping-window decode to results JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    window_flags(p)
    beam_flags(p)
    p.set_defaults(func=cmd_doi_decode)

    p = sub.add_parser("eval-wer", help="score results JSONL against a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_wer)

    p = sub.add_parser("blank-profile", help="blank probability of the first K decisions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--lengths", type=int, nargs="*")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blank_profile)

    p = sub.add_parser("beam-trace", help="per-frame beam contents and dominance report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--beam-size", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_beam_trace)

    p = sub.add_parser("length-gen", help="train and report the length-generalization curves")
    _config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_length_gen)

    p = sub.add_parser("doi-compare", help="plain vs half-overlap vs small-overlap decoding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    window_flags(p)
    beam_flags(p)
    p.set_defaults(func=cmd_doi_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
