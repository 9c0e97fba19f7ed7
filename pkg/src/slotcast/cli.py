"""Command-line entry point: generate, ingest, train, predict, eval.

Every option may also be given in a ``key = value`` config file (``--config``);
explicit flags win over file values. Each run writes the fully resolved
options next to its outputs, and that snapshot can be fed back through
``--config`` to reproduce the run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .evalkit import (EvalReport, ModelPredictor, evaluate_scenario, slot_token_lists,
                      validation_slots, write_box_csv, write_precision_csv)
from .nanoformer import (ModelConfig, SamplerConfig, TrainConfig, init_params,
                         load_checkpoint, sample_slot, save_checkpoint, train)
from .nanoformer.sample import SlotOverflow, write_probability_csv
from .nanoformer.train import write_loss_csv
from .phylog import parse_log, read_corpus, write_corpus
from .slottok import encode_stream, render, render_lines
from .synchk import SyntaxMask
from .trafficgen import (ConfigError, corpus_stats, generate_scenario, read_key_values,
                         scenario_from_mapping)


class CliError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable
    default: object = None
    help: str = ""
    required: bool = False


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none") else int(str(text), 0)


_MODEL_OPTS = [
    Opt("context_len", int, 1024), Opt("embed_dim", int, 8), Opt("n_layers", int, 3),
    Opt("n_heads", int, 8), Opt("feedforward_dim", int, 32), Opt("dropout", float, 0.0),
    Opt("init_seed", int, 0),
]
_TRAIN_OPTS = [
    Opt("steps", int, 4000), Opt("batch_windows", int, 2048), Opt("micro_batch", int, 64),
    Opt("window_len", _opt_int, None), Opt("learning_rate", float, 1e-3),
    Opt("min_lr_ratio", float, 0.1), Opt("warmup_steps", int, 100),
    Opt("beta1", float, 0.9), Opt("beta2", float, 0.99), Opt("eps", float, 1e-8),
    Opt("weight_decay", float, 0.0), Opt("clip_norm", float, 1.0), Opt("seed", int, 0),
    Opt("train_fraction", float, 0.8), Opt("eval_interval", int, 100),
    Opt("eval_windows", int, 64),
]
_SAMPLER_OPTS = [
    Opt("temperature", float, 1.0), Opt("mode", str, "multinomial"),
    Opt("max_tokens_per_slot", int, 256),
]

COMMANDS: dict[str, list[Opt]] = {
    "generate": [
        Opt("ues", int, None, "number of UEs", required=True),
        Opt("traffic", str, None, "comma-separated per-UE direction: dl, ul, bi",
            required=True),
        Opt("slots", int, None, "number of slots to simulate", required=True),
        Opt("seed", int, 0), Opt("bandwidth_prbs", int, 106),
        Opt("prach_period_slots", _opt_int, None), Opt("harq_delay", int, 4),
        Opt("ul_delay", int, 4), Opt("max_dl_per_slot", int, 2), Opt("max_ul_per_slot", int, 2),
        Opt("start_sfn", int, 0),
        Opt("out", str, None, "corpus output path", required=True),
    ],
    "ingest": [
        Opt("log", str, None, "physical-layer log file", required=True),
        Opt("out", str, None, "corpus output path", required=True),
    ],
    "train": [
        Opt("corpus", str, None, "corpus file", required=True),
        Opt("out", str, None, "checkpoint output path", required=True),
        *_MODEL_OPTS, *_TRAIN_OPTS,
    ],
    "predict": [
        Opt("checkpoint", str, None, required=True),
        Opt("corpus", str, None, required=True),
        Opt("slot_index", int, None, "index of the slot to predict (needs 10 before it)",
            required=True),
        Opt("checker", _bool, False), Opt("seed", int, 0), *_SAMPLER_OPTS,
        Opt("probs", str, None, "per-step probability CSV output path"),
    ],
    "eval": [
        Opt("checkpoint", str, None, required=True),
        Opt("corpus", str, None, required=True),
        Opt("samples", int, 500), Opt("checker", str, "both", "on, off or both"),
        Opt("seed", int, 0), Opt("train_fraction", float, 0.8), *_SAMPLER_OPTS,
        Opt("out_dir", str, None, "directory for report files", required=True),
    ],
}

_POSITIONAL = {"ingest": "log"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMANDS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="key = value file; flags override it")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            if _POSITIONAL.get(cmd) == o.name:
                p.add_argument(o.name, nargs="?", default=None, help=o.help)
            else:
                p.add_argument(flag, dest=o.name, default=None, help=o.help)
    return parser


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags, each converted by its option type."""
    opts = {o.name: o for o in COMMANDS[cmd]}
    raw: dict[str, object] = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_vals = read_key_values(fh)
        file_vals.pop("command", None)
        unknown = sorted(set(file_vals) - set(opts))
        if unknown:
            raise CliError(f"{args.config}: unknown keys for {cmd}: {', '.join(unknown)}")
        raw.update(file_vals)
    for name in opts:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    out = {}
    for name, o in opts.items():
        if name in raw:
            try:
                out[name] = o.type(raw[name])
            except ValueError as exc:
                raise CliError(f"option {name}: {exc}") from None
        elif o.required:
            raise CliError(f"missing required option --{name.replace('_', '-')}")
        else:
            out[name] = o.default
    return out


def write_snapshot(cmd: str, values: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# resolved options for `slotcast {cmd}`\n")
        fh.write(f"command = {cmd}\n")
        for key in sorted(values):
            v = values[key]
            fh.write(f"{key} = {'none' if v is None else v}\n")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands

def cmd_generate(v: dict) -> None:
    mapping = {k: v[k] for k in ("seed", "bandwidth_prbs", "prach_period_slots", "harq_delay",
                                 "ul_delay", "max_dl_per_slot", "max_ul_per_slot", "start_sfn")}
    mapping.update(n_ues=v["ues"], traffic=v["traffic"], duration_slots=v["slots"])
    if mapping["prach_period_slots"] is None:
        mapping["prach_period_slots"] = "none"
    cfg = scenario_from_mapping(mapping)
    records = generate_scenario(cfg)
    n_tokens, _ = corpus_stats(records)
    meta = {k: ("none" if x is None else x) for k, x in cfg.to_dict().items()}
    with open(v["out"], "w", encoding="utf-8") as fh:
        write_corpus(records, fh, meta)
    write_snapshot("generate", v, v["out"] + ".config")
    _info(f"{len(records)} slots, {n_tokens} tokens -> {v['out']}")


def cmd_ingest(v: dict) -> None:
    with open(v["log"], encoding="utf-8") as fh:
        records = parse_log(fh)
    if not records:
        _warn(f"{v['log']}: no PHY slot records found; writing an empty corpus")
    with open(v["out"], "w", encoding="utf-8") as fh:
        write_corpus(records, fh, {"source": os.path.basename(v["log"])})
    with open(v["out"] + ".tokens", "w", encoding="utf-8") as fh:
        fh.write(render_lines(encode_stream(records)))
    write_snapshot("ingest", v, v["out"] + ".config")
    _info(f"{len(records)} slots, {len(encode_stream(records))} tokens -> {v['out']}")


def _load_records(path: str):
    with open(path, encoding="utf-8") as fh:
        records, _ = read_corpus(fh)
    return records


def cmd_train(v: dict) -> None:
    tokens = encode_stream(_load_records(v["corpus"]))
    mcfg = ModelConfig(context_len=v["context_len"], embed_dim=v["embed_dim"],
                       n_layers=v["n_layers"], n_heads=v["n_heads"],
                       feedforward_dim=v["feedforward_dim"], dropout=v["dropout"])
    tc = TrainConfig(**{o.name: v[o.name] for o in _TRAIN_OPTS})
    params = init_params(mcfg, seed=v["init_seed"])

    def report(row):
        if row["val_loss"] is not None:
            _info(f"step {row['step']:5d}  train {row['train_loss']:.4f}  "
                  f"val {row['val_loss']:.4f}  lr {row['lr']:.2e}")

    result = train(params, tokens, tc, reporter=report)
    save_checkpoint(result.params, v["out"])
    with open(v["out"] + ".loss.csv", "w", encoding="utf-8") as fh:
        write_loss_csv(result.history, fh)
    write_snapshot("train", v, v["out"] + ".config")
    _info(f"{result.params.count()} parameters; best val loss "
          f"{result.best_val_loss} at step {result.best_step} -> {v['out']}")


def _sampler(v: dict, seed: int) -> SamplerConfig:
    sc = SamplerConfig(temperature=v["temperature"], mode=v["mode"], seed=seed,
                       max_tokens_per_slot=v["max_tokens_per_slot"])
    sc.validate()
    return sc


def cmd_predict(v: dict) -> None:
    params = load_checkpoint(v["checkpoint"])
    slots = slot_token_lists(_load_records(v["corpus"]))
    i = v["slot_index"]
    if not 10 <= i < len(slots):
        raise CliError(f"slot_index must lie in [10, {len(slots)}) for this corpus")
    context = [t for s in slots[i - 10:i] for t in s]
    sc = _sampler(v, v["seed"])
    mask = SyntaxMask.following(context) if v["checker"] else None
    try:
        res = sample_slot(params, context, sc, mask)
        tokens, probs = res.tokens, res.probs
    except SlotOverflow as exc:
        raise CliError(str(exc)) from None
    print(render(tokens))
    if v["probs"]:
        with open(v["probs"], "w", encoding="utf-8") as fh:
            write_probability_csv(probs, fh)
    snap = v["probs"] + ".config" if v["probs"] else None
    if snap:
        write_snapshot("predict", v, snap)


def cmd_eval(v: dict) -> None:
    if v["checker"] not in ("on", "off", "both"):
        raise CliError("--checker must be on, off or both")
    params = load_checkpoint(v["checkpoint"])
    slots = validation_slots(slot_token_lists(_load_records(v["corpus"])), v["train_fraction"])
    sc = _sampler(v, v["seed"])
    modes = {"on": [True], "off": [False], "both": [True, False]}[v["checker"]]
    os.makedirs(v["out_dir"], exist_ok=True)
    predictor = ModelPredictor(params)
    reports: list[EvalReport] = []
    for use in modes:
        rep = evaluate_scenario(predictor, slots, v["samples"], sc, use, v["seed"])
        reports.append(rep)
        tag = "checker_on" if use else "checker_off"
        with open(os.path.join(v["out_dir"], f"report_{tag}.json"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        with open(os.path.join(v["out_dir"], f"precision_{tag}.csv"), "w",
                  encoding="utf-8") as fh:
            write_precision_csv(rep.precision, fh)
        _info(f"checker {'on ' if use else 'off'}: median L {rep.levenshtein.median:g}, "
              f"median RL {rep.relative.median:.4f}, exact {rep.exact_fraction:.3f}")
    with open(os.path.join(v["out_dir"], "box.csv"), "w", encoding="utf-8") as fh:
        write_box_csv(reports, fh)
    write_snapshot("eval", v, os.path.join(v["out_dir"], "eval.config"))
    summary = {("checker_on" if r.use_checker else "checker_off"): {
        "median_levenshtein": r.levenshtein.median, "median_rl": r.relative.median}
        for r in reports}
    print(json.dumps(summary, sort_keys=True))


HANDLERS = {"generate": cmd_generate, "ingest": cmd_ingest, "train": cmd_train,
            "predict": cmd_predict, "eval": cmd_eval}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        values = resolve(args.command, args)
        HANDLERS[args.command](values)
    except (CliError, ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
