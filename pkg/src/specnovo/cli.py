"""``specnovo`` command line: train, finetune, ttt, predict, evaluate, ingest-mgf.

Settings resolve in increasing priority: built-in defaults, the ``--config``
INI file (section ``[specnovo]`` then the command's own section), environment
variables ``SPECNOVO_<NAME>``, then command-line flags. Every command writes
its resolved settings to ``config.json`` and the tool version to ``VERSION``
inside ``--out``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerics error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .decode import DEFAULT_BEAM, DEFAULT_K, TokenTable, predict_topk
from .errors import IoError, NumericsError, SpecNovoError
from .metrics import evaluate_run, read_prediction_file
from .mgf import read_mgf
from .model import OutputVocab, collate, load_checkpoint, make_example, new_state, preset, save_checkpoint
from .model.train import evaluate_batch, train_step
from .spectra import DEFAULT_MAX_PEAKS, iter_records, record_from_obj, write_records
from .ttt import CandidatePool, TttConfig, config_dict, extend_pool, ttt_run

log = logging.getLogger("specnovo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICS = 0, 2, 3, 4
ENV_PREFIX = "SPECNOVO_"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ options

def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


@dataclass(frozen=True)
class Opt:
    flag: str
    type: object = str
    default: object = None
    help: str = ""
    many: bool = False      # nargs="+"
    switch: bool = False    # store_true
    required: bool = False
    choices: tuple = None

    @property
    def dest(self):
        return self.flag.lstrip("-").replace("-", "_")

    def convert(self, raw):
        if self.switch:
            return _bool(raw)
        if self.many:
            items = raw if isinstance(raw, list) else str(raw).replace(",", " ").split()
            return [self.type(x) for x in items]
        v = self.type(raw)
        if self.choices and v not in self.choices:
            raise ValueError(f"{self.flag} must be one of {list(self.choices)}, got {v!r}")
        return v


COMMON = [
    Opt("--out", required=True, help="output directory"),
    Opt("--seed", int, 0, "random seed"),
]
TRAIN = [
    Opt("--data", required=True, help="training JSONL"),
    Opt("--val", help="validation JSONL; the training data is scored when absent"),
    Opt("--checkpoint", help="start from this checkpoint instead of a fresh model"),
    Opt("--preset", str, "toy", "model size preset", choices=("toy", "paper", "micro")),
    Opt("--epochs", int, 60, "maximum number of epochs"),
    Opt("--max-steps", int, 0, "stop after this many optimizer steps (0: no limit)"),
    Opt("--batch-size", int, 16, "records per step"),
    Opt("--lambda", float, 1.0, "fingerprint loss weight"),
    Opt("--lr", _opt_float, None, "initial learning rate (phase default when unset)"),
    Opt("--gamma", _opt_float, None, "per-epoch decay factor (phase default when unset)"),
    Opt("--patience", int, 10, "early stopping: epochs without validation improvement"),
    Opt("--target-acc", float, 1.01, "stop once validation token accuracy reaches this"),
    Opt("--dropout", _opt_float, None, "override the preset dropout rate"),
    Opt("--fingerprint-width", int, 0, "override the preset fingerprint width (0: preset)"),
    Opt("--max-peaks", int, DEFAULT_MAX_PEAKS, "peaks kept per spectrum"),
]
TTT = [
    Opt("--checkpoint", required=True, help="base checkpoint"),
    Opt("--pool", required=True, help="labeled pool JSONL"),
    Opt("--extend-pool", many=True, default=[], help="extra pool JSONL sources"),
    Opt("--test", required=True, help="unlabeled test JSONL"),
    Opt("--lambda", float, 1.0, "fingerprint loss weight"),
    Opt("--lr", _opt_float, None, "initial learning rate (phase default when unset)"),
    Opt("--gamma", _opt_float, None, "per-update decay factor (phase default when unset)"),
    Opt("--patience", int, 50, "updates without new pool records before stopping"),
    Opt("--max-updates", int, 1000, "hard cap on updates"),
    Opt("--test-points", int, 4, "test points sampled per update"),
    Opt("--neighbors", int, 64, "pool records selected per test point"),
    Opt("--refresh", int, 10, "updates between embedding refreshes"),
    Opt("--kmeans-k", int, 32, "clusters for large pools"),
    Opt("--kmeans-threshold", int, 10_000, "pool size above which k-means narrows the pool"),
    Opt("--true-fingerprints", switch=True, help="compare test logits to true pool fingerprints"),
    Opt("--fingerprint-width", int, 0, "expected checkpoint fingerprint width (0: no check)"),
    Opt("--max-peaks", int, DEFAULT_MAX_PEAKS, "peaks kept per spectrum"),
]
PREDICT = [
    Opt("--checkpoint", required=True, help="model checkpoint"),
    Opt("--data", required=True, help="JSONL with spectrum and formula per record"),
    Opt("--k", int, DEFAULT_K, "candidates kept per record"),
    Opt("--beam", int, DEFAULT_BEAM, "beam width"),
    Opt("--workers", int, 1, "parallel decoding threads"),
    Opt("--max-peaks", int, DEFAULT_MAX_PEAKS, "peaks kept per spectrum"),
]
EVALUATE = [
    Opt("--predictions", required=True, help="predictions JSONL with targets"),
    Opt("--k", int, DEFAULT_K, "top-k cutoff"),
    Opt("--keep-stereo", switch=True, help="compare stereo-aware canonical forms"),
    Opt("--mces-reduction", str, "min", "top-k MCES reduction", choices=("min", "mean")),
]
INGEST = [
    Opt("--mgf", many=True, required=True, help="MGF files"),
]

COMMANDS = {
    "train": (TRAIN, "train a model from scratch or continue from a checkpoint"),
    "finetune": (TRAIN, "train starting from --checkpoint with the fine-tuning schedule"),
    "ttt": (TTT, "adapt a checkpoint to unlabeled test spectra"),
    "predict": (PREDICT, "decode top-k candidates per record"),
    "evaluate": (EVALUATE, "score predictions against their targets"),
    "ingest-mgf": (INGEST, "convert MGF files into the JSONL schema"),
}


def _options(command):
    return COMMON + COMMANDS[command][0]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specnovo", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"specnovo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="INI file with [specnovo] and [%s] sections" % name)
        p.add_argument("-v", "--verbose", action="store_true")
        for o in _options(name):
            kw = {"help": o.help + (f" (default {o.default})" if o.default not in (None, [], "") else ""),
                  "dest": o.dest}
            if o.switch:
                kw["action"] = "store_true"
            else:
                kw["type"] = o.type
                if o.many:
                    kw["nargs"] = "+"
                if o.choices:
                    kw["choices"] = o.choices
            p.add_argument(o.flag, **kw)
    return parser


def resolve(command: str, ns: argparse.Namespace, environ=None) -> dict:
    """Merge defaults, config file, environment and flags (flags win)."""
    environ = os.environ if environ is None else environ
    ini = configparser.ConfigParser()
    config_path = getattr(ns, "config", None)
    if config_path:
        if not ini.read(config_path, encoding="utf-8"):
            raise IoError(f"cannot read config file {config_path}")
    given = vars(ns)
    out = {}
    for o in _options(command):
        value = o.default
        try:
            for section in ("specnovo", command):
                if ini.has_section(section):
                    for key in (o.dest, o.dest.replace("_", "-")):
                        if ini.has_option(section, key):
                            value = o.convert(ini.get(section, key))
            env = environ.get(ENV_PREFIX + o.dest.upper())
            if env is not None:
                value = o.convert(env)
        except ValueError as exc:
            raise UsageError(f"{o.flag}: {exc}") from None
        if o.dest in given:
            value = given[o.dest]
        if o.required and value in (None, []):
            raise UsageError(f"{o.flag} is required (flag, config file or {ENV_PREFIX}{o.dest.upper()})")
        out[o.dest] = value
    return out


# ------------------------------------------------------------------ helpers

def _prepare_out(settings, command, extra=None):
    out = settings["out"]
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from None
    frozen = {"command": command, "version": __version__, "settings": settings}
    frozen.update(extra or {})
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(frozen, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out, "VERSION"), "w", encoding="utf-8") as fh:
        fh.write(f"specnovo {__version__}\n")
    return out


def _load(path) -> list:
    if not os.path.isfile(path):
        raise IoError(f"no such file: {path}")
    return list(iter_records(path))


def _checkpoint(path, fingerprint_width=None):
    if not os.path.isfile(path):
        raise IoError(f"no such checkpoint: {path}")
    return load_checkpoint(path, fingerprint_width)


def _token_accuracy(state, examples, batch_size):
    """Teacher-forced token accuracy over examples, weighted by token count."""
    hit = tot = 0
    cfg = state.config
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i: i + batch_size], cfg.max_len, cfg.fingerprint_width)
        _, acc = evaluate_batch(state, batch)
        n = int(batch.tgt_mask.sum())
        hit += acc * n
        tot += n
    return hit / tot if tot else 0.0


# ------------------------------------------------------------------ commands

def cmd_train(s: dict, command: str = "train") -> dict:
    """Train and write ``model.ckpt`` (best validation accuracy) plus ``train_log.jsonl``."""
    records = _load(s["data"])
    val_records = _load(s["val"]) if s["val"] else records
    if command == "finetune" and not s["checkpoint"]:
        raise UsageError("finetune needs --checkpoint")
    if s["checkpoint"]:
        state = _checkpoint(s["checkpoint"])
        if command == "finetune" and state.phase != "finetune":
            state.phase, start_epoch = "finetune", 0
        else:
            start_epoch = state.epoch + 1 if state.step else 0
    else:
        overrides = {}
        if s["dropout"] is not None:
            overrides["dropout"] = s["dropout"]
        if s["fingerprint_width"]:
            overrides["fingerprint_width"] = s["fingerprint_width"]
        cfg = preset(s["preset"], **overrides)
        vocab = OutputVocab.build(r.smiles for r in records if r.smiles)
        state = new_state(cfg, vocab, seed=s["seed"])
        start_epoch = 0
    out = _prepare_out(s, command, {"model": state.config.to_dict()})
    cfg, vocab = state.config, state.vocab

    def examples(recs):
        return [make_example(r, vocab, cfg.fingerprint_width, s["max_peaks"]) for r in recs if r.smiles]

    train_ex, val_ex = examples(records), examples(val_records)
    if not train_ex:
        raise SpecNovoError("training data has no labeled records")
    ckpt = os.path.join(out, "model.ckpt")
    best_acc, best, stale = -1.0, None, 0
    bs = s["batch_size"]
    with open(os.path.join(out, "train_log.jsonl"), "w", encoding="utf-8") as logf:
        for epoch in range(start_epoch, start_epoch + s["epochs"]):
            state.set_epoch(epoch, s["lr"], s["gamma"])
            order = np.random.default_rng([s["seed"], epoch]).permutation(len(train_ex))
            for i in range(0, len(order), bs):
                batch = collate([train_ex[j] for j in order[i: i + bs]], cfg.max_len, cfg.fingerprint_width)
                state = train_step(state, batch, s["lambda"])
                logf.write(json.dumps({"epoch": epoch, **state.metrics}) + "\n")
                if s["max_steps"] and state.step >= s["max_steps"]:
                    break
            acc = _token_accuracy(state, val_ex, bs)
            improved = acc > best_acc
            if improved:
                best_acc, best, stale = acc, state.copy(), 0
                save_checkpoint(best, ckpt)
            else:
                stale += 1
            logf.write(json.dumps({"epoch": epoch, "step": state.step, "val_token_acc": acc,
                                   "best_val_token_acc": best_acc, "stale_epochs": stale}) + "\n")
            logf.flush()
            log.info("epoch %d step %d val token acc %.4f", epoch, state.step, acc)
            if stale >= s["patience"] or best_acc >= s["target_acc"]:
                break
            if s["max_steps"] and state.step >= s["max_steps"]:
                break
    return {"checkpoint": ckpt, "step": best.step, "best_val_token_acc": best_acc}


def cmd_ttt(s: dict) -> dict:
    state = _checkpoint(s["checkpoint"], s["fingerprint_width"] or None)
    sources = [(s["pool"], _load(s["pool"]))] + [(p, _load(p)) for p in s["extend_pool"]]
    pool_records, manifest = extend_pool(sources)
    pool_records = [r for r in pool_records if r.smiles]
    if not pool_records:
        raise SpecNovoError("pool has no labeled records")
    test_records = _load(s["test"])
    cfg = TttConfig(test_points_per_iter=s["test_points"], neighbors_per_point=s["neighbors"],
                    refresh_interval=s["refresh"], kmeans_k=s["kmeans_k"],
                    kmeans_threshold=s["kmeans_threshold"], patience=s["patience"],
                    max_updates=s["max_updates"], lam=s["lambda"], lr=s["lr"], gamma=s["gamma"],
                    seed=s["seed"], true_fingerprints=s["true_fingerprints"], max_peaks=s["max_peaks"])
    out = _prepare_out(s, "ttt", {"ttt": config_dict(cfg)})
    with open(os.path.join(out, "pool_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    pool = CandidatePool(pool_records, state.vocab, state.config.fingerprint_width, cfg.max_peaks)
    state.phase = "ttt"
    state, trace = ttt_run(state, pool, test_records, cfg, os.path.join(out, "trace.jsonl"))
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(state, ckpt)
    return {"checkpoint": ckpt, "reason": trace.reason, "updates": len(trace.records),
            "cum_selected": trace.cumulative()[-1] if trace.records else 0}


def _predict_lines(path):
    if not os.path.isfile(path):
        raise IoError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        return [(n, line) for n, line in enumerate(fh, 1) if line.strip()]


def _predict_one(state, table, s, lineno, line):
    try:
        obj = json.loads(line)
        if not isinstance(obj, dict) or "formula" not in obj or "spectrum" not in obj:
            raise SpecNovoError("record needs 'spectrum' and 'formula'")
        rec = record_from_obj(obj)
        pred = predict_topk(state, rec, k=s["k"], beam=max(s["beam"], s["k"]),
                            max_peaks=s["max_peaks"], table=table)
    except json.JSONDecodeError as exc:
        return {"line": lineno, "error": "ParseError", "message": f"malformed JSON: {exc.msg}"}
    except SpecNovoError as exc:
        return {"line": lineno, "error": type(exc).__name__, "message": str(exc)}
    obj = {"line": lineno, **pred.to_json_obj()}
    if not pred.raw:
        obj["status"] = "empty_beam"
    return obj


def cmd_predict(s: dict) -> dict:
    if not s["workers"] >= 1:
        raise UsageError("--workers must be >= 1")
    state = _checkpoint(s["checkpoint"])
    lines = _predict_lines(s["data"])
    out = _prepare_out(s, "predict")
    table = TokenTable(state.vocab)
    with ThreadPoolExecutor(max_workers=s["workers"]) as ex:
        results = list(ex.map(lambda nl: _predict_one(state, table, s, *nl), lines))
    path = os.path.join(out, "predictions.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r) + "\n")
    n_err = sum("error" in r for r in results)
    n_empty = sum(r.get("status") == "empty_beam" for r in results)
    return {"predictions": path, "records": len(results), "errors": n_err, "empty_beams": n_empty}


def cmd_evaluate(s: dict) -> dict:
    if not os.path.isfile(s["predictions"]):
        raise IoError(f"no such file: {s['predictions']}")
    preds, n_err = read_prediction_file(s["predictions"], s["k"])
    out = _prepare_out(s, "evaluate")
    report = evaluate_run(preds, s["k"], keep_stereo=s["keep_stereo"], mces_reduction=s["mces_reduction"])
    obj = {**report.to_dict(), "n_error_records": n_err}
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    table = report.to_table() + f"# error records excluded = {n_err}\n"
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return obj


def cmd_ingest_mgf(s: dict) -> dict:
    records = []
    for path in s["mgf"]:
        if not os.path.isfile(path):
            raise IoError(f"no such file: {path}")
        records.extend(read_mgf(path, source=os.path.basename(path)))
    out = _prepare_out(s, "ingest-mgf")
    path = os.path.join(out, "records.jsonl")
    n = write_records(path, records)
    return {"records": path, "n": n}


def run(command: str, settings: dict) -> dict:
    if command in ("train", "finetune"):
        return cmd_train(settings, command)
    return {"ttt": cmd_ttt, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "ingest-mgf": cmd_ingest_mgf}[command](settings)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        settings = resolve(ns.command, ns)
        summary = run(ns.command, settings)
    except UsageError as exc:
        print(f"specnovo {ns.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericsError as exc:
        print(f"specnovo {ns.command}: numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except (SpecNovoError, OSError) as exc:
        print(f"specnovo {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    if ns.command != "evaluate":
        print(json.dumps(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
