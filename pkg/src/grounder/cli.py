"""``grounder`` command line: parse, ground, train, evaluate and self-check.

Every subcommand accepts ``--config FILE`` (JSON). Flags given on the command
line win over config values. Exit status is 0 on success, 1 for usage and
validation problems, 2 for runtime failures.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .embeddings import load_embeddings
from .errors import ConfigurationError, GrounderError, ValidationError
from .evaluation import (ImageAnnotation, align_captions, generate_counterfactual_queries,
                         generate_normal_queries, localization_accuracy, localization_queries,
                         roc_auc)
from .grounding import (DEFAULT_REJECT_THRESHOLD, AttributeModel, ColorModel, EntityModel,
                        Grounder)
from .io import boxes_to_json, read_fmap, write_fmap, write_json, write_pgm
from .parser import DEFAULT_SIM_THRESHOLD, Lexicon, parse_query
from .proposals import ProposalConfig
from .training import TrainConfig, load_manifest, train_attributes, train_color, train_entity

log = logging.getLogger("grounder")

PATH_KEYS = ("embeddings", "lexicon", "manifest", "entity_model", "attribute_model",
             "color_model", "features")
SCALAR_KEYS = ("seed", "threads", "sim_threshold", "reject_threshold")
SECTION_KEYS = ("train", "proposals")

# flag dest -> config field, for hyperparameter overrides
TRAIN_FLAGS = {"lr": "learning_rate", "momentum": "momentum", "batch_size": "batch_size",
               "stage1_epochs": "stage1_epochs", "stage2_epochs": "stage2_epochs",
               "color_epochs": "color_epochs", "attention_l2": "attention_l2",
               "mil_t": "mil_T", "pixel_loss_weight": "pixel_loss_weight"}
PROPOSAL_FLAGS = {"heat_threshold": "heat_threshold", "stride": "stride", "nms_iou": "nms_iou",
                  "kappa": "kappa"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, *paths):
    p.add_argument("--config", help="JSON config; command-line flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker cap (falls back to $GROUNDER_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    for name in paths:
        p.add_argument("--" + name.replace("_", "-"), dest=name)


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--stage1-epochs", type=int)
    g.add_argument("--stage2-epochs", type=int)
    g.add_argument("--color-epochs", type=int)
    g.add_argument("--attention-l2", type=float)
    g.add_argument("--mil-t", type=int)
    g.add_argument("--pixel-loss-weight", type=float)


def _grounding_flags(p):
    g = p.add_argument_group("grounding")
    g.add_argument("--sim-threshold", type=float)
    g.add_argument("--reject-threshold", type=float)
    g.add_argument("--heat-threshold", type=float)
    g.add_argument("--stride", type=int)
    g.add_argument("--nms-iou", type=float)
    g.add_argument("--kappa", type=float)


def build_parser():
    top = _Parser(prog="grounder", description="Textual grounding on precomputed feature maps.")
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("parse", help="split a query into entity / attributes / colors")
    _common(p, "lexicon", "embeddings")
    p.add_argument("--query", required=True)
    p.add_argument("--sim-threshold", type=float)

    p = sub.add_parser("ground", help="ground one query on one feature map")
    _common(p, "features", "lexicon", "embeddings", "entity_model", "attribute_model",
            "color_model")
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pgm", action="store_true", help="also export heatmaps as PGM")
    _grounding_flags(p)

    for name, helptext in (("train-entity", "train the entity attention model"),
                           ("train-attr", "train the attribute dictionary model"),
                           ("train-color", "train the per-pixel color model")):
        p = sub.add_parser(name, help=helptext)
        _common(p, "manifest", "lexicon", "embeddings")
        p.add_argument("--out", required=True, help="model file to write")
        _train_flags(p)

    for name, helptext in (("eval-cf", "counterfactual ROC of region scores"),
                           ("eval-loc", "localization accuracy of full queries")):
        p = sub.add_parser(name, help=helptext)
        _common(p, "manifest", "lexicon", "embeddings", "entity_model", "attribute_model",
                "color_model")
        p.add_argument("--corpus", help="comma-separated words (default: model vocabularies)")
        p.add_argument("--out", help="report JSON to write")
        if name == "eval-cf":
            p.add_argument("--csv", help="ROC curve CSV to write")
        _grounding_flags(p)

    p = sub.add_parser("align", help="assign captions to frames from a score matrix")
    _common(p)
    p.add_argument("--scores", required=True, help="JSON (list of rows) or CSV matrix")
    p.add_argument("--mode", choices=("argmax", "greedy-unique"), default="argmax")

    p = sub.add_parser("selftest", help="run numeric property and gradient checks")
    _common(p)
    return top


# ---------------------------------------------------------------- config

def resolve_config(args):
    """Merge ``--config`` with flags into a plain dict; flags win."""
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        unknown = set(cfg) - set(PATH_KEYS) - set(SCALAR_KEYS) - set(SECTION_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    out = {k: cfg.get(k) for k in PATH_KEYS + SCALAR_KEYS}
    out["train"] = dict(cfg.get("train", {}))
    out["proposals"] = dict(cfg.get("proposals", {}))
    for k in PATH_KEYS + SCALAR_KEYS:
        if getattr(args, k, None) is not None:
            out[k] = getattr(args, k)
    for flag, key in TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            out["train"][key] = getattr(args, flag)
    for flag, key in PROPOSAL_FLAGS.items():
        if getattr(args, flag, None) is not None:
            out["proposals"][key] = getattr(args, flag)
    if out["seed"] is not None:
        out["train"]["seed"] = out["seed"]
    threads = out["threads"] if out["threads"] is not None else os.environ.get("GROUNDER_THREADS")
    if threads is not None:
        try:
            threads = int(threads)
        except ValueError:
            raise ConfigurationError(f"threads must be an integer, got {threads!r}") from None
        if threads < 1:
            raise ConfigurationError("threads must be >= 1")
    out["threads"] = threads
    return out


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigurationError(f"--{k.replace('_', '-')} is required")
        if not Path(cfg[k]).exists():
            raise ConfigurationError(f"{k.replace('_', ' ')} not found: {cfg[k]}")


def _optional(cfg, *keys):
    for k in keys:
        if cfg.get(k) is not None and not Path(cfg[k]).exists():
            raise ConfigurationError(f"{k.replace('_', ' ')} not found: {cfg[k]}")


def _train_config(cfg):
    return TrainConfig.from_dict(cfg["train"])


def _proposal_config(cfg):
    known = {f.name for f in fields(ProposalConfig)}
    unknown = set(cfg["proposals"]) - known
    if unknown:
        raise ConfigurationError(f"unknown proposal keys {sorted(unknown)}")
    d = dict(cfg["proposals"])
    if d.get("scales") is not None:
        d["scales"] = tuple(tuple(s) for s in d["scales"])
    return ProposalConfig(**d)


def _grounder(cfg):
    _require(cfg, "lexicon", "embeddings", "entity_model")
    _optional(cfg, "attribute_model", "color_model")
    table = load_embeddings(cfg["embeddings"])
    lexicon = Lexicon.load(cfg["lexicon"])
    attr = AttributeModel.load(cfg["attribute_model"]) if cfg["attribute_model"] else None
    color = ColorModel.load(cfg["color_model"]) if cfg["color_model"] else None
    sim = cfg["sim_threshold"] if cfg["sim_threshold"] is not None else DEFAULT_SIM_THRESHOLD
    rej = cfg["reject_threshold"]
    rej = DEFAULT_REJECT_THRESHOLD if rej is None else rej
    return Grounder(table, lexicon, EntityModel.load(cfg["entity_model"]), attr, color,
                    _proposal_config(cfg), sim, rej)


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_parse(args, cfg):
    _require(cfg, "lexicon", "embeddings")
    sim = cfg["sim_threshold"] if cfg["sim_threshold"] is not None else DEFAULT_SIM_THRESHOLD
    q = parse_query(args.query, Lexicon.load(cfg["lexicon"]), load_embeddings(cfg["embeddings"]),
                    sim)
    _emit(q.to_dict())


def cmd_ground(args, cfg):
    _require(cfg, "features")
    g = _grounder(cfg)
    res = g.ground(read_fmap(cfg["features"]), args.query)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("me", "ma", "mc", "g"):
        m = getattr(res, name)
        if m is None:
            continue
        write_fmap(out / f"{name}.fmap", m)
        if args.pgm:
            write_pgm(out / f"{name}.pgm", m)
    write_json(out / "boxes.json", boxes_to_json(res.boxes))
    summary = res.summary()
    write_json(out / "result.json", summary)
    _emit({"boxes": summary["boxes"], "region_score": summary["region_score"],
           "rejected": summary["rejected"], "flags": summary["flags"]})


def _manifest_for_training(cfg):
    _require(cfg, "manifest")
    return load_manifest(cfg["manifest"])


def cmd_train_entity(args, cfg):
    _require(cfg, "lexicon", "embeddings")
    records = _manifest_for_training(cfg)
    lexicon = Lexicon.load(cfg["lexicon"])
    table = load_embeddings(cfg["embeddings"])
    model = train_entity(records, tuple(lexicon.entity_classes), table, _train_config(cfg))
    model.save(args.out)
    log.info("wrote %s", args.out)


def cmd_train_attr(args, cfg):
    _require(cfg, "lexicon", "embeddings")
    records = _manifest_for_training(cfg)
    lexicon = Lexicon.load(cfg["lexicon"])
    table = load_embeddings(cfg["embeddings"])
    # Only attributes that actually occur in the manifest become dictionary atoms.
    used = {a for r in records for a in r.attributes}
    names = tuple(a for a in lexicon.attribute_corpus if a in used)
    unknown = used - set(names)
    if unknown:
        raise ConfigurationError(f"manifest attributes not in lexicon: {sorted(unknown)}")
    if not names:
        raise ConfigurationError("manifest carries no attribute labels")
    model = train_attributes(records, names, table, _train_config(cfg))
    model.save(args.out)
    log.info("wrote %s", args.out)


def cmd_train_color(args, cfg):
    _require(cfg, "lexicon")
    records = _manifest_for_training(cfg)
    lexicon = Lexicon.load(cfg["lexicon"])
    model = train_color(records, tuple(lexicon.color_names), _train_config(cfg))
    model.save(args.out)
    log.info("wrote %s", args.out)


def _annotations(cfg):
    _require(cfg, "manifest")
    return [ImageAnnotation(r.features, r.entity, r.attributes, r.colors, r.box)
            for r in load_manifest(cfg["manifest"])]


def _corpus(args, g):
    if args.corpus:
        return [w.strip() for w in args.corpus.split(",") if w.strip()]
    words = []
    if g.attribute is not None:
        words += list(g.attribute.dictionary.names)
    if g.color is not None:
        words += list(g.color.color_names)
    if not words:
        raise ConfigurationError("no corpus: pass --corpus or an attribute/color model")
    return words


def cmd_eval_cf(args, cfg):
    g = _grounder(cfg)
    corpus = _corpus(args, g)
    # an explicit corpus narrows what each image is annotated with
    keep = set(corpus)
    anns = [ImageAnnotation(a.features_path, a.entity, tuple(w for w in a.attributes if w in keep),
                            tuple(w for w in a.colors if w in keep), a.box)
            for a in _annotations(cfg)]
    normal = generate_normal_queries(anns, corpus)
    cf = generate_counterfactual_queries(anns, corpus)
    cache = {}

    def run(case):
        if case.features_path not in cache:
            cache[case.features_path] = read_fmap(case.features_path)
        return g.ground(cache[case.features_path], case.query)

    normal_res = [run(c) for c in normal]
    cf_res = [run(c) for c in cf]
    report = roc_auc([r.raw_score for r in normal_res], [r.raw_score for r in cf_res])
    scored = [c for c in normal if c.box is not None]
    preds = [r.selected for c, r in zip(normal, normal_res) if c.box is not None]
    d = report.to_dict()
    d["accuracy"] = localization_accuracy(scored, preds) if scored else None
    d["n_cases"] = len(normal) + len(cf)
    d["n_counterfactual"] = len(cf)
    d["cf_rejected"] = sum(r.rejected for r in cf_res)
    if args.out:
        write_json(args.out, d)
    if args.csv:
        report.write_csv(args.csv)
    _emit({k: d[k] for k in ("auc", "accuracy", "n_cases", "n_counterfactual", "cf_rejected")})


def cmd_eval_loc(args, cfg):
    g = _grounder(cfg)
    cases = [c for c in localization_queries(_annotations(cfg)) if c.box is not None]
    preds = [g.ground(read_fmap(c.features_path), c.query).selected for c in cases]
    d = {"accuracy": localization_accuracy(cases, preds), "n_cases": len(cases)}
    if args.out:
        write_json(args.out, d)
    _emit(d)


def cmd_align(args, cfg):
    path = Path(args.scores)
    if not path.is_file():
        raise ConfigurationError(f"score matrix not found: {path}")
    if path.suffix.lower() == ".csv":
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        m = np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=np.float64)
    assignment = align_captions(m, args.mode)
    _emit({"mode": args.mode, "assignment": assignment,
           "unassigned": [i for i, a in enumerate(assignment) if a is None]})


def cmd_selftest(args, cfg):
    from .selftest import run_checks
    results = run_checks(seed=cfg["seed"] or 0)
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


COMMANDS = {"parse": cmd_parse, "ground": cmd_ground, "train-entity": cmd_train_entity,
            "train-attr": cmd_train_attr, "train-color": cmd_train_color,
            "eval-cf": cmd_eval_cf, "eval-loc": cmd_eval_loc, "align": cmd_align,
            "selftest": cmd_selftest}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg) or 0
    except (ValidationError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GrounderError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
