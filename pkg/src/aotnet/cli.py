"""Command-line entry point: synth, train, infer, eval, baseline, inspect.

Exit codes: 0 success, 1 usage error, 2 data error. Every output file
starts with a ``_meta`` record echoing the flags that produced it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, desk_model_config, desk_train_config, load_config
from .corpus import DatasetFormatError, Item, load_dataset, save_dataset
from .synth import SynthSpec, split_items, synthesize_corpus

log = logging.getLogger("aotnet")

SPLITS = ("train", "valid", "test")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump(record) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(_dump(record) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such file") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return records


def _split_meta(records: list[dict]) -> tuple[dict, list[dict]]:
    if records and "_meta" in records[0]:
        return records[0]["_meta"], records[1:]
    return {}, records


# file locations stay out of the metadata so reruns elsewhere are byte-identical
_PATH_FLAGS = {"handler", "out", "data", "gold", "pred", "ckpt", "config"}


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _PATH_FLAGS}


def _parse_ablations(text: Optional[str]) -> tuple[str, ...]:
    if not text:
        return ()
    flags = tuple(f.strip() for f in text.split(",") if f.strip())
    unknown = [f for f in flags if f not in ABLATIONS]
    if unknown:
        raise UsageError(f"--ablate: unknown flag(s) {unknown}; choose from {list(ABLATIONS)}")
    return flags


def _load_items(path, split: str = "test") -> list[Item]:
    """A dataset file, or a directory holding ``<split>.jsonl``."""
    path = Path(path)
    if path.is_dir():
        path = path / f"{split}.jsonl"
    if not path.exists():
        raise DataError(f"{path}: no such file")
    return load_dataset(path)


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec(n_items=args.n_items, noise_fraction=args.noise, seed=args.seed)
    items = synthesize_corpus(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLITS, split_items(items)):
        save_dataset(part, out / f"{name}.jsonl")
    _write_jsonl(out / "meta.jsonl", [{"_meta": {"command": "synth", "flags": _flags(args)}}])
    return 0


def _configs(args):
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = desk_model_config(), desk_train_config()
    ablations = tuple(train_cfg.ablations) + _parse_ablations(args.ablate)
    model_cfg = dataclasses.replace(model_cfg, cluster_seed=args.seed)
    train_cfg = dataclasses.replace(train_cfg, seed=args.seed, ablations=ablations)
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    from .training import train

    model_cfg, train_cfg = _configs(args)
    train_items = _load_items(args.data, "train")
    valid_items = _load_items(args.data, "valid")
    if not train_items or not valid_items:
        raise DataError(f"{args.data}: train and valid splits must be non-empty")
    result = train(train_items, valid_items, model_cfg, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out / "model.ckpt")
    meta = {"command": "train", "flags": _flags(args), "config": result.checkpoint.config}
    _write_jsonl(out / "history.jsonl", [{"_meta": meta}] + result.history)
    return 0


def _round(values, digits: int = 6) -> list[float]:
    return [round(float(v), digits) for v in values]


def cmd_infer(args) -> int:
    from .training import infer, model_from_checkpoint

    ckpt = _load_ckpt(args.ckpt)
    model, vocab, train_cfg = model_from_checkpoint(ckpt)
    items = _load_items(args.data, "test")
    records = [{"_meta": {"command": "infer", "flags": _flags(args),
                          "ablations": list(train_cfg.ablations), "seed": train_cfg.seed}}]
    for item in items:
        pred = infer(item, model, vocab)
        record = {"item_id": item.item_id, "tags": pred.tags, "n_tokens": pred.n_generated}
        if args.dump_attention:
            record["attention"] = [_round(a) for a in pred.attention]
            record["tag_index"] = [int(j) for j in pred.tag_index]
            record["p_gen"] = _round(pred.p_gen)
            record["foc_mass"] = _round(float((a * f).sum()) for a, f in zip(pred.attention, pred.focus))
        records.append(record)
    _write_jsonl(Path(args.out), records)
    return 0


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such checkpoint") from exc


def cmd_eval(args) -> int:
    from .metrics import HashEmbedder, evaluate, model_embedder

    meta, preds = _split_meta(_read_jsonl(Path(args.pred)))
    gold_items = _load_items(args.gold or args.data, "test")
    gold = {item.item_id: item.tag_strings() for item in gold_items}
    pred_ids = [p.get("item_id") for p in preds]
    if any(not isinstance(p.get("tags"), list) for p in preds):
        raise DataError(f"{args.pred}: every prediction needs a 'tags' list")
    if len(preds) != len(gold_items) or set(pred_ids) != set(gold):
        raise DataError(f"{args.pred}: {len(preds)} predictions do not match {len(gold)} gold items")
    order = [item.item_id for item in gold_items]
    by_id = {p["item_id"]: p["tags"] for p in preds}
    if args.ckpt:
        from .training import model_from_checkpoint

        model, vocab, _ = model_from_checkpoint(_load_ckpt(args.ckpt))
        embed = model_embedder(model, vocab)
    else:
        embed = HashEmbedder(seed=args.seed)
    report = evaluate([by_id[i] for i in order], [gold[i] for i in order], embed, order)
    head = {"_meta": {"command": "eval", "flags": _flags(args), "prediction_meta": meta,
                      "ablations": meta.get("ablations", [])}}
    head.update({k: round(v, 10) if isinstance(v, float) else v for k, v in report.summary().items()})
    rows = [{k: round(v, 10) if isinstance(v, float) else v for k, v in row.items()} for row in report.per_item]
    _write_jsonl(Path(args.out), [head] + rows)
    return 0


def cmd_baseline(args) -> int:
    from .baselines import CorpusStats, textrank_tags, tfidf_tags

    items = _load_items(args.data, "test")
    records = [{"_meta": {"command": "baseline", "flags": _flags(args), "ablations": []}}]
    stats = CorpusStats.from_items(items) if args.method == "tfidf" else None
    for item in items:
        if args.method == "tfidf":
            tags = tfidf_tags(item, stats, args.top_n)
        else:
            tags = textrank_tags(item, args.top_n)
        records.append({"item_id": item.item_id, "tags": tags, "n_tokens": None})
    _write_jsonl(Path(args.out), records)
    return 0


def cmd_inspect(args) -> int:
    import torch

    from .metrics import cluster_tag_similarity_report
    from .model import encode_item
    from .training import model_from_checkpoint

    model, vocab, train_cfg = model_from_checkpoint(_load_ckpt(args.ckpt))
    items = _load_items(args.data, "test")
    records: list[dict] = [{"_meta": {"command": "inspect", "flags": _flags(args),
                                      "ablations": list(train_cfg.ablations)}}]
    if args.clusters:
        with torch.no_grad():
            for item in items:
                _, scores, _, memory = model.build_memory(encode_item(item, vocab, model.config.max_tags))
                for c in memory.clusters:
                    records.append({"item_id": item.item_id, "rank": c.rank, "size": c.size,
                                    "members": [int(m) for m in c.members],
                                    "distances": _round(c.distances),
                                    "center": _round(c.center)})
    if args.salience:
        with torch.no_grad():
            for item in items:
                _, scores = model.salience_scores(encode_item(item, vocab, model.config.max_tags))
                records.append({"item_id": item.item_id, "salience": _round(scores),
                                "labels": [r.salience_label for r in item.reviews]})
    table = cluster_tag_similarity_report(items, model, vocab)
    records.append({"similarity": [[None if np.isnan(v) else round(float(v), 6) for v in row] for row in table]})
    _write_jsonl(Path(args.out), records)
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aotnet", description="Abstractive opinion tagging pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic train/valid/test corpus")
    p.add_argument("--n-items", type=int, default=100)
    p.add_argument("--noise", type=float, default=SynthSpec.noise_fraction)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True, help="directory with train.jsonl and valid.jsonl")
    p.add_argument("--config", help="flat JSON config; desk-scale defaults otherwise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablate", default="", help="comma-separated subset of " + ",".join(ABLATIONS))
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="decode ranked tags for a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset file, or directory (uses test.jsonl)")
    p.add_argument("--dump-attention", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against gold tags")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", help="gold dataset file or directory")
    p.add_argument("--data", help="alias for --gold")
    p.add_argument("--ckpt", help="use this model's word table for FRM")
    p.add_argument("--seed", type=int, default=0, help="seed of the fallback FRM embedder")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("baseline", help="extractive baseline tags")
    p.add_argument("--method", choices=("tfidf", "textrank"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--top-n", type=int, default=None, help="defaults to each item's gold tag count")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("inspect", help="cluster membership and tag/cluster similarity")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clusters", action="store_true")
    p.add_argument("--salience", action="store_true", help="per-review salience scores")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_inspect)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and not (args.gold or args.data):
            raise UsageError("aotnet eval: the following arguments are required: --gold")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, DatasetFormatError, CheckpointError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
