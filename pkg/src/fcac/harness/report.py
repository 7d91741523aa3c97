"""
Report emission: JSON (full structure), CSV (one row per session and
available partition), a markdown accuracy grid, a separate timing file, and
embedding-format dumps of prototypes and evaluation embeddings.

``report.json`` holds no wall-clock values so that identical runs produce
identical bytes; update timings go to ``timing.json``.
"""
from __future__ import annotations

import csv
import io
import json
import platform
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..embeddings import Embedding, save_text
from ..errors import FcacError
from .metrics import PARTITIONS, aa, pd
from .protocol import Embedder, ProtocolResult, evaluation_set

REPORT_FORMAT = "fcac-report"
REPORT_VERSION = 1


def _summary(series: List[Optional[float]], partition: str) -> Dict[str, Optional[float]]:
    vals = [a for a in series if a is not None]
    try:
        drop = pd(series, partition)
    except FcacError:
        drop = None
    return {"aa": aa(vals) if vals else None, "pd": drop}


def report_dict(result: ProtocolResult) -> dict:
    """Plain-JSON view of a protocol result (accuracies as fractions in [0, 1])."""
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config": result.config,
        "seeds": {k: result.seeds[k] for k in sorted(result.seeds)},
        "split": {"pseudo_base": list(result.split.pseudo_base), "pseudo_novel": list(result.split.pseudo_novel)},
        "eval_mode": result.eval_mode,
        "alt_eval_mode": result.alt_eval_mode,
        "sessions": [s.to_dict() for s in result.sessions],
        "summary": {p: _summary(result.accuracy_series(p), p) for p in PARTITIONS},
        "alt_summary": None,
        "confusion": {
            "classes": list(result.confusion_classes),
            "matrix": result.confusion.tolist() if result.confusion is not None else None,
        },
        "storage_elements": result.ss_elements,
        "store": {"num_classes": len(result.store), "dim": result.store.dim, "digest": result.store.digest()},
        "pan_epoch_losses": list(result.pan_epoch_losses),
        "completed": result.error is None,
        "error": result.error,
    }
    if result.alt_eval_mode is not None:
        doc["alt_summary"] = {p: _summary(result.accuracy_series(p, alt=True), p) for p in PARTITIONS}
    return doc


def dumps_report(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def timing_dict(result: ProtocolResult) -> dict:
    return {
        "att_seconds": result.att_seconds,
        "update_seconds": {str(s.index): s.update_seconds for s in result.sessions if s.update_seconds is not None},
        "clock": "time.perf_counter around the store update only",
        "machine": f"{platform.machine()} {platform.processor() or 'unknown cpu'} python {platform.python_version()}",
    }


def csv_rows(doc: dict) -> List[dict]:
    rows = []
    for s in doc["sessions"]:
        for p in PARTITIONS:
            acc = s["accuracy"][p]
            if acc is None:
                continue
            rows.append({"session": s["index"], "partition": p, "accuracy": acc,
                         "samples": s["counts"][p], "store_size": s["store_size"]})
    return rows


def render_csv(doc: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["session", "partition", "accuracy", "samples", "store_size"], lineterminator="\n")
    writer.writeheader()
    for row in csv_rows(doc):
        writer.writerow({**row, "accuracy": repr(row["accuracy"])})
    return buf.getvalue()


def _pct(x: Optional[float]) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def markdown_table(series: Dict[str, List[Optional[float]]], indices: List[int]) -> str:
    """Accuracy grid in percent: one row per partition, one column per session, then AA and PD."""
    head = "| Partition | " + " | ".join(str(i) for i in indices) + " | AA | PD |"
    rule = "|" + "---|" * (len(indices) + 3)
    lines = [head, rule]
    for p in PARTITIONS:
        accs = series[p]
        summary = _summary(accs, p)
        lines.append(f"| {p.capitalize()} | " + " | ".join(_pct(a) for a in accs)
                     + f" | {_pct(summary['aa'])} | {_pct(summary['pd'])} |")
    return "\n".join(lines) + "\n"


def render_markdown(doc: dict) -> str:
    indices = [s["index"] for s in doc["sessions"]]
    out = [f"### Accuracy (%), eval mode `{doc['eval_mode']}`, training mode `{doc['config']['mode']}`\n",
           markdown_table({p: [s["accuracy"][p] for s in doc["sessions"]] for p in PARTITIONS}, indices)]
    if doc.get("alt_eval_mode"):
        out.append(f"\n### Accuracy (%), eval mode `{doc['alt_eval_mode']}`\n")
        out.append(markdown_table({p: [s["alt_accuracy"][p] for s in doc["sessions"]] for p in PARTITIONS}, indices))
    out.append(f"\nStorage: {doc['storage_elements']} prototype elements "
               f"({doc['store']['num_classes']} classes x {doc['store']['dim']}).\n")
    if not doc["completed"]:
        out.append(f"\nStopped early: {doc['error']}\n")
    return "".join(out)


def write_report(result: ProtocolResult, out_dir, embedder: Optional[Embedder] = None,
                 per_class: int = 20) -> Dict[str, Path]:
    """Write report.json, report.csv, report.md and timing.json; with an embedder also the dumps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report_dict(result)
    paths = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "markdown": out / "report.md",
        "timing": out / "timing.json",
    }
    paths["json"].write_text(dumps_report(doc), encoding="utf-8")
    paths["csv"].write_text(render_csv(doc), encoding="utf-8")
    paths["markdown"].write_text(render_markdown(doc), encoding="utf-8")
    paths["timing"].write_text(json.dumps(timing_dict(result), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["prototypes"] = out / "prototypes.tsv"
    save_text(paths["prototypes"], [Embedding(v, f"proto_{c}", c)
                                    for c, v in zip(result.store.class_ids, result.store.prototypes)])
    if embedder is not None:
        paths["embeddings"] = out / "eval_embeddings.tsv"
        dump_eval_embeddings(embedder, result.store.session_index, paths["embeddings"], per_class)
    return paths


def dump_eval_embeddings(embedder: Embedder, upto: int, path, per_class: int = 20) -> int:
    """First ``per_class`` evaluation embeddings of every class seen so far, in manifest order."""
    ids, labels = evaluation_set(embedder.manifest, upto)
    keep, seen = [], {}
    for i, c in zip(ids, labels):
        seen[c] = seen.get(c, 0) + 1
        if seen[c] <= per_class:
            keep.append((i, int(c)))
    vecs = embedder.vectors([i for i, _ in keep]) if keep else np.zeros((0, 0))
    save_text(path, [Embedding(v, i, c) for (i, c), v in zip(keep, vecs)])
    return len(keep)


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
