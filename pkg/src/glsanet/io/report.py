"""Line-delimited JSON metric records and console rendering."""

from __future__ import annotations

import json
import os

RECORD_KEYS = ("model", "per_class_top1", "top1", "mul_add", "ntp_bytes", "tp_bytes", "seed", "config_hash")


def metric_record(report, model: str, seed: int, config_hash: str) -> dict:
    return {
        "model": model,
        "per_class_top1": list(report.per_class_top1),
        "top1": report.top1,
        "mul_add": int(report.mul_add),
        "ntp_bytes": int(report.ntp_bytes),
        "tp_bytes": int(report.tp_bytes),
        "seed": int(seed),
        "config_hash": config_hash,
    }


def dumps_record(record: dict) -> str:
    return json.dumps({k: record[k] for k in RECORD_KEYS}, ensure_ascii=False) + "\n"


def report_metrics(report, path, model: str, seed: int, config_hash: str, append: bool = True) -> dict:
    rec = metric_record(report, model, seed, config_hash)
    d = os.path.dirname(os.path.abspath(os.fspath(path)))
    os.makedirs(d, exist_ok=True)
    with open(path, "a" if append else "w", encoding="utf-8") as f:
        f.write(dumps_record(rec))
    return rec


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def format_table(records: list[dict]) -> str:
    """Table-1 style console view; MUL-ADD shown in G, parameter bytes in MB."""
    if not records:
        return ""
    k = len(records[0]["per_class_top1"])
    head = ["Model"] + [f"C{i + 1}" for i in range(k)] + ["Top-1", "MUL-ADD(G)", "NTPs(MB)", "TPs(MB)"]
    rows = [head]
    for r in records:
        cells = [r["model"]] + ["-" if v is None else f"{v:.2f}" for v in r["per_class_top1"]]
        cells += [f"{r['top1']:.2f}", f"{r['mul_add'] / 1e9:.4f}", f"{r['ntp_bytes'] / 2**20:.3f}",
                  f"{r['tp_bytes'] / 2**20:.3f}"]
        rows.append(cells)
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows)
