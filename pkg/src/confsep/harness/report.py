"""Report emission: JSON lines, aligned text tables and per-threshold CSV.

Tables are rendered from the JSON-ready records only, so re-rendering from a
saved ``results.jsonl`` gives byte-identical text.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable

from .experiments import COLS, ROWS, McnTaxonomy, RejectionReport, SeparationRecord

JSONL_NAME = "results.jsonl"
TABLES_NAME = "tables.txt"
CURVES_NAME = "rejection_curves.csv"
CURVE_COLUMNS = ("eta", "p0", "awpr_orig", "awpr_rej", "recall", "model")


class ReportError(OSError):
    pass


def to_record(obj) -> dict:
    """JSON-ready dict carrying a ``type`` key."""
    if isinstance(obj, dict):
        if "type" not in obj:
            raise ValueError("record dict needs a 'type' key")
        return obj
    if isinstance(obj, RejectionReport):
        return {
            "type": "rejection", "model": obj.model, "eta": obj.eta, "p0": obj.p0,
            "awpr_original": obj.awpr_original, "awpr_with_rejection": obj.awpr_with_rejection,
            "recall_natural": obj.recall_natural, "n_natural": obj.n_natural,
            "n_adversarial": obj.n_adversarial, "rejected_adv": obj.rejected_adv,
            "rejected_nat": obj.rejected_nat,
        }
    if isinstance(obj, McnTaxonomy):
        return {
            "type": "mcn", "model": obj.model, "eta": obj.eta, "xi": obj.xi,
            "n_natural": obj.n_natural, "n_classes": obj.n_classes,
            "counts": {r: dict(obj.counts[r]) for r in ROWS},
            "totals": obj.totals, "gamma_correct": dict(obj.gamma_correct),
        }
    if isinstance(obj, SeparationRecord):
        return {"type": "separation", "model": obj.model, "p": obj.p, "delta": obj.delta,
                **obj.estimate.as_dict()}
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def load_jsonl(path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror or exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: {exc.msg}") from None
        if not isinstance(rec, dict) or "type" not in rec:
            raise ValueError(f"{path}:{lineno}: record without a 'type' key")
        out.append(rec)
    return out


def _fmt(v, digits=4) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _align(header: list, rows: list) -> str:
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))).rstrip()
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def separation_table(records: list) -> str:
    header = ["model", "p", "delta", "count", "t", "mu_hat", "lower", "upper", "epsilon", "alpha"]
    rows = [[r["model"], _fmt(r["p"], 3), _fmt(r["delta"], 3), r["successes"], r["t"], _fmt(r["mu_hat"]),
             _fmt(r["lower"]), _fmt(r["upper"]), _fmt(r["epsilon"], 3), _fmt(r["alpha"])]
            for r in records]
    return "Bad-event frequency (confident-attack witnesses)\n" + _align(header, rows)


def rejection_table(records: list) -> str:
    header = ["model", "eta", "p0", "|N|", "|A|", "AWPR", "AWPR w/ rej", "recall"]
    rows = [[r["model"], _fmt(r["eta"], 3), _fmt(r["p0"], 3), r["n_natural"], r["n_adversarial"],
             _fmt(r["awpr_original"]), _fmt(r["awpr_with_rejection"]), _fmt(r["recall_natural"])]
            for r in records]
    return "Confidence rejection\n" + _align(header, rows)


def mcn_table(rec: dict) -> str:
    header = ["", "label change", "confidence reduction"]
    rows = [[r.replace("_", " ")] + [rec["counts"][r][c] for c in COLS] for r in ROWS]
    rows.append(["total"] + [rec["totals"][c] for c in COLS])
    rows.append(["gamma correct"] + [rec["gamma_correct"][c] for c in COLS])
    title = f"MCN top-2 taxonomy: model={rec['model']} eta={_fmt(rec['eta'], 3)} xi={_fmt(rec['xi'], 3)}"
    return title + "\n" + _align(header, rows)


def render_tables(records: list) -> str:
    records = [to_record(r) for r in records]
    parts = [
        separation_table([r for r in records if r["type"] == "separation"]),
        rejection_table([r for r in records if r["type"] == "rejection"]),
    ]
    parts += [mcn_table(r) for r in records if r["type"] == "mcn"]
    return "\n\n".join(parts) + "\n"


def render_curves(records: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in (to_record(r) for r in records):
        if r["type"] == "rejection":
            w.writerow([repr(r["eta"]), repr(r["p0"]), repr(r["awpr_original"]),
                        repr(r["awpr_with_rejection"]), repr(r["recall_natural"]), r["model"]])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"{path}: {exc.strerror or exc}") from exc


def emit_report(results, out_dir) -> dict:
    """Write the three report files into ``out_dir``; returns their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"{out}: {exc.strerror or exc}") from exc
    records = [to_record(r) for r in results]
    paths = {"jsonl": out / JSONL_NAME, "tables": out / TABLES_NAME, "curves": out / CURVES_NAME}
    _write(paths["jsonl"], dumps_jsonl(records))
    _write(paths["tables"], render_tables(records))
    _write(paths["curves"], render_curves(records))
    return paths
