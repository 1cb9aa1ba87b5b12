"""Result tables: CSV and JSON output plus a short text summary."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

COLUMNS = ("N_o", "N_c", "N_k", "N_p", "k_kc", "k_pk", "k_kp", "k_op", "k_new", "k_orig",
           "T_new_p", "T_orig_p", "T_hbs_p", "T_new_s", "T_orig_s", "T_hbs_s", "r_p", "r_s",
           "error", "hbs_error", "oracle_error", "oracle_error_orig", "tag", "n_panels", "factor",
           "omega", "eps", "fallback", "breakdown_new", "breakdown_orig", "invariants_ok",
           "checks_failed")
FORMATS = ("csv", "json")


def _clean(value):
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def emit_table(rows, path, fmt: str = "csv") -> Path:
    """Write ``rows`` (list of dicts) with the fixed column order; missing cells are blank."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clean = [{c: _clean(r.get(c)) for c in COLUMNS} for r in rows]
    if fmt == "json":
        path.write_text(json.dumps(clean, indent=2))
        return path
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for r in clean:
            writer.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return path


def read_table(path) -> list:
    """Load a table written by :func:`emit_table`; CSV numbers are parsed back."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    rows = []
    with path.open() as fh:
        for rec in csv.DictReader(fh):
            rows.append({k: _parse(v) for k, v in rec.items()})
    return rows


def _parse(text: str):
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def summarize(rows) -> str:
    """One line per row with sizes, ranks, speedups and errors."""
    def fmt(v, spec):
        return "-" if v is None else format(v, spec)

    lines = [f"{'N_o':>7} {'N_c':>5} {'N_p':>5} {'k_new':>6} {'k_orig':>6} "
             f"{'r_p':>7} {'r_s':>7} {'error':>9} ok"]
    for r in rows:
        lines.append(f"{r['N_o']:>7} {r['N_c']:>5} {r['N_p']:>5} "
                     f"{fmt(r.get('k_new'), 'd'):>6} {fmt(r.get('k_orig'), 'd'):>6} "
                     f"{fmt(r.get('r_p'), '.2f'):>7} {fmt(r.get('r_s'), '.2f'):>7} "
                     f"{fmt(r.get('error'), '.2e'):>9} {'yes' if r.get('invariants_ok') else 'NO'}")
    return "\n".join(lines)
