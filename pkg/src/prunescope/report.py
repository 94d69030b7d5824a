"""records.csv I/O, rank correlations, and static SVG plots."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np
from scipy.stats import rankdata

from .errors import InsufficientData, InvalidParameter, ParseError

KEY_COLUMNS = ("trial", "method", "fraction", "epoch")
METHOD_ORDER = {"lowest": 0, "random": 1, "highest": 2}


def fmt(value) -> str:
    """17 significant digits for floats: round-trips every float64."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def record_sort_key(row: dict):
    return (int(row["trial"]), METHOD_ORDER.get(row["method"], 99), row["method"], float(row["fraction"]), int(row["epoch"]))


def write_records(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in sorted(rows, key=record_sort_key):
            writer.writerow([fmt(row[c]) for c in columns])


def read_records(path) -> list[dict]:
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [c for c in KEY_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            row = {}
            for key, value in raw.items():
                if key is None or value is None:
                    raise ParseError(f"{path}: row {lineno} does not match the header")
                if key == "method":
                    row[key] = value
                elif key in ("trial", "epoch"):
                    try:
                        row[key] = int(value)
                    except ValueError:
                        raise ParseError(f"{path}: row {lineno}, column {key!r}: {value!r} is not an integer") from None
                else:
                    try:
                        row[key] = float(value)
                    except ValueError:
                        raise ParseError(f"{path}: row {lineno}, column {key!r}: {value!r} is not numeric") from None
            rows.append(row)
    return rows


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rho with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise InsufficientData(f"need at least 3 paired values, got {x.size}")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise InsufficientData("ranks are constant; correlation undefined")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def metric_columns(rows: Iterable[dict]) -> list[str]:
    cols = []
    for row in rows:
        cols = [c for c in row if c == "ap2" or (c.startswith("ap3_") and not c.endswith("_se"))]
        break
    return cols


def rank_correlation(
    records: Sequence[dict],
    at_epoch: int,
    metric: str = "ap2",
    pd_mode: str = "accuracy",
    pd_epoch: int | None = None,
) -> float:
    """Spearman rho across (method, fraction) cells between a metric at
    ``at_epoch`` and PD at ``pd_epoch`` (default: the same epoch), computed
    per trial and averaged.

    ``metric`` is ``ap2``, a full column name such as ``ap3_student``, or
    plain ``ap3`` for the first AP3 column.
    """
    if pd_mode not in ("accuracy", "loss"):
        raise InvalidParameter(f"unknown PD mode {pd_mode!r}")
    if not records:
        raise InsufficientData("no records")
    column = metric
    if metric == "ap3":
        ap3_cols = [c for c in metric_columns(records) if c.startswith("ap3_")]
        if not ap3_cols:
            raise InsufficientData("records carry no AP3 column")
        column = ap3_cols[0]
    pd_col = f"pd_{pd_mode}"
    pd_epoch = at_epoch if pd_epoch is None else pd_epoch
    by_trial: dict[int, dict[tuple, dict]] = defaultdict(lambda: defaultdict(dict))
    for row in records:
        if column not in row:
            raise InsufficientData(f"records have no column {column!r}")
        cell = (row["method"], float(row["fraction"]))
        if row["epoch"] == at_epoch:
            by_trial[row["trial"]][cell]["m"] = row[column]
        if row["epoch"] == pd_epoch:
            by_trial[row["trial"]][cell]["pd"] = row[pd_col]
    rhos = []
    for trial in sorted(by_trial):
        cells = [v for _, v in sorted(by_trial[trial].items()) if "m" in v and "pd" in v]
        if len(cells) < 3:
            raise InsufficientData(f"trial {trial} has {len(cells)} complete cells; need 3")
        rhos.append(spearman([c["m"] for c in cells], [c["pd"] for c in cells]))
    if not rhos:
        raise InsufficientData("no trial has cells at the requested epochs")
    return float(np.mean(rhos))


# --- SVG rendering -------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
PANEL_W, PANEL_H, MARGIN = 360, 240, 48


def _n(x: float) -> str:
    return f"{x:.2f}"


def _panel(x0: float, title: str, series: list[tuple[str, str, list[tuple[float, float]], float]]) -> list[str]:
    """One axis box with polylines; series = (label, color, points, stroke width)."""
    pts = [p for _, _, s, _ in series for p in s]
    xs = [p[0] for p in pts] or [0.0]
    ys = [p[1] for p in pts] or [0.0]
    xlo, xhi = min(xs), max(xs)
    ylo, yhi = min(ys), max(ys)
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi == ylo:
        pad = abs(ylo) * 0.1 or 1.0
        ylo, yhi = ylo - pad, yhi + pad
    left, top = x0 + MARGIN, MARGIN
    w, h = PANEL_W - 1.5 * MARGIN, PANEL_H - 2 * MARGIN

    def sx(v):
        return left + (v - xlo) / (xhi - xlo) * w

    def sy(v):
        return top + h - (v - ylo) / (yhi - ylo) * h

    out = [
        f'<rect x="{_n(left)}" y="{_n(top)}" width="{_n(w)}" height="{_n(h)}" fill="none" stroke="#444"/>',
        f'<text x="{_n(left + w / 2)}" y="{_n(top - 10)}" text-anchor="middle" font-size="12">{escape(title)}</text>',
        f'<text x="{_n(left)}" y="{_n(top + h + 16)}" font-size="10">{xlo:g}</text>',
        f'<text x="{_n(left + w)}" y="{_n(top + h + 16)}" text-anchor="end" font-size="10">{xhi:g}</text>',
        f'<text x="{_n(left + w / 2)}" y="{_n(top + h + 30)}" text-anchor="middle" font-size="10">epoch</text>',
        f'<text x="{_n(left - 4)}" y="{_n(top + 10)}" text-anchor="end" font-size="10">{yhi:.3g}</text>',
        f'<text x="{_n(left - 4)}" y="{_n(top + h)}" text-anchor="end" font-size="10">{ylo:.3g}</text>',
    ]
    for _, color, points, width in series:
        coords = " ".join(f"{_n(sx(x))},{_n(sy(y))}" for x, y in points)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"/>')
        if len(points) == 1:
            x, y = points[0]
            out.append(f'<circle cx="{_n(sx(x))}" cy="{_n(sy(y))}" r="2.5" fill="{color}"/>')
    return out


def _series(rows: list[dict], column: str) -> tuple[dict[int, list], list]:
    per_trial: dict[int, dict[int, float]] = defaultdict(dict)
    for r in rows:
        per_trial[r["trial"]][r["epoch"]] = r[column]
    trials = {t: sorted(v.items()) for t, v in sorted(per_trial.items())}
    epochs = sorted({e for v in per_trial.values() for e in v})
    mean = [(float(e), float(np.mean([per_trial[t][e] for t in per_trial if e in per_trial[t]]))) for e in epochs]
    return trials, mean


def _figure(title: str, metric: str, groups: list[tuple[str, list[dict]]]) -> str:
    width, height = 2 * PANEL_W + 140, PANEL_H + 20
    body = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="16" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    left_series, right_series = [], []
    for i, (label, rows) in enumerate(groups):
        color = PALETTE[i % len(PALETTE)]
        for col, bucket in ((metric, left_series), ("pd_accuracy", right_series)):
            trials, mean = _series(rows, col)
            if len(trials) > 1:
                for _, pts in trials.items():
                    bucket.append((label, color, [(float(e), float(v)) for e, v in pts], 0.6))
            bucket.append((label, color, mean, 2.0))
    body += _panel(0, metric, left_series)
    body += _panel(PANEL_W, "PD (test accuracy)", right_series)
    for i, (label, _) in enumerate(groups):
        y = MARGIN + 14 * i
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<rect x="{2 * PANEL_W + 10}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        body.append(f'<text x="{2 * PANEL_W + 26}" y="{y + 1}" font-size="11">{escape(label)}</text>')
    body.append("</svg>")
    return "\n".join(body) + "\n"


def render_plots(records_path, out_dir) -> list[Path]:
    """One SVG per method (fractions compared) and per fraction (methods
    compared), for every AP metric column. Bold lines are trial means; thin
    lines are individual trials."""
    rows = read_records(records_path)
    if not rows:
        raise InsufficientData(f"{records_path}: no records to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = sorted({r["method"] for r in rows}, key=lambda m: (METHOD_ORDER.get(m, 99), m))
    fractions = sorted({r["fraction"] for r in rows})
    written = []
    for metric in metric_columns(rows):
        for method in methods:
            groups = [(f"fraction {f:g}", [r for r in rows if r["method"] == method and r["fraction"] == f]) for f in fractions]
            groups = [g for g in groups if g[1]]
            path = out / f"method_{method}_{metric}.svg"
            path.write_text(_figure(f"{method} pruning: {metric} and PD by fraction", metric, groups), encoding="utf-8")
            written.append(path)
        for frac in fractions:
            groups = [(m, [r for r in rows if r["method"] == m and r["fraction"] == frac]) for m in methods]
            groups = [g for g in groups if g[1]]
            path = out / f"fraction_{frac:g}_{metric}.svg"
            path.write_text(_figure(f"fraction {frac:g}: {metric} and PD by method", metric, groups), encoding="utf-8")
            written.append(path)
    return written


def correlation_summary(rows: Sequence[dict]) -> dict:
    """Spearman rho of every AP metric against PD in both modes, for the
    epoch pairs (0, 0), (0, final) and (final, final). Any rho <= 0 is also
    listed under ``deviations``."""
    if not rows:
        raise InsufficientData("no records")
    final = max(r["epoch"] for r in rows)
    out = {"final_epoch": final, "correlations": [], "deviations": []}
    pairs = sorted({(0, 0), (0, final), (final, final)})
    for metric in metric_columns(rows):
        for at, pd_at in pairs:
            for mode in ("accuracy", "loss"):
                entry = {"metric": metric, "metric_epoch": at, "pd_mode": mode, "pd_epoch": pd_at}
                try:
                    entry["rho"] = rank_correlation(rows, at, metric, mode, pd_epoch=pd_at)
                except InsufficientData as exc:
                    entry["rho"] = None
                    entry["note"] = str(exc)
                out["correlations"].append(entry)
                if entry["rho"] is not None and entry["rho"] <= 0:
                    out["deviations"].append(
                        f"{metric} at epoch {at} vs PD ({mode}) at epoch {pd_at}: rho = {entry['rho']:.4f} <= 0, "
                        "so lower pattern divergence did not track lower performance difference here"
                    )
    return out
