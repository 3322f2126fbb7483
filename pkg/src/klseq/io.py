"""File formats: CSV readers for observations, JSON/CSV writers for results.

Floats are serialized with ``repr`` (shortest round-tripping decimal form) so
that reading a written value back reproduces the exact binary double.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .engine import ChangePointTrace
from .errors import ParseError
from .families import PosteriorMoments
from .kltest import KlDecision


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ParseError(f"not a number: {text!r}") from exc


def read_series_csv(path: str | Path) -> list[np.ndarray]:
    """Read scalar observations grouped into batches.

    The file has a header.  With columns ``batch,value`` rows sharing a batch
    label form one batch, in file order.  With a single ``value`` column every
    row is its own batch of size 1.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip().lower() for h in header]
        if header == ["value"]:
            vals = []
            for ln, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 1:
                    raise ParseError(f"{path}:{ln}: expected 1 column, got {len(row)}")
                vals.append(parse_float(row[0]))
            if not vals:
                raise ParseError(f"{path}: no observations")
            return [np.array([v]) for v in vals]
        if header == ["batch", "value"]:
            batches: list[list[float]] = []
            last_label: str | None = None
            for ln, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise ParseError(f"{path}:{ln}: expected 2 columns, got {len(row)}")
                label, value = row[0].strip(), parse_float(row[1])
                if label != last_label:
                    batches.append([])
                    last_label = label
                batches[-1].append(value)
            if not batches:
                raise ParseError(f"{path}: no observations")
            return [np.array(b) for b in batches]
        raise ParseError(f"{path}: header must be 'value' or 'batch,value', got {header}")


def read_matrix_csv(path: str | Path) -> tuple[list[np.ndarray], int]:
    """Read vector observations: header ``batch,x1,...,xp`` or ``x1,...,xp``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        has_batch = bool(header) and header[0] == "batch"
        dim = len(header) - (1 if has_batch else 0)
        if dim < 1 or any(not h for h in header):
            raise ParseError(f"{path}: bad header {header}")
        batches: list[list[list[float]]] = []
        last_label: str | None = None
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{ln}: expected {len(header)} columns, got {len(row)}")
            if has_batch:
                label, vals = row[0].strip(), [parse_float(v) for v in row[1:]]
            else:
                label, vals = str(ln), [parse_float(v) for v in row]
            if label != last_label:
                batches.append([])
                last_label = label
            batches[-1].append(vals)
        if not batches:
            raise ParseError(f"{path}: no observations")
        return [np.array(b) for b in batches], dim


def read_raster_csv(path: str | Path) -> np.ndarray:
    """Read one K x T binary raster, no header, comma-separated 0/1."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [int(v) for v in row]
            except ValueError as exc:
                raise ParseError(f"{path}:{ln}: {exc}") from None
            if any(v not in (0, 1) for v in vals):
                raise ParseError(f"{path}:{ln}: raster entries must be 0 or 1")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: empty raster")
    if len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.int8)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` config file; '#' starts a comment."""
    out: dict[str, str] = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _decision_dict(step: int, d: KlDecision) -> dict[str, Any]:
    return {
        "step": step,
        "statistic": d.statistic,
        "lower": d.lower,
        "upper": d.upper,
        "detected": d.detected,
        "null_sample_size": d.null_sample_size,
    }


def _moments_dict(m: PosteriorMoments) -> dict[str, Any]:
    return {
        "mean_theta": list(m.mean_theta),
        "var_theta": list(m.var_theta),
        "mean_b": m.mean_b,
        "mean_natural": list(m.mean_natural),
        "var_natural": list(m.var_natural),
    }


def trace_to_dict(trace: ChangePointTrace) -> dict[str, Any]:
    return {
        "steps": [
            {**_decision_dict(step, d), "estimate": _moments_dict(est)}
            for (step, d), est in zip(trace.detections, trace.estimates)
        ],
        "changepoints": list(trace.changepoints),
    }


def trace_from_dict(data: dict[str, Any]) -> ChangePointTrace:
    detections = []
    estimates = []
    for rec in data["steps"]:
        detections.append(
            (
                int(rec["step"]),
                KlDecision(
                    float(rec["statistic"]),
                    float(rec["lower"]),
                    float(rec["upper"]),
                    bool(rec["detected"]),
                    int(rec["null_sample_size"]),
                ),
            )
        )
        e = rec["estimate"]
        estimates.append(
            PosteriorMoments(
                tuple(float(v) for v in e["mean_theta"]),
                tuple(float(v) for v in e["var_theta"]),
                float(e["mean_b"]),
                tuple(float(v) for v in e["mean_natural"]),
                tuple(float(v) for v in e["var_natural"]),
            )
        )
    return ChangePointTrace(tuple(detections), tuple(estimates))


def write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")


def write_trace_json(path: str | Path, trace: ChangePointTrace) -> None:
    write_json(path, trace_to_dict(trace))


def read_trace_json(path: str | Path) -> ChangePointTrace:
    return trace_from_dict(json.loads(Path(path).read_text()))


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])


def write_estimates_csv(path: str | Path, trace: ChangePointTrace) -> None:
    rows = []
    for (step, _), est in zip(trace.detections, trace.estimates):
        rows.append(
            [step]
            + [float(v) for v in est.mean_natural]
            + [float(v) for v in est.var_natural]
            + [float(est.mean_b)]
        )
    d = len(trace.estimates[0].mean_natural) if trace.estimates else 1
    header = (
        ["step"]
        + [f"mean_{i + 1}" for i in range(d)]
        + [f"var_{i + 1}" for i in range(d)]
        + ["mean_b"]
    )
    write_csv(path, header, rows)


def write_changepoints_csv(path: str | Path, trace: ChangePointTrace) -> None:
    rows = []
    for step, dec in trace.detections:
        if dec.detected:
            rows.append([step, float(dec.statistic), float(dec.lower), float(dec.upper)])
    write_csv(path, ["step", "statistic", "lower", "upper"], rows)
