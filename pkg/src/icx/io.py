"""CSV ingestion and machine-readable result emission.

Every emitter produces deterministic bytes for identical inputs: fixed
column orders, ``repr`` float formatting (shortest round-trip), and ``\\n``
line endings.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Iterable, Sequence

import numpy as np

from .dataset import ContractViolation, Dataset, standardize_columns
from .effects import EffectCurve
from .shapley import AttributionResult
from .importance import ImportanceReport
from .valuation import ContextSelection, DataValueReport


class IngestError(ValueError):
    """The input file cannot be turned into a valid dataset."""


def load_csv(path, label_column: str) -> Dataset:
    """Load a CSV with a header row into a standardized dataset.

    All non-label columns must parse as finite floats; the label column must
    take exactly two distinct values, mapped to {0, 1} in sorted order.
    Problems are reported with 1-based data row numbers. CRLF and LF files
    parse identically.
    """
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [name.strip() for name in header]
        if label_column not in header:
            raise IngestError(f"{path}: no column named {label_column!r} in header {header}")
        label_idx = header.index(label_column)
        feature_names = [name for i, name in enumerate(header) if i != label_idx]

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        problems: list[str] = []
        for row_number, row in enumerate(reader, start=1):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                problems.append(f"row {row_number}: {len(row)} cells, expected {len(header)}")
                continue
            values = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    problems.append(f"row {row_number}: non-numeric cell {cell!r} in column {header[i]!r}")
                    value = float("nan")
                if not np.isfinite(value):
                    problems.append(f"row {row_number}: non-finite value in column {header[i]!r}")
                values.append(value)
            rows.append(values)
            raw_labels.append(row[label_idx].strip())
    if problems:
        raise IngestError(f"{path}: " + "; ".join(problems[:20]))
    if not rows:
        raise IngestError(f"{path}: no data rows")
    distinct = sorted(set(raw_labels))
    if len(distinct) != 2:
        raise IngestError(f"{path}: label column must be binary, found values {distinct}")
    labels = np.array([float(distinct.index(v)) for v in raw_labels])
    features = standardize_columns(np.asarray(rows, dtype=np.float64))
    return Dataset(features=features, labels=labels, column_names=tuple(feature_names))


# -- emission -----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows with deterministic formatting and LF endings."""
    with open(path, "w", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(cell) for cell in row) + "\n")


def write_json(path, payload) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def curve_rows(curve: EffectCurve) -> tuple[list[str], list[list]]:
    """(header, rows) for an effect curve: grid value, then value column(s)."""
    if curve.values.ndim == 2:
        header = ["grid_value"] + [f"obs_{i}" for i in range(curve.values.shape[1])]
        rows = [[g] + list(vals) for g, vals in zip(curve.grid.points, curve.values)]
    else:
        header = ["grid_value", "value"]
        rows = [[g, v] for g, v in zip(curve.grid.points, curve.values)]
    return header, rows


def curve_json(curve: EffectCurve) -> dict:
    payload = {
        "kind": curve.kind,
        "feature_index": curve.grid.feature_index,
        "strategy": curve.grid.strategy.value,
        "grid": curve.grid.points.tolist(),
        "values": curve.values.tolist(),
    }
    if curve.diagnostics:
        payload["diagnostics"] = {
            key: (value.tolist() if isinstance(value, np.ndarray) else value)
            for key, value in curve.diagnostics.items()
        }
    return payload


def attribution_rows(result: AttributionResult, feature_names: Sequence[str]) -> tuple[list[str], list[list]]:
    """Long-format rows: one (inference_id, feature, phi) triple per cell."""
    header = ["inference_id", "feature", "phi"]
    rows = []
    for i in range(result.n_inference):
        for j in range(result.n_features):
            rows.append([i, feature_names[j], result.phi[j, i]])
    return header, rows


def attribution_json(result: AttributionResult) -> dict:
    return {
        "base_value": result.base_value,
        "phi": result.phi.tolist(),
        "mode": result.mode.label if result.mode is not None else None,
        "M": result.m_coalitions,
        "L": result.mode.L if result.mode is not None else None,
        "token_budget": result.token_budget,
        "token_connections": result.token_connections,
        "evaluation_calls": result.evaluation_calls,
        "condition_number": result.condition_number,
        "ridged": result.ridged,
    }


def importance_rows(report: ImportanceReport, feature_names: Sequence[str]) -> tuple[list[str], list[list]]:
    header = ["feature", "score"]
    return header, [[name, score] for name, score in zip(feature_names, report.scores)]


def data_value_rows(report: DataValueReport) -> tuple[list[str], list[list]]:
    header = ["row_id", "value"]
    return header, [[i, v] for i, v in enumerate(report.values)]


def selection_json(selection: ContextSelection) -> dict:
    return {
        "selected_indices": selection.selected.indices.tolist(),
        "coefficients": selection.coefficients.tolist(),
        "config": selection.config,
    }


def selection_mask_rows(selection: ContextSelection) -> tuple[list[str], list[list]]:
    header = ["row_id", "selected"]
    mask = selection.selected.mask
    return header, [[i, int(flag)] for i, flag in enumerate(mask)]


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
