"""CSV and JSON writers with fixed, round-trip float formatting."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .multifluid import MultifluidState, mixture
from .ns import NSState, effective_flux


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple:
    """Header and rows; numeric tables come back as an array, mixed ones as lists."""
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    rows = [[_cell(v) for v in line.split(",")] for line in text[1:] if line]
    if all(isinstance(v, float) for row in rows for v in row):
        return header, np.array(rows)
    return header, rows


def _cell(v: str):
    try:
        return float(v)
    except ValueError:
        return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


NS_FRAME_HEADER = ["t", "x", "rho", "u", "z"]
NS_DIAG_HEADER = ["t", "kinetic", "potential", "dissipation", "bd_entropy", "max_haspot_v", "min_rho", "max_rho"]


def ns_frame_rows(state: NSState, laws) -> list:
    x = np.mod(state.mesh.centers, state.L)
    u = state.u_centers().values
    z = effective_flux(state, laws).values
    return [(state.time, xi, r, ui, zi) for xi, r, ui, zi in zip(x, state.rho, u, z)]


def mf_frame_header(k: int) -> list:
    head = ["t", "x", "u", "rho_bar", "m", "pi"]
    for i in range(1, k + 1):
        head += [f"alpha_{i}", f"rho_{i}"]
    return head


def mf_diag_header(k: int) -> list:
    return ["t", "sum_alpha_drift"] + [f"mass_{i}" for i in range(1, k + 1)] + ["closure_identity_residual"]


def mf_frame_rows(state: MultifluidState, laws) -> list:
    mix = mixture(state, laws)
    cols = [state.grid.centers, state.u, mix.rho_bar.values, mix.m.values, mix.pi.values]
    for i in range(state.k):
        cols += [state.alpha[i], state.rho[i]]
    return [(state.time, *vals) for vals in zip(*cols)]
