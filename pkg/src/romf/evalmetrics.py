"""Error metrics, per-step error curves, and deterministic exports.

CSV files carry a header row and 17-significant-digit floats so a
matrix survives a write/read round trip bit-exactly. SVG output is
rendered by hand (per-cell rectangles, fixed 256-step colormap) so
identical data always produces identical bytes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MetricError, ShapeError
from .storage import atomic_write_bytes

FLOAT_FMT = "%.17g"

# 256-step linear colormap through dark blue -> teal -> yellow anchors,
# interpolated in RGB; index = floor(255 * normalized value).
_ANCHORS = ((13, 8, 135), (126, 3, 168), (204, 71, 120), (248, 149, 64), (240, 249, 33))


def _build_colormap() -> list:
    steps = 256
    stops = np.linspace(0.0, 1.0, len(_ANCHORS))
    table = []
    for i in range(steps):
        t = i / (steps - 1)
        j = min(int(np.searchsorted(stops, t, side="right")), len(_ANCHORS) - 1)
        lo, hi = _ANCHORS[j - 1], _ANCHORS[j]
        f = (t - stops[j - 1]) / (stops[j] - stops[j - 1])
        table.append(tuple(round(a + f * (b - a)) for a, b in zip(lo, hi)))
    return table


COLORMAP = _build_colormap()


def _check_shapes(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ShapeError(f"shapes disagree: truth {truth.shape} vs pred {pred.shape}")
    return truth, pred


def mse(truth, pred) -> float:
    truth, pred = _check_shapes(truth, pred)
    diff = truth - pred
    return float(np.mean(diff * diff))


def mae(truth, pred) -> float:
    truth, pred = _check_shapes(truth, pred)
    return float(np.mean(np.abs(truth - pred)))


def relative_l2(truth, pred) -> float:
    """||truth - pred||_2 / ||truth||_2 over all elements."""
    truth, pred = _check_shapes(truth, pred)
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise MetricError("relative L2 undefined for zero-norm truth")
    return float(np.linalg.norm(truth - pred)) / denom


def error_curve(truth: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Per-time-step relative L2 over the spatial nodes."""
    truth, pred = _check_shapes(truth, pred)
    if truth.ndim != 2:
        raise ShapeError(f"expected (n_s, steps) matrices, got {truth.shape}")
    denom = np.linalg.norm(truth, axis=0)
    if np.any(denom == 0.0):
        raise MetricError("relative L2 undefined: a truth column has zero norm")
    return np.linalg.norm(truth - pred, axis=0) / denom


@dataclass
class MetricReport:
    """Aggregate + per-step metrics for one prediction run."""

    mse: float
    mae: float
    relative_l2: float
    per_step_relative_l2: np.ndarray
    final_step_relative_l2: float
    max_relative_l2: float
    config_echo: dict = field(default_factory=dict)

    @classmethod
    def compute(cls, truth: np.ndarray, pred: np.ndarray, config_echo: dict | None = None):
        curve = error_curve(truth, pred)
        return cls(
            mse=mse(truth, pred),
            mae=mae(truth, pred),
            relative_l2=relative_l2(truth, pred),
            per_step_relative_l2=curve,
            final_step_relative_l2=float(curve[-1]),
            max_relative_l2=float(curve.max()),
            config_echo=config_echo or {},
        )

    def to_json(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "relative_l2": self.relative_l2,
            "final_step_relative_l2": self.final_step_relative_l2,
            "max_relative_l2": self.max_relative_l2,
            "steps": int(self.per_step_relative_l2.size),
            "config_echo": self.config_echo,
        }


def write_csv_matrix(path, matrix: np.ndarray, header: list | None = None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    cols = matrix.shape[1]
    names = header if header is not None else [f"c{i}" for i in range(cols)]
    if len(names) != cols:
        raise ShapeError(f"header has {len(names)} names for {cols} columns")
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in matrix:
        buf.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    atomic_write_bytes(path, buf.getvalue().encode())


def read_csv_matrix(path) -> np.ndarray:
    lines = Path(path).read_text().strip().splitlines()
    return np.array(
        [[float(v) for v in line.split(",")] for line in lines[1:]], dtype=np.float64
    )


def _value_to_color(v: float, lo: float, hi: float) -> str:
    t = 0.0 if hi == lo else (v - lo) / (hi - lo)
    r, g, b = COLORMAP[min(255, max(0, int(t * 255)))]
    return f"#{r:02x}{g:02x}{b:02x}"


def export_heatmap(matrix: np.ndarray, path_base, title: str = "", cell: int = 4) -> tuple[Path, Path]:
    """Write <base>.csv and a per-cell-rectangle <base>.svg heat map.

    Rows render top to bottom (node 0 at the top), columns left to
    right; color is the 256-step linear map over the matrix range.
    Output bytes depend only on the inputs.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if not np.all(np.isfinite(matrix)):
        raise ShapeError("heat map requires finite data")
    base = Path(path_base)
    csv_path = base.with_suffix(".csv")
    svg_path = base.with_suffix(".svg")
    write_csv_matrix(csv_path, matrix)
    rows, cols = matrix.shape
    lo, hi = float(matrix.min()), float(matrix.max())
    margin = 20
    width, height = cols * cell + 2 * margin, rows * cell + 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f"<title>{title}</title>",
    ]
    for i in range(rows):
        for j in range(cols):
            color = _value_to_color(matrix[i, j], lo, hi)
            parts.append(
                f'<rect x="{margin + j * cell}" y="{margin + i * cell}" '
                f'width="{cell}" height="{cell}" fill="{color}"/>'
            )
    parts.append(
        f'<text x="{margin}" y="{margin - 6}" font-size="10" '
        f'font-family="monospace">{title} range=[{FLOAT_FMT % lo}, {FLOAT_FMT % hi}]</text>'
    )
    parts.append("</svg>")
    atomic_write_bytes(svg_path, "\n".join(parts).encode())
    return svg_path, csv_path


def export_lineplot(
    series: dict,
    path_base,
    title: str = "",
    x: np.ndarray | None = None,
    width: int = 640,
    height: int = 400,
) -> tuple[Path, Path]:
    """Write <base>.csv and a polyline <base>.svg with axes and legend.

    ``series`` maps label -> 1D array; all series share the x axis
    (indices unless ``x`` is given).
    """
    if not series:
        raise ShapeError("need at least one series")
    arrays = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in series.items()}
    n = len(next(iter(arrays.values())))
    for k, v in arrays.items():
        if v.size != n:
            raise ShapeError(f"series {k!r} length {v.size} != {n}")
        if not np.all(np.isfinite(v)):
            raise ShapeError(f"series {k!r} contains non-finite values")
    xs = np.arange(n, dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64)
    base = Path(path_base)
    csv_path = base.with_suffix(".csv")
    svg_path = base.with_suffix(".svg")
    write_csv_matrix(
        csv_path,
        np.column_stack([xs] + list(arrays.values())),
        header=["x"] + list(arrays.keys()),
    )
    margin = 50
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    ylo = min(v.min() for v in arrays.values())
    yhi = max(v.max() for v in arrays.values())
    if yhi == ylo:
        yhi = ylo + 1.0
    xlo, xhi = float(xs.min()), float(xs.max())
    if xhi == xlo:
        xhi = xlo + 1.0

    def sx(v):
        return margin + (v - xlo) / (xhi - xlo) * plot_w

    def sy(v):
        return height - margin - (v - ylo) / (yhi - ylo) * plot_h

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f"<title>{title}</title>",
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#000000"/>',
        f'<text x="{margin}" y="{margin - 10}" font-size="12" '
        f'font-family="monospace">{title}</text>',
        f'<text x="{margin - 45}" y="{height - margin}" font-size="9" '
        f'font-family="monospace">{FLOAT_FMT % ylo}</text>',
        f'<text x="{margin - 45}" y="{margin + 8}" font-size="9" '
        f'font-family="monospace">{FLOAT_FMT % yhi}</text>',
        f'<text x="{margin}" y="{height - margin + 14}" font-size="9" '
        f'font-family="monospace">{FLOAT_FMT % xlo}</text>',
        f'<text x="{width - margin - 30}" y="{height - margin + 14}" font-size="9" '
        f'font-family="monospace">{FLOAT_FMT % xhi}</text>',
    ]
    for idx, (label, v) in enumerate(arrays.items()):
        color = palette[idx % len(palette)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, v))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * idx + 10}" font-size="10" '
            f'font-family="monospace" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    atomic_write_bytes(svg_path, "\n".join(parts).encode())
    return svg_path, csv_path
