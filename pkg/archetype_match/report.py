"""
Report figures and tables.

SVG is written directly with ElementTree: the score matrix as overlaid
squares (side proportional to the score) and perturbation sweeps as
polylines of dissimilarity and complexity against the perturbation scale.
"""

from __future__ import annotations

import csv
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from itertools import groupby
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path

    from .score import ScoreMatrix
    from .train import FitResult

LOGGER = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"
SIMILARITY_COLOR = "#f2c94c"
SIMPLICITY_COLOR = "#2f80ed"
SERIES_COLORS = ("#2f80ed", "#eb5757", "#27ae60", "#9b51e0", "#f2994a", "#333333")

CELL = 60
MARGIN = 110
PANEL_W = 320
PANEL_H = 220


@dataclass(frozen=True)
class SweepPoint:
    """One fit of a perturbation sweep."""

    kind: str
    archetype: str
    seed: int
    s: float
    dissimilarity: float
    complexity: float


def sweep_points(fits: Iterable[FitResult]) -> list[SweepPoint]:
    """Fits of perturbed targets, ordered by family, archetype, seed and scale."""
    points = [
        SweepPoint(
            kind=str(fit.perturbation.kind),
            archetype=fit.archetype_name,
            seed=fit.perturbation.seed,
            s=fit.perturbation.s,
            dissimilarity=fit.test_mse,
            complexity=fit.complexity,
        )
        for fit in fits
        if fit.perturbation is not None
    ]
    return sorted(points, key=lambda p: (p.kind, p.archetype, p.seed, p.s))


def write_sweep_csv(points: Sequence[SweepPoint], path: Path) -> Path:
    """Sweep table ``kind,archetype,seed,s,dissimilarity,complexity``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["kind", "archetype", "seed", "s", "dissimilarity", "complexity"])
        for p in points:
            writer.writerow(
                [p.kind, p.archetype, p.seed, format(p.s, ".17g"),
                 format(p.dissimilarity, ".17g"), format(p.complexity, ".17g")]
            )
    return path


def _svg(width: float, height: float) -> ET.Element:
    return ET.Element(
        "svg",
        {"xmlns": SVG_NS, "width": _n(width), "height": _n(height), "viewBox": f"0 0 {_n(width)} {_n(height)}"},
    )


def _n(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".")


def _text(parent: ET.Element, x: float, y: float, label: str, **attrs: str) -> None:
    node = ET.SubElement(
        parent, "text", {"x": _n(x), "y": _n(y), "font-family": "sans-serif", "font-size": "11", **attrs}
    )
    node.text = label


def _write(root: ET.Element, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    ET.indent(root)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
    return path


def _square(parent: ET.Element, cx: float, cy: float, side: float, color: str, opacity: str) -> None:
    ET.SubElement(
        parent,
        "rect",
        {
            "x": _n(cx - side / 2),
            "y": _n(cy - side / 2),
            "width": _n(side),
            "height": _n(side),
            "fill": color,
            "fill-opacity": opacity,
        },
    )


def matrix_svg(matrix: ScoreMatrix, path: Path) -> Path:
    """
    Overlaid-squares view of a score matrix.

    Each cell holds a similarity square and a simplicity square, centred on
    the cell, with side proportional to the score.
    """
    n_rows, n_cols = len(matrix.archetypes), len(matrix.targets)
    root = _svg(MARGIN + n_cols * CELL + 10, MARGIN + n_rows * CELL + 10)
    for t, target in enumerate(matrix.targets):
        x = MARGIN + (t + 0.5) * CELL
        _text(root, x, MARGIN - 8, target, **{"text-anchor": "end", "transform": f"rotate(-45 {_n(x)} {_n(MARGIN - 8)})"})
    for a, archetype in enumerate(matrix.archetypes):
        cy = MARGIN + (a + 0.5) * CELL
        _text(root, MARGIN - 8, cy + 4, archetype, **{"text-anchor": "end"})
        for t in range(n_cols):
            cx = MARGIN + (t + 0.5) * CELL
            ET.SubElement(
                root,
                "rect",
                {
                    "x": _n(cx - CELL / 2),
                    "y": _n(cy - CELL / 2),
                    "width": _n(CELL),
                    "height": _n(CELL),
                    "fill": "none",
                    "stroke": "#dddddd",
                },
            )
            _square(root, cx, cy, matrix.similarity[a][t] * (CELL - 6), SIMILARITY_COLOR, "0.8")
            _square(root, cx, cy, matrix.simplicity[a][t] * (CELL - 6), SIMPLICITY_COLOR, "0.5")
    return _write(root, path)


def _panel(
    root: ET.Element,
    origin: tuple[float, float],
    title: str,
    series: list[tuple[str, list[tuple[float, float]]]],
) -> None:
    ox, oy = origin
    xs = [x for _, pts in series for x, _ in pts] or [0.0, 1.0]
    ys = [y for _, pts in series for _, y in pts] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def to_px(x: float, y: float) -> str:
        px = ox + (x - x_lo) / x_span * PANEL_W
        py = oy + PANEL_H - (y - y_lo) / y_span * PANEL_H
        return f"{_n(px)},{_n(py)}"

    ET.SubElement(
        root,
        "rect",
        {"x": _n(ox), "y": _n(oy), "width": _n(PANEL_W), "height": _n(PANEL_H), "fill": "none", "stroke": "#999999"},
    )
    _text(root, ox, oy - 8, title)
    _text(root, ox, oy + PANEL_H + 14, _n(x_lo))
    _text(root, ox + PANEL_W, oy + PANEL_H + 14, _n(x_hi), **{"text-anchor": "end"})
    _text(root, ox - 4, oy + 10, f"{y_hi:.3g}", **{"text-anchor": "end"})
    for i, (label, pts) in enumerate(series):
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        ET.SubElement(
            root,
            "polyline",
            {"points": " ".join(to_px(x, y) for x, y in pts), "fill": "none", "stroke": color, "stroke-width": "1.5"},
        )
        _text(root, ox + PANEL_W + 8, oy + 14 * (i + 1), label, fill=color)


def sweep_svg(points: Sequence[SweepPoint], path: Path) -> Path:
    """Dissimilarity and complexity against s, one polyline per (archetype, seed)."""
    series_dis: list[tuple[str, list[tuple[float, float]]]] = []
    series_cpx: list[tuple[str, list[tuple[float, float]]]] = []
    for (archetype, seed), group in groupby(points, key=lambda p: (p.archetype, p.seed)):
        members = list(group)
        label = f"{archetype} seed {seed}"
        series_dis.append((label, [(p.s, p.dissimilarity) for p in members]))
        series_cpx.append((label, [(p.s, p.complexity) for p in members]))
    width = 2 * (PANEL_W + 150) + 60
    root = _svg(width, PANEL_H + 80)
    _panel(root, (60, 30), "dissimilarity (test MSE) vs s", series_dis)
    _panel(root, (60 + PANEL_W + 150 + 60, 30), "complexity vs s", series_cpx)
    LOGGER.debug("Sweep figure with %d series", len(series_dis))
    return _write(root, path)
