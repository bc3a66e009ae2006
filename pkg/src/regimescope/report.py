"""Run reports: dual-axis convergence figure as SVG/PNG plus a CSV mirror.

The SVG is written directly (fixed layout, fixed float formatting, no
timestamps) so identical inputs produce identical bytes.  Alongside the
delimited output a matplotlib PNG of the same figure is rendered for
quick viewing; the PNG carries no byte-stability contract.

Every number in a report comes from an artifact file (trajectories.csv,
scores.csv, summary.json); nothing is recomputed.  Mirrored CSV columns
are copied as verbatim strings.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from .errors import DatasetError
from .metrics import read_trajectories_csv

SVG_WIDTH = 960
SVG_HEIGHT = 540
MARGIN_LEFT = 70
MARGIN_RIGHT = 70
MARGIN_TOP = 40
MARGIN_BOTTOM = 50

SERIES_STYLE = (
    ("train_score", "#1f77b4", "left"),
    ("val_score", "#2ca02c", "left"),
    ("norm_dw", "#d62728", "right"),
    ("norm_da", "#9467bd", "right"),
)


@dataclass
class FigureSpec:
    """What to draw: series selection, labels, and the output path."""

    series: Tuple[str, ...] = ("train_score", "val_score", "norm_dw", "norm_da")
    x_label: str = "batch"
    y_left_label: str = "score"
    y_right_label: str = "normalized convergence"
    title: str = ""
    legend_extra: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.series:
            raise ValueError("figure needs at least one series")


@dataclass
class RunReportData:
    batch_index: List[str]            # verbatim strings from trajectories.csv
    norm_dw: List[str]
    norm_da: List[str]
    scores: List[Tuple[int, float, float, int]]
    summary: dict


def load_run_artifacts(run_dir) -> RunReportData:
    run_dir = Path(run_dir)
    traj_path = run_dir / "trajectories.csv"
    if not traj_path.exists():
        raise DatasetError(f"missing trajectories: {traj_path}")
    cols = read_trajectories_csv(traj_path)
    scores = []
    scores_path = run_dir / "scores.csv"
    if scores_path.exists():
        with open(scores_path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                scores.append((int(row["epoch"]), float(row["train_score"]),
                               float(row["val_score"]), int(row["end_batch_index"])))
    summary = {}
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
    return RunReportData(batch_index=cols["batch_index"], norm_dw=cols["norm_dw"],
                         norm_da=cols["norm_da"], scores=scores, summary=summary)


def write_report_csv(path, data: RunReportData) -> None:
    """Mirror of the plotted convergence values, strings copied verbatim."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch_index", "norm_dw", "norm_da"])
        for row in zip(data.batch_index, data.norm_dw, data.norm_da):
            writer.writerow(row)


def _x_pos(i: float, t: int) -> float:
    span = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    if t <= 1:
        return MARGIN_LEFT + span / 2
    return MARGIN_LEFT + span * (i / (t - 1))


def _y_pos(v: float) -> float:
    span = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    v = min(max(v, 0.0), 1.0)
    return MARGIN_TOP + span * (1.0 - v)


def _polyline(points, color) -> str:
    coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in points)
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>'


def render_svg(data: RunReportData, spec: Optional[FigureSpec] = None) -> str:
    """Dual-axis figure: score on the left axis, convergence on the right."""
    spec = spec or FigureSpec()
    t = len(data.batch_index)
    plot_bottom = SVG_HEIGHT - MARGIN_BOTTOM
    plot_right = SVG_WIDTH - MARGIN_RIGHT
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" '
        f'width="{plot_right - MARGIN_LEFT}" height="{plot_bottom - MARGIN_TOP}" '
        'fill="none" stroke="#000000" stroke-width="1"/>',
    ]
    # axis ticks at 0, 0.5, 1 on both sides
    for v in (0.0, 0.5, 1.0):
        y = _y_pos(v)
        parts.append(f'<text x="{MARGIN_LEFT - 8:.1f}" y="{y + 4:.1f}" '
                     f'text-anchor="end" font-size="12">{v:.1f}</text>')
        parts.append(f'<text x="{plot_right + 8:.1f}" y="{y + 4:.1f}" '
                     f'text-anchor="start" font-size="12">{v:.1f}</text>')
    parts.append(f'<text x="{(MARGIN_LEFT + plot_right) / 2:.1f}" '
                 f'y="{SVG_HEIGHT - 14}" text-anchor="middle" font-size="13">'
                 f'{spec.x_label}</text>')
    parts.append(f'<text x="18" y="{(MARGIN_TOP + plot_bottom) / 2:.1f}" font-size="13" '
                 f'transform="rotate(-90 18 {(MARGIN_TOP + plot_bottom) / 2:.1f})" '
                 f'text-anchor="middle">{spec.y_left_label}</text>')
    parts.append(f'<text x="{SVG_WIDTH - 14}" y="{(MARGIN_TOP + plot_bottom) / 2:.1f}" '
                 f'font-size="13" transform="rotate(90 {SVG_WIDTH - 14} '
                 f'{(MARGIN_TOP + plot_bottom) / 2:.1f})" text-anchor="middle">'
                 f'{spec.y_right_label}</text>')
    if spec.title:
        parts.append(f'<text x="{SVG_WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-size="15">{spec.title}</text>')

    for name, color, _side in SERIES_STYLE:
        if name not in spec.series:
            continue
        if name in ("norm_dw", "norm_da"):
            values = data.norm_dw if name == "norm_dw" else data.norm_da
            points = [(_x_pos(i, t), _y_pos(float(v))) for i, v in enumerate(values)]
        else:
            col = 1 if name == "train_score" else 2
            points = [(_x_pos(s[3], t), _y_pos(s[col])) for s in data.scores]
        if points:
            parts.append(f'<g id="{name}">{_polyline(points, color)}</g>')

    legend_entries = [name for name, _c, _s in SERIES_STYLE if name in spec.series]
    rho = data.summary.get("rho")
    legend_extra = list(spec.legend_extra)
    if rho is not None:
        legend_extra.append(f"rho = {rho!r}")
    elif data.summary.get("rho_degenerate"):
        legend_extra.append("rho degenerate (no activation change)")
    y = MARGIN_TOP + 16
    for name in legend_entries:
        color = dict((n, c) for n, c, _ in SERIES_STYLE)[name]
        parts.append(f'<rect x="{MARGIN_LEFT + 12}" y="{y - 9}" width="18" height="4" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{MARGIN_LEFT + 36}" y="{y}" font-size="12">{name}</text>')
        y += 16
    for text in legend_extra:
        parts.append(f'<text x="{MARGIN_LEFT + 12}" y="{y}" font-size="12">{text}</text>')
        y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report_svg(path, data: RunReportData, spec: Optional[FigureSpec] = None) -> None:
    Path(path).write_text(render_svg(data, spec), encoding="utf-8")


def write_report_png(path, data: RunReportData, spec: Optional[FigureSpec] = None) -> None:
    """Matplotlib rendering of the same figure (convenience output)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    spec = spec or FigureSpec()
    fig, ax_left = plt.subplots(figsize=(9.6, 5.4))
    ax_right = ax_left.twinx()
    styles = dict((n, c) for n, c, _ in SERIES_STYLE)
    batches = [int(b) for b in data.batch_index]
    if "norm_dw" in spec.series:
        ax_right.plot(batches, [float(v) for v in data.norm_dw],
                      color=styles["norm_dw"], label="norm_dw", lw=1.0)
    if "norm_da" in spec.series:
        ax_right.plot(batches, [float(v) for v in data.norm_da],
                      color=styles["norm_da"], label="norm_da", lw=1.0)
    if data.scores:
        xs = [s[3] for s in data.scores]
        if "train_score" in spec.series:
            ax_left.plot(xs, [s[1] for s in data.scores], color=styles["train_score"],
                         marker="o", ms=3, label="train_score")
        if "val_score" in spec.series:
            ax_left.plot(xs, [s[2] for s in data.scores], color=styles["val_score"],
                         marker="o", ms=3, label="val_score")
    ax_left.set_xlabel(spec.x_label)
    ax_left.set_ylabel(spec.y_left_label)
    ax_right.set_ylabel(spec.y_right_label)
    ax_left.set_ylim(0, 1.05)
    ax_right.set_ylim(0, 1.05)
    rho = data.summary.get("rho")
    title = spec.title or (f"rho = {rho:.3f}" if isinstance(rho, float) else "")
    if title:
        ax_left.set_title(title)
    lines = ax_left.get_lines() + ax_right.get_lines()
    if lines:
        ax_left.legend(lines, [ln.get_label() for ln in lines], loc="center right",
                       fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(run_dir, fmt: str = "svg", out_dir=None) -> List[Path]:
    """Write report artifacts for a run directory; returns written paths.

    Always writes report.csv and report.png; report.svg only for
    fmt == 'svg'.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_run_artifacts(run_dir)
    written = []
    csv_path = out_dir / "report.csv"
    write_report_csv(csv_path, data)
    written.append(csv_path)
    if fmt == "svg":
        svg_path = out_dir / "report.svg"
        write_report_svg(svg_path, data)
        written.append(svg_path)
    png_path = out_dir / "report.png"
    write_report_png(png_path, data)
    written.append(png_path)
    return written
