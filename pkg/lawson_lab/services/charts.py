"""
charts.py — Figures for `plot-data` and the PDF summary.

Charts (base64 PNG, or files with save_all):
  abs_H        heat map of |H| over the parameter domain
  gauss        heat map of the Gauss curvature K
  spectrum     eigenvalues by index, coloured by multiplicity cluster
  mobius       sampled V(γ_a∘f) against |a|
"""

import base64
import io
import logging
import threading
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.figure
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)

_chart_lock = threading.Lock()
_BG = "#111827"
_FG = "#e5e7eb"
_MUTED = "#9ca3af"


def _encode(fig: matplotlib.figure.Figure) -> str:
    buf = io.BytesIO()
    fig.tight_layout()
    fig.savefig(buf, format="png", dpi=100, bbox_inches="tight")
    plt.close(fig)
    buf.seek(0)
    return base64.b64encode(buf.read()).decode()


def _axes(figsize=(6, 4)):
    fig, ax = plt.subplots(figsize=figsize, facecolor=_BG)
    ax.set_facecolor(_BG)
    ax.tick_params(colors=_MUTED)
    ax.spines[:].set_color("#374151")
    return fig, ax


def _heatmap(report: Dict[str, np.ndarray], key: str, title: str, cmap: str) -> str:
    x, y = np.asarray(report["x"]), np.asarray(report["y"])
    n_u = len(np.unique(x))
    values = np.asarray(report[key]).reshape(n_u, -1)
    fig, ax = _axes()
    mesh = ax.pcolormesh(x.reshape(n_u, -1), y.reshape(n_u, -1), values, cmap=cmap, shading="auto")
    bar = fig.colorbar(mesh, ax=ax)
    bar.ax.tick_params(colors=_MUTED)
    ax.set_xlabel("x", color=_MUTED)
    ax.set_ylabel("y", color=_MUTED)
    ax.set_title(title, color=_FG, pad=10)
    return _encode(fig)


def chart_mean_curvature(report: Dict[str, np.ndarray]) -> str:
    return _heatmap(report, "abs_H", "|H| over the domain", "magma")


def chart_gauss_curvature(report: Dict[str, np.ndarray]) -> str:
    return _heatmap(report, "K", "Gauss curvature", "coolwarm")


def chart_spectrum(eigenvalues: Sequence[float], clusters: Sequence[Tuple[float, int]]) -> str:
    fig, ax = _axes()
    palette = ["#2563eb", "#22c55e", "#f97316", "#8b5cf6", "#ef4444", "#eab308"]
    start = 0
    for i, (_, mult) in enumerate(clusters):
        idx = np.arange(start, start + mult)
        ax.scatter(idx, np.asarray(eigenvalues)[idx], color=palette[i % len(palette)], s=24,
                   label=f"×{mult}" if mult > 1 else None)
        start += mult
    ax.set_xlabel("index", color=_MUTED)
    ax.set_ylabel("λ", color=_MUTED)
    ax.set_title("Laplace spectrum", color=_FG, pad=10)
    if any(m > 1 for _, m in clusters):
        ax.legend(facecolor=_BG, labelcolor=_FG, fontsize=8)
    return _encode(fig)


def chart_mobius_profile(profile: Sequence[Tuple[float, float]], base_area: Optional[float] = None) -> str:
    radii = np.array([r for r, _ in profile])
    areas = np.array([a for _, a in profile])
    fig, ax = _axes()
    ax.scatter(radii, areas, s=8, color="#f97316", alpha=0.6)
    if base_area is not None:
        ax.axhline(base_area, color="#22c55e", linewidth=1.5)
    ax.set_xlabel("|a|", color=_MUTED)
    ax.set_ylabel("area of γ_a∘f", color=_MUTED)
    ax.set_title("Möbius area profile", color=_FG, pad=10)
    return _encode(fig)


def render_all(geometry: Optional[Dict[str, np.ndarray]] = None, spectrum=None, conformal=None) -> Dict[str, str]:
    """Every chart the inputs allow, keyed by chart name."""
    charts: Dict[str, str] = {}
    with _chart_lock:
        if geometry is not None:
            charts["abs_H"] = chart_mean_curvature(geometry)
            charts["gauss"] = chart_gauss_curvature(geometry)
        if spectrum is not None:
            charts["spectrum"] = chart_spectrum(spectrum.eigenvalues, spectrum.clusters)
        if conformal is not None:
            charts["mobius"] = chart_mobius_profile(conformal.profile, conformal.base_area)
    return charts


def save_all(charts: Dict[str, str], directory: Union[str, Path]) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, data in charts.items():
        path = directory / f"{name}.png"
        path.write_bytes(base64.b64decode(data))
        written[name] = path
    logger.info("Wrote %d chart(s) to %s", len(written), directory)
    return written
