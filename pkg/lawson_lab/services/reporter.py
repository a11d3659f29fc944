"""
reporter.py — Writers for reports and exports.

JSON is key-sorted with 2-space indent and a trailing newline so identical
runs give identical bytes. CSV uses csv.writer with 17 significant digits.
"""

import base64
import csv
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from ..errors import DomainError
from .numerics import SpectrumResult
from .surfaces import ParamSurface
from .verifier import VerificationReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ── JSON ──────────────────────────────────────────────────────────────────────
def to_jsonable(obj: Any) -> Any:
    """numpy scalars/arrays to Python types; non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    return obj


def dumps(payload: Dict[str, Any]) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8")
    return path


def timing_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.timing.json")


def write_report(report: VerificationReport, path: PathLike) -> Path:
    """Report JSON plus the `<name>.timing.json` sidecar."""
    out = write_json(report.to_dict(), path)
    write_json(report.timing(), timing_path(out))
    logger.info("Report written to %s", out)
    return out


# ── Table ─────────────────────────────────────────────────────────────────────
def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.10g}"


def render_table(report: VerificationReport) -> str:
    header = ("claim", "computed", "target", "tol", "result", "seconds")
    rows = [(c.claim_id, _fmt(c.computed), _fmt(c.target), _fmt(c.tolerance),
             "pass" if c.passed else ("ERROR" if c.error else "FAIL"), f"{c.runtime_seconds:.1f}")
            for c in report.claims]
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    line = "  ".join("{:<%d}" % w for w in widths)
    out = [line.format(*header), line.format(*("-" * w for w in widths))]
    out += [line.format(*r) for r in rows]
    passed = sum(c.passed for c in report.claims)
    out.append("")
    out.append(f"{passed}/{len(report.claims)} claims passed, overall {'PASS' if report.overall_pass else 'FAIL'}")
    if report.aborted:
        out.append(f"Suite aborted: {report.aborted}")
    return "\n".join(out)


# ── PDF ───────────────────────────────────────────────────────────────────────
def write_pdf(report: VerificationReport, path: PathLike, charts: Optional[Dict[str, str]] = None) -> Path:
    """One-page summary; `charts` maps names to base64 PNGs appended below the claims."""
    from fpdf import FPDF, XPos, YPos

    pdf = FPDF()
    pdf.add_page()
    pdf.set_font("Helvetica", "B", 16)
    pdf.cell(0, 10, "Lawson Lab verification report", new_x=XPos.LMARGIN, new_y=YPos.NEXT)

    pdf.set_font("Helvetica", size=10)
    pdf.cell(0, 8, f"Version {report.version}   schema 1", new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    for c in report.claims:
        status = "PASS" if c.passed else "FAIL"
        pdf.cell(0, 7, f"[{status}] {c.claim_id}: computed {_fmt(c.computed)}  target {_fmt(c.target)}",
                 new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    pdf.set_font("Helvetica", "B", 12)
    pdf.cell(0, 10, f"Overall: {'PASS' if report.overall_pass else 'FAIL'}", new_x=XPos.LMARGIN, new_y=YPos.NEXT)

    tmp_files = []
    try:
        for name, data in sorted((charts or {}).items()):
            with tempfile.NamedTemporaryFile(delete=False, suffix=".png") as tmp:
                tmp.write(base64.b64decode(data))
                tmp.flush()
                tmp_files.append(tmp.name)
            pdf.image(tmp_files[-1], w=180)
    finally:
        for tmp_path in tmp_files:
            try:
                os.unlink(tmp_path)
            except OSError:
                pass

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pdf_output = pdf.output()
    path.write_bytes(pdf_output if isinstance(pdf_output, bytes) else bytes(pdf_output))
    return path


# ── CSV ───────────────────────────────────────────────────────────────────────
def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_columns(path: PathLike, columns: Dict[str, np.ndarray]) -> Path:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float).ravel() for k in names])
    return write_csv(path, names, data)


def surface_sidecar(f: ParamSurface) -> Dict[str, Any]:
    meta = {k: v for k, v in f.metadata.items() if k != "basis"}
    return {
        "name": f.name,
        "ambient": f.ambient,
        "ambient_dim": f.ambient_dim,
        "domain": f.domain.to_dict(),
        "metadata": meta,
    }


def write_surface_sample(f: ParamSurface, n: int, path: PathLike) -> Path:
    """`x,y,p1..pN` rows on an n×n grid plus `<name>.json` describing the domain."""
    U, V, P = f.sample(n, n)
    rows = np.column_stack([U.ravel(), V.ravel(), P.reshape(-1, f.ambient_dim)])
    header = ["x", "y"] + [f"p{i + 1}" for i in range(f.ambient_dim)]
    out = write_csv(path, header, rows)
    write_json(surface_sidecar(f), out.with_suffix(".json"))
    return out


# ── Spectrum / conformal payloads ─────────────────────────────────────────────
def spectrum_payload(result: SpectrumResult) -> Dict[str, Any]:
    meta = {k: v for k, v in result.metadata.items() if k not in ("seed",)}
    return {
        "schema": 1,
        "eigenvalues": result.eigenvalues,
        "clusters": [{"value": v, "multiplicity": m} for v, m in result.clusters],
        "residuals": result.residuals,
        "metadata": meta,
    }


def write_eigenfunctions(result: SpectrumResult, n_u: int, n_v: int, path: PathLike,
                         indices: Optional[List[int]] = None) -> Path:
    """Eigenfunctions as CSV columns phi0..phiK on the n_u×n_v grid (row-major in u)."""
    vecs = result.eigenvectors
    if vecs.size == 0:
        raise DomainError("Spectrum carries no eigenvectors")
    indices = indices if indices is not None else list(range(vecs.shape[1]))
    return write_columns(path, {f"phi{i}": vecs[:, i].reshape(n_u, n_v) for i in indices})


def conformal_payload(estimate, balanced, mass) -> Dict[str, Any]:
    return {
        "schema": 1,
        "sup_area": estimate.sup_area,
        "argmax": estimate.argmax,
        "base_area": estimate.base_area,
        "profile": [{"radius": r, "area": a} for r, a in estimate.profile],
        "balance": {"a": balanced.a, "trace": balanced.trace} if balanced is not None else None,
        "mass_matrix": {
            "eigenvalues": mass.eigenvalues,
            "nontrivial": mass.nontrivial_count,
            "trace": mass.trace,
        } if mass is not None else None,
    }
