import argparse
import logging
import math
import sys
from datetime import datetime, timezone
from typing import List, Optional, Sequence

import numpy as np
from sqlalchemy.exc import SQLAlchemyError

from .config import LOG_LEVEL, Settings
from .database import SessionLocal, init_db
from .errors import DomainError, LabError
from .models import ClaimRecord, RunStatus, VerificationRun
from .services import charts, reporter
from .services.conformal import SurfaceSample, balance, conformal_volume_estimate, mass_matrix
from .services.geometry import MetricField, area, g0_metric, geometry_report, pullback_metric, willmore_energy
from .services.spectral import (
    PeriodicGrid,
    flat_metric,
    revolution_spectrum,
    spectrum,
    sphere_metric,
)
from .services.surfaces import EUCLIDEAN, ParamSurface, StereographicChart, compose, surface_by_name
from .services.verifier import VerificationReport, Verifier

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CLAIM_FAILED, EXIT_INFRA = 0, 1, 2


# ---------------------------------------------------------------------------
# Run processor
# ---------------------------------------------------------------------------
def _record(run: VerificationRun, report: VerificationReport) -> None:
    for c in report.claims:
        rec = ClaimRecord(
            claim_id=c.claim_id,
            description=c.description,
            anchor=c.anchor,
            computed=c.computed if c.computed is None or math.isfinite(c.computed) else None,
            target=c.target,
            tolerance=c.tolerance,
            passed=c.passed,
            runtime_seconds=c.runtime_seconds,
        )
        rec.set_detail(reporter.to_jsonable({**c.detail, **({"error": c.error} if c.error else {})}))
        run.claims.append(rec)


def process_run(run_id: int, settings: Settings, only: Optional[Sequence[str]] = None,
                parallel: bool = False) -> Optional[VerificationReport]:
    session = SessionLocal()
    try:
        run = session.get(VerificationRun, run_id)
        if not run:
            logger.warning("process_run called for unknown run_id=%d", run_id)
            return None
        run.status = RunStatus.processing
        session.commit()
        logger.info("Run %d started (only=%s, parallel=%s).", run_id, run.only or "all", parallel)

        report = Verifier(settings).run(only=only, parallel=parallel)
        report.started_at = run.created_at.isoformat() if run.created_at else None

        run = session.get(VerificationRun, run_id)
        _record(run, report)
        run.overall_pass = report.overall_pass
        run.status = RunStatus.completed
        run.completed_at = datetime.now(timezone.utc)
        run.message = None
        session.commit()
        logger.info("Run %d completed: %d/%d claims passed.", run_id,
                    sum(c.passed for c in report.claims), len(report.claims))
        return report
    except Exception as exc:
        logger.exception("Run %d failed: %s", run_id, exc)
        try:
            session.rollback()
            run = session.get(VerificationRun, run_id)
            if run:
                run.status = RunStatus.failed
                run.message = str(exc)
                session.commit()
        except Exception as inner:
            logger.error("Could not persist failure status for run %d: %s", run_id, inner)
        raise
    finally:
        session.close()


def create_run(settings: Settings, only: Optional[Sequence[str]] = None) -> int:
    init_db()
    session = SessionLocal()
    try:
        run = VerificationRun(only=",".join(only) if only else None)
        run.set_config(settings.as_dict())
        session.add(run)
        session.commit()
        session.refresh(run)
        logger.info("Created run %d.", run.id)
        return run.id
    finally:
        session.close()


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------
def _ints(params: Sequence[str]) -> List[int]:
    try:
        return [int(p) for p in params]
    except ValueError as exc:
        raise DomainError(f"Expected integer parameters, got {list(params)}") from exc


def resolve_surface(name: str, params: Sequence[str] = (), clearance: float = 0.3) -> ParamSurface:
    """Named surface; a `-stereo` suffix projects a sphere-valued one into euclidean space."""
    stereo = name.endswith("-stereo")
    base = name[: -len("-stereo")] if stereo else name
    mk = _ints(params)
    if base in ("tau", "bipolar") and len(mk) != 2:
        raise DomainError(f"{base} needs two integers m k")
    f = surface_by_name(base, *mk[:2]) if mk else surface_by_name(base)
    if stereo:
        if f.ambient == EUCLIDEAN:
            raise DomainError(f"{base} is already euclidean; drop the -stereo suffix")
        f = compose(f, StereographicChart.for_surface(f, clearance=clearance), name=f"stereo({f.name})")
    return f


def resolve_metric(name: str, params: Sequence[str] = ()) -> MetricField:
    if name == "g0":
        return g0_metric(params[0] if params else "balanced")
    if name == "flat":
        a, b = (float(p) for p in params) if len(params) == 2 else (1.0, 1.0)
        return flat_metric(a, b)
    if name == "round":
        return sphere_metric()
    return pullback_metric(resolve_surface(name, params))


def _print_clusters(clusters) -> None:
    print(f"{'value':>18}  mult")
    for value, mult in clusters:
        print(f"{value:>18.10g}  {mult}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def _report_charts(report: VerificationReport) -> dict:
    try:
        detail = report.claim("spectrum_g0").detail
    except KeyError:
        return {}
    values, clusters = detail.get("richardson"), detail.get("clusters")
    if not values or not clusters:
        return {}
    with charts._chart_lock:
        return {"spectrum": charts.chart_spectrum(values, [tuple(c) for c in clusters])}


def cmd_verify_paper(args) -> int:
    settings = Settings.from_file(args.config)
    only = args.only or None
    report: Optional[VerificationReport] = None
    try:
        if args.no_store:
            report = Verifier(settings).run(only=only, parallel=args.parallel)
            report.started_at = datetime.now(timezone.utc).isoformat()
        else:
            run_id = create_run(settings, only)
            report = process_run(run_id, settings, only=only, parallel=args.parallel)
    except Exception as exc:
        if isinstance(exc, (LabError, OSError, SQLAlchemyError)):
            logger.error("Verification aborted: %s", exc)
        else:
            logger.exception("Verification crashed: %s", exc)
        report = report or VerificationReport(claims=[], config=settings.as_dict())
        report.aborted = f"{type(exc).__name__}: {exc}"
    if report is None:
        report = VerificationReport(claims=[], config=settings.as_dict(), aborted="run record disappeared")

    print(reporter.render_table(report))
    try:
        reporter.write_report(report, args.json)
        if args.pdf:
            reporter.write_pdf(report, args.pdf, charts=_report_charts(report))
    except OSError as exc:
        logger.error("Could not write report: %s", exc)
        return EXIT_INFRA
    if report.aborted:
        return EXIT_INFRA
    return EXIT_OK if report.overall_pass else EXIT_CLAIM_FAILED


def cmd_surface(args) -> int:
    f = resolve_surface(args.name, args.params)
    out = reporter.write_surface_sample(f, args.res, args.out)
    print(f"{f.name}: {args.res}x{args.res} samples in R^{f.ambient_dim} -> {out}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    settings = Settings()
    metric = resolve_metric(args.name, args.params)
    if args.mode == "revolution":
        result = revolution_spectrum(metric, range(settings.revolution_modes), n_v=args.res * 2,
                                     count=args.count, rel_tol=settings.cluster_rel_tol)
    else:
        grid = PeriodicGrid.for_metric(metric, args.res)
        coarse = PeriodicGrid.for_metric(metric, args.res // 2) if args.richardson else None
        result = spectrum(metric, grid, count=args.count, tol=settings.eigen_tol, seed=args.seed, coarse=coarse,
                          rel_tol=settings.cluster_rel_tol)
        if args.eigenfunctions:
            reporter.write_eigenfunctions(result, grid.n_u, grid.n_v, args.eigenfunctions)
    for value in result.eigenvalues:
        print(f"{value:.12g}")
    _print_clusters(result.clusters)
    if args.json:
        reporter.write_json(reporter.spectrum_payload(result), args.json)
    if args.png:
        charts.save_all(charts.render_all(spectrum=result), args.png)
    return EXIT_OK


def cmd_willmore(args) -> int:
    f = resolve_surface(args.name, args.params)
    if f.ambient != EUCLIDEAN:
        f = resolve_surface(f"{args.name}-stereo", args.params)
    value = willmore_energy(f, args.res)
    print(f"W({f.name}) = {value:.12g}  ({value / math.pi:.10g} π)")
    if args.json:
        reporter.write_json({"schema": 1, "surface": f.name, "willmore": value, "grid": args.res}, args.json)
    return EXIT_OK


def cmd_area(args) -> int:
    target = resolve_metric(args.name, args.params)
    value = area(target, args.res, check_doubling=args.check)
    print(f"Area({target.name}) = {value:.15g}")
    if args.json:
        reporter.write_json({"schema": 1, "metric": target.name, "area": value, "grid": args.res}, args.json)
    return EXIT_OK


def cmd_conformal(args) -> int:
    settings = Settings()
    f = resolve_surface(args.name, args.params)
    sample = SurfaceSample.of(f, args.res)
    estimate = balanced = mass = None
    if args.action in ("volume", "report"):
        estimate = conformal_volume_estimate(sample, sample_budget=args.samples, seed=args.seed)
        print(f"sup area = {estimate.sup_area:.12g} at |a| = {np.linalg.norm(estimate.argmax):.3g} "
              f"(area {estimate.base_area:.12g})")
    if args.action in ("balance", "report"):
        balanced = balance(sample, tol=settings.balance_tol)
        print(f"balanced: a = {np.round(balanced.a, 12).tolist()}  |center| = {balanced.center_norm:.3e}")
    if args.action in ("mass", "report"):
        mass = mass_matrix(sample)
        print(f"mass eigenvalues: {np.array2string(mass.eigenvalues, precision=10)}  "
              f"nontrivial: {mass.nontrivial_count}")
    if args.json:
        if args.action != "report":
            raise DomainError("--json needs the 'report' action")
        reporter.write_json(reporter.conformal_payload(estimate, balanced, mass), args.json)
    if args.png:
        if estimate is None:
            raise DomainError("--png needs the 'volume' or 'report' action")
        charts.save_all(charts.render_all(conformal=estimate), args.png)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    f = resolve_surface(args.name, args.params)
    ambient = None if f.ambient == EUCLIDEAN else f.ambient
    data = geometry_report(f, args.res, ambient)
    out = reporter.write_columns(args.out, data)
    print(f"Geometry report for {f.name} -> {out}")
    if args.png:
        figures = charts.render_all(geometry=data)
        charts.save_all(figures, args.png)
    return EXIT_OK


def cmd_history(args) -> int:
    init_db()
    session = SessionLocal()
    try:
        runs = (
            session.query(VerificationRun)
            .order_by(VerificationRun.created_at.desc(), VerificationRun.id.desc())
            .limit(args.limit)
            .all()
        )
        if not runs:
            print("No verification runs recorded.")
        for run in runs:
            when = run.created_at.strftime("%Y-%m-%d %H:%M") if run.created_at else "-"
            verdict = {True: "PASS", False: "FAIL", None: "-"}[run.overall_pass]
            print(f"#{run.id:<4} {when}  {run.status.value:<10} {run.pass_count}/{len(run.claims)}  {verdict}"
                  + (f"  ({run.message})" if run.message else ""))
    finally:
        session.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lawson-lab", description="Minimal surfaces, spectra and conformal volume.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-paper", help="run the claim suite")
    p.add_argument("--config", help="KEY=VALUE settings file")
    p.add_argument("--only", nargs="+", metavar="CLAIM")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--json", default="lawson_report.json")
    p.add_argument("--pdf")
    p.add_argument("--no-store", action="store_true", help="do not record the run in the history database")
    p.set_defaults(func=cmd_verify_paper)

    def surface_args(p, res):
        p.add_argument("name")
        p.add_argument("params", nargs="*")
        p.add_argument("--res", type=int, default=res)

    p = sub.add_parser("surface", help="export a surface sample as CSV + JSON")
    surface_args(p, 64)
    p.add_argument("--out", default="surface.csv")
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("spectrum", help="Laplace spectrum of a metric or surface")
    surface_args(p, 96)
    p.add_argument("--count", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("2d", "revolution"), default="2d")
    p.add_argument("--richardson", action="store_true")
    p.add_argument("--eigenfunctions", metavar="CSV")
    p.add_argument("--json")
    p.add_argument("--png", metavar="DIR")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("willmore", help="Willmore energy (sphere-valued surfaces are projected)")
    surface_args(p, 256)
    p.add_argument("--json")
    p.set_defaults(func=cmd_willmore)

    p = sub.add_parser("area", help="area of a metric or surface")
    surface_args(p, 256)
    p.add_argument("--check", action="store_true", help="repeat at double resolution")
    p.add_argument("--json")
    p.set_defaults(func=cmd_area)

    p = sub.add_parser("conformal", help="Möbius-orbit area, balancing and mass matrix")
    p.add_argument("action", choices=("volume", "balance", "mass", "report"))
    surface_args(p, 128)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")
    p.add_argument("--png", metavar="DIR")
    p.set_defaults(func=cmd_conformal)

    p = sub.add_parser("plot-data", help="per-gridpoint det g, |H|, K as CSV (and PNG charts)")
    surface_args(p, 64)
    p.add_argument("--out", default="geometry.csv")
    p.add_argument("--png", metavar="DIR")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("history", help="list recent verification runs")
    p.add_argument("--limit", type=int, default=10)
    p.set_defaults(func=cmd_history)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LabError as exc:
        logger.error("%s", exc)
        return EXIT_INFRA
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
