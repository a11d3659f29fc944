import csv
import json

import numpy as np
import pytest

from lawson_lab import main
from lawson_lab.config import Settings
from lawson_lab.errors import ConfigError, DomainError
from lawson_lab.models import ClaimRecord, RunStatus, VerificationRun
from lawson_lab.services import reporter
from lawson_lab.services.verifier import (
    CLAIMS,
    Claim,
    ClaimResult,
    VerificationReport,
    Verifier,
    run_claim,
    select_claims,
)


# ── Stub verifier ─────────────────────────────────────────────────────────────

def _claim_result(claim_id, passed=True, runtime=0.25, detail=None):
    return ClaimResult(
        claim_id=claim_id,
        description=f"stub claim {claim_id}",
        anchor="stub",
        computed=2.0 if passed else 2.5,
        target=2.0,
        tolerance=1e-9,
        passed=passed,
        runtime_seconds=runtime,
        detail=detail or {"note": "stub"},
    )


def make_stub_verifier(passed=True, runtime=0.25, detail=None):
    class StubVerifier:
        def __init__(self, settings=None):
            self.settings = settings or Settings()

        def run(self, only=None, parallel=False):
            ids = sorted(only) if only else ["area_g0", "spectrum_g0"]
            claims = [_claim_result(cid, passed, runtime, detail) for cid in ids]
            return VerificationReport(claims=claims, config=self.settings.as_dict())

    return StubVerifier


class BrokenVerifier:
    def __init__(self, settings=None):
        pass

    def run(self, only=None, parallel=False):
        raise RuntimeError("Simulated solver crash")


class AbortingVerifier(BrokenVerifier):
    def run(self, only=None, parallel=False):
        raise DomainError("Simulated bad input")


class SingularVerifier(BrokenVerifier):
    def run(self, only=None, parallel=False):
        raise np.linalg.LinAlgError("Singular mass matrix")


@pytest.fixture()
def stub_verifier():
    original = main.Verifier
    yield lambda cls: setattr(main, "Verifier", cls)
    main.Verifier = original


# ── Run processing ────────────────────────────────────────────────────────────

def test_process_run_records_claims(db_session, stub_verifier):
    stub_verifier(make_stub_verifier())
    run = VerificationRun()
    db_session.add(run)
    db_session.commit()
    db_session.refresh(run)

    report = main.process_run(run.id, Settings())

    db_session.expire_all()
    refreshed = db_session.get(VerificationRun, run.id)
    assert refreshed.status == RunStatus.completed
    assert refreshed.overall_pass is True
    assert refreshed.completed_at is not None
    assert [c.claim_id for c in refreshed.claims] == ["area_g0", "spectrum_g0"]
    assert refreshed.pass_count == 2
    assert refreshed.claims[0].detail_dict() == {"note": "stub"}
    assert report.started_at is not None


def test_process_run_marks_failed_on_verifier_error(db_session, stub_verifier):
    stub_verifier(BrokenVerifier)
    run = VerificationRun()
    db_session.add(run)
    db_session.commit()
    db_session.refresh(run)

    with pytest.raises(RuntimeError):
        main.process_run(run.id, Settings())

    db_session.expire_all()
    refreshed = db_session.get(VerificationRun, run.id)
    assert refreshed.status == RunStatus.failed
    assert "Simulated solver crash" in (refreshed.message or "")
    assert db_session.query(ClaimRecord).count() == 0


def test_process_run_unknown_id(db_session):
    assert main.process_run(999, Settings()) is None


def test_create_run_stores_config_and_filter(db_session):
    run_id = main.create_run(Settings(grid=64), only=["area_g0", "takahashi"])
    run = db_session.get(VerificationRun, run_id)
    assert run.status == RunStatus.pending
    assert run.only == "area_g0,takahashi"
    assert run.config_dict()["grid"] == 64


# ── verify-paper ──────────────────────────────────────────────────────────────

def test_verify_paper_exit_ok(tmp_path, db_session, stub_verifier, capsys):
    stub_verifier(make_stub_verifier())
    out = tmp_path / "report.json"
    assert main.main(["verify-paper", "--no-store", "--json", str(out)]) == main.EXIT_OK
    data = json.loads(out.read_text())
    assert data["overall_pass"] is True
    assert data["schema"] == 1
    assert reporter.timing_path(out).exists()
    assert "2/2 claims passed, overall PASS" in capsys.readouterr().out


def test_verify_paper_exit_claim_failed(tmp_path, db_session, stub_verifier):
    stub_verifier(make_stub_verifier(passed=False))
    out = tmp_path / "report.json"
    assert main.main(["verify-paper", "--no-store", "--json", str(out)]) == main.EXIT_CLAIM_FAILED
    assert json.loads(out.read_text())["overall_pass"] is False


def test_verify_paper_exit_infra_on_abort(tmp_path, db_session, stub_verifier):
    stub_verifier(AbortingVerifier)
    out = tmp_path / "report.json"
    assert main.main(["verify-paper", "--no-store", "--json", str(out)]) == main.EXIT_INFRA
    data = json.loads(out.read_text())
    assert data["overall_pass"] is False
    assert "Simulated bad input" in data["aborted"]


def test_verify_paper_records_unexpected_crash(tmp_path, db_session, stub_verifier):
    stub_verifier(SingularVerifier)
    out = tmp_path / "report.json"
    assert main.main(["verify-paper", "--json", str(out)]) == main.EXIT_INFRA
    data = json.loads(out.read_text())
    assert data["overall_pass"] is False
    assert data["aborted"].startswith("LinAlgError")
    run = db_session.query(VerificationRun).one()
    assert run.status == RunStatus.failed
    assert "Singular mass matrix" in run.message


def test_verify_paper_unknown_claim(tmp_path, db_session):
    out = tmp_path / "report.json"
    assert main.main(["verify-paper", "--no-store", "--only", "bogus", "--json", str(out)]) == main.EXIT_INFRA
    assert "bogus" in json.loads(out.read_text())["aborted"]


def test_verify_paper_bad_config(tmp_path, db_session):
    cfg = tmp_path / "lab.env"
    cfg.write_text("GRID=64\nNOT_A_KEY=1\n")
    assert main.main(["verify-paper", "--no-store", "--config", str(cfg),
                      "--json", str(tmp_path / "r.json")]) == main.EXIT_INFRA


def test_verify_paper_stores_run_and_history(tmp_path, db_session, stub_verifier, capsys):
    stub_verifier(make_stub_verifier())
    assert main.main(["verify-paper", "--only", "area_g0", "--json", str(tmp_path / "r.json")]) == main.EXIT_OK
    run = db_session.query(VerificationRun).one()
    assert run.status == RunStatus.completed
    assert run.only == "area_g0"
    capsys.readouterr()

    assert main.main(["history"]) == main.EXIT_OK
    out = capsys.readouterr().out
    assert f"#{run.id}" in out
    assert "1/1" in out and "PASS" in out


def test_history_empty(db_session, capsys):
    assert main.main(["history"]) == main.EXIT_OK
    assert "No verification runs recorded." in capsys.readouterr().out


def test_verify_paper_pdf_with_spectrum_chart(tmp_path, db_session, stub_verifier):
    detail = {"richardson": [0.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.4], "clusters": [[0.0, 1], [2.0, 5], [2.4, 1]]}
    stub_verifier(make_stub_verifier(detail=detail))
    pdf = tmp_path / "report.pdf"
    code = main.main(["verify-paper", "--no-store", "--json", str(tmp_path / "r.json"), "--pdf", str(pdf)])
    assert code == main.EXIT_OK
    assert pdf.read_bytes().startswith(b"%PDF")


# ── Report format ─────────────────────────────────────────────────────────────

def test_report_json_reproducible(tmp_path):
    config = Settings().as_dict()
    first = VerificationReport(claims=[_claim_result("b", runtime=1.0), _claim_result("a", runtime=2.0)],
                               config=config, started_at="2024-01-01T00:00:00")
    second = VerificationReport(claims=[_claim_result("a", runtime=9.0), _claim_result("b", runtime=0.1)],
                                config=config, started_at="2025-06-01T12:00:00")
    p1 = reporter.write_report(first, tmp_path / "one.json")
    p2 = reporter.write_report(second, tmp_path / "two.json")
    assert p1.read_bytes() == p2.read_bytes()
    text = p1.read_text()
    assert text.endswith("\n")
    assert [c["id"] for c in json.loads(text)["claims"]] == ["a", "b"]
    timing = json.loads((tmp_path / "one.timing.json").read_text())
    assert timing["runtime_seconds"] == {"a": 2.0, "b": 1.0}


def test_non_finite_values_become_strings():
    assert reporter.to_jsonable({"x": float("nan"), "y": [float("inf"), 1.5]}) == {"x": "nan", "y": ["inf", 1.5]}


def test_empty_report_does_not_pass():
    assert not VerificationReport(claims=[], config={}).overall_pass


def test_csv_uses_seventeen_digits(tmp_path):
    path = reporter.write_csv(tmp_path / "v.csv", ["value"], [[0.1]])
    assert path.read_text().splitlines()[1] == "0.10000000000000001"


# ── Claim registry ────────────────────────────────────────────────────────────

def test_registry_has_all_claims():
    assert set(CLAIMS) == {
        "willmore_tau31", "area_g0", "spectrum_g0", "minimality", "rank_dichotomy", "takahashi",
        "clifford_calibration", "conformal_maximality", "mass_matrix_tau31", "extremality_g0",
        "oracle_equivalences",
    }


def test_select_claims_rejects_unknown():
    with pytest.raises(DomainError):
        select_claims(["area_g0", "nope"])


def test_run_claim_captures_crash():
    def explode(settings):
        raise ZeroDivisionError("boom")

    result = run_claim(Claim("explode", "always crashes", "none", explode), Settings())
    assert not result.passed
    assert result.computed is None
    assert result.error == "ZeroDivisionError: boom"
    assert result.to_dict()["error"] == "ZeroDivisionError: boom"


def test_rank_dichotomy_claim_passes():
    report = Verifier(Settings()).run(only=["rank_dichotomy"])
    result = report.claim("rank_dichotomy")
    assert result.passed, result.detail
    assert result.detail["ranks"] == {"3_1": 5, "1_1": 4}


# ── Settings ──────────────────────────────────────────────────────────────────

def test_settings_from_file(tmp_path):
    cfg = tmp_path / "lab.env"
    cfg.write_text("GRID=128\nEIGEN_TOL=1e-10\nTAKAHASHI_GRIDS=64,128,256\n")
    settings = Settings.from_file(cfg)
    assert settings.grid == 128
    assert settings.eigen_tol == 1e-10
    assert settings.takahashi_levels() == [64, 128, 256]
    assert settings.spectrum_grid == Settings().spectrum_grid


def test_settings_reject_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        Settings.from_mapping({"grid": "many"})
    with pytest.raises(ConfigError):
        Settings.from_mapping({"colour": "blue"})
    with pytest.raises(ConfigError):
        Settings.from_file(tmp_path / "missing.env")


# ── Other commands ────────────────────────────────────────────────────────────

def test_surface_command_writes_grid(tmp_path, capsys):
    out = tmp_path / "clifford.csv"
    assert main.main(["surface", "tau", "1", "1", "--res", "4", "--out", str(out)]) == main.EXIT_OK
    with out.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "p1", "p2", "p3", "p4"]
    assert len(rows) == 17
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert sidecar["ambient_dim"] == 4
    assert "basis" not in sidecar["metadata"]


def test_surface_command_rejects_common_factor(tmp_path):
    assert main.main(["surface", "tau", "2", "2", "--out", str(tmp_path / "x.csv")]) == main.EXIT_INFRA


def test_spectrum_command_json(tmp_path, capsys):
    out = tmp_path / "flat.json"
    assert main.main(["spectrum", "flat", "--res", "16", "--count", "5", "--json", str(out)]) == main.EXIT_OK
    data = json.loads(out.read_text())
    assert len(data["eigenvalues"]) == 5
    assert data["clusters"][1]["multiplicity"] == 4


def test_spectrum_command_writes_chart(tmp_path):
    png = tmp_path / "charts"
    assert main.main(["spectrum", "flat", "--res", "16", "--count", "5", "--png", str(png)]) == main.EXIT_OK
    assert (png / "spectrum.png").read_bytes().startswith(b"\x89PNG")


def test_area_command(capsys):
    assert main.main(["area", "g0", "rect", "--res", "64"]) == main.EXIT_OK
    assert "Area(g0_rect)" in capsys.readouterr().out


def test_conformal_json_requires_report_action(tmp_path):
    code = main.main(["conformal", "mass", "clifford", "--res", "32", "--json", str(tmp_path / "c.json")])
    assert code == main.EXIT_INFRA


def test_conformal_volume_writes_mobius_profile(tmp_path):
    png = tmp_path / "charts"
    code = main.main(["conformal", "volume", "clifford", "--res", "32", "--samples", "100", "--png", str(png)])
    assert code == main.EXIT_OK
    assert (png / "mobius.png").read_bytes().startswith(b"\x89PNG")


def test_conformal_png_requires_profile(tmp_path):
    code = main.main(["conformal", "mass", "clifford", "--res", "32", "--png", str(tmp_path / "charts")])
    assert code == main.EXIT_INFRA
    assert not (tmp_path / "charts").exists()


def test_plot_data_writes_csv_and_charts(tmp_path):
    out = tmp_path / "geometry.csv"
    png = tmp_path / "charts"
    assert main.main(["plot-data", "sphere", "--res", "16", "--out", str(out), "--png", str(png)]) == main.EXIT_OK
    with out.open() as fh:
        assert next(csv.reader(fh)) == ["x", "y", "det_g", "abs_H", "K"]
    assert (png / "abs_H.png").read_bytes().startswith(b"\x89PNG")
    assert (png / "gauss.png").exists()
