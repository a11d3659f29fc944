import sys
from pathlib import Path

import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from lawson_lab import database, main
from lawson_lab.services.surfaces import lawson_bipolar, lawson_tau


@pytest.fixture()
def db_session(monkeypatch):
    """In-memory run store shared by process_run, create_run and `history`."""
    engine = create_engine("sqlite:///:memory:", connect_args={"check_same_thread": False})
    database.Base.metadata.create_all(bind=engine)
    RunStore = sessionmaker(autocommit=False, autoflush=False, bind=engine)

    monkeypatch.setattr(database, "engine", engine)
    monkeypatch.setattr(database, "SessionLocal", RunStore)
    monkeypatch.setattr(main, "SessionLocal", RunStore)
    monkeypatch.setattr(main, "init_db", lambda bind=None: None)

    session = RunStore()
    yield session
    session.close()
    engine.dispose()

# ── Shared surfaces (detection and span reduction are the slow part) ─────────

@pytest.fixture(scope="session")
def tau31():
    return lawson_tau(3, 1)


@pytest.fixture(scope="session")
def bipolar31():
    return lawson_bipolar(3, 1)


@pytest.fixture(scope="session")
def bipolar31_full():
    return lawson_bipolar(3, 1, reduce=False)
