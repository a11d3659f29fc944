import enum
import json
from datetime import datetime, timezone
from typing import Any, Dict

from sqlalchemy import Boolean, Column, DateTime, Enum, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from .database import Base


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class RunStatus(str, enum.Enum):
    pending = "pending"
    processing = "processing"
    completed = "completed"
    failed = "failed"


class VerificationRun(Base):
    __tablename__ = "verification_runs"

    id = Column(Integer, primary_key=True, index=True)
    status = Column(Enum(RunStatus), default=RunStatus.pending, nullable=False)
    config_json = Column(Text, default="{}")
    only = Column(String, nullable=True)          # comma-separated claim filter
    overall_pass = Column(Boolean, nullable=True)
    message = Column(String, nullable=True)
    created_at = Column(DateTime(timezone=True), default=_utcnow)
    completed_at = Column(DateTime(timezone=True), nullable=True)

    claims = relationship(
        "ClaimRecord", back_populates="run", cascade="all, delete-orphan", order_by="ClaimRecord.claim_id"
    )

    def config_dict(self) -> Dict[str, Any]:
        return json.loads(self.config_json or "{}")

    def set_config(self, data: Dict[str, Any]):
        self.config_json = json.dumps(data, sort_keys=True)

    @property
    def pass_count(self) -> int:
        return sum(1 for c in self.claims if c.passed)


class ClaimRecord(Base):
    __tablename__ = "claim_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("verification_runs.id"), nullable=False)
    claim_id = Column(String, nullable=False)
    description = Column(String, nullable=False, default="")
    anchor = Column(String, nullable=False, default="")
    computed = Column(Float, nullable=True)
    target = Column(Float, nullable=True)
    tolerance = Column(Float, nullable=True)
    passed = Column(Boolean, nullable=False, default=False)
    runtime_seconds = Column(Float, default=0.0)
    detail_json = Column(Text, default="{}")

    run = relationship("VerificationRun", back_populates="claims")

    def detail_dict(self) -> Dict[str, Any]:
        return json.loads(self.detail_json or "{}")

    def set_detail(self, data: Dict[str, Any]):
        self.detail_json = json.dumps(data, sort_keys=True)
