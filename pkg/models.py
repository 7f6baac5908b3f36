"""
Models for the run ledger.
"""
from datetime import datetime
from functools import lru_cache
from typing import List, Optional

from sqlalchemy import ForeignKey, Text, create_engine
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship, sessionmaker


class Base(DeclarativeBase):
    pass


class Run(Base):
    """
    One command invocation and its resolved configuration
    """
    __tablename__ = 'runs'

    id: Mapped[int] = mapped_column(primary_key=True)
    command: Mapped[str] = mapped_column(index=True)
    seed: Mapped[int] = mapped_column()
    config_json: Mapped[str] = mapped_column(Text)
    module_versions: Mapped[str] = mapped_column(Text)
    status: Mapped[str] = mapped_column(default="running")  # running, completed, failed
    classification: Mapped[Optional[str]] = mapped_column(nullable=True)
    created_at: Mapped[datetime] = mapped_column(default=datetime.utcnow)
    finished_at: Mapped[Optional[datetime]] = mapped_column(nullable=True)

    # Relationships
    steps: Mapped[List["StepRecord"]] = relationship(
        back_populates="run", order_by="StepRecord.id", cascade="all, delete-orphan"
    )

    def __repr__(self):
        return f"<Run id={self.id}, command={self.command}, status={self.status}>"


class StepRecord(Base):
    """
    Per-p record of a solve; infinite values are stored as NULL with blow_up set
    """
    __tablename__ = 'steps'

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id"), index=True)
    p: Mapped[float] = mapped_column()
    backend: Mapped[str] = mapped_column(default="radial")
    status: Mapped[str] = mapped_column(default="converged")
    iterations: Mapped[int] = mapped_column(default=0)
    residual: Mapped[Optional[float]] = mapped_column(nullable=True)
    energy: Mapped[Optional[float]] = mapped_column(nullable=True)
    l1_norm: Mapped[Optional[float]] = mapped_column(nullable=True)
    linf_norm: Mapped[Optional[float]] = mapped_column(nullable=True)
    z_inf: Mapped[Optional[float]] = mapped_column(nullable=True)
    blow_up: Mapped[bool] = mapped_column(default=False)
    created_at: Mapped[datetime] = mapped_column(default=datetime.utcnow)

    # Relationships
    run: Mapped["Run"] = relationship(back_populates="steps")

    def __repr__(self):
        return f"<StepRecord run_id={self.run_id}, p={self.p}, status={self.status}>"


@lru_cache(maxsize=None)
def get_session_factory(url: str) -> sessionmaker:
    """Engine and session factory for a ledger URL; tables are created on first use."""
    engine = create_engine(url)
    Base.metadata.create_all(bind=engine)
    return sessionmaker(autocommit=False, autoflush=False, bind=engine, expire_on_commit=False)
