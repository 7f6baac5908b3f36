"""
Database service for the run ledger.
Records command invocations and their per-p steps; the ledger never interrupts a numerical run.
"""

import json
import logging
import math
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, List, Optional

from sqlalchemy import select

from config import MODULE_VERSIONS, RUN_LEDGER_URL, USE_RUN_LEDGER
from models import Run, StepRecord, get_session_factory

logger = logging.getLogger(__name__)


@contextmanager
def session_scope(url: str = RUN_LEDGER_URL):
    """Provide a transactional scope around a series of operations."""
    session = get_session_factory(url)()
    try:
        yield session
        session.commit()
    except Exception as e:
        session.rollback()
        logger.error(f"Database error: {e}")
        raise
    finally:
        session.close()


def _finite_or_none(value) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


class RunLedgerService:
    """Service for storing and retrieving runs from the database."""

    def __init__(self, url: str = RUN_LEDGER_URL):
        self.url = url
        get_session_factory(url)
        logger.info(f"Run ledger initialized at {url}")

    def start_run(self, command: str, config: Dict[str, Any], seed: int) -> int:
        """
        Open a run record.

        Args:
            command: CLI command name
            config: Resolved configuration
            seed: Random seed of the run

        Returns:
            Run id
        """
        with session_scope(self.url) as session:
            run = Run(
                command=command,
                seed=seed,
                config_json=json.dumps(config, sort_keys=True, default=str),
                module_versions=json.dumps(MODULE_VERSIONS, sort_keys=True),
            )
            session.add(run)
            session.flush()
            return run.id

    def record_step(self, run_id: int, report) -> int:
        """Store one SolveReport summary under a run."""
        summary = report.summary()
        blow_up = report.status == "blow-up" or not math.isfinite(summary["linf_norm"])
        with session_scope(self.url) as session:
            step = StepRecord(
                run_id=run_id,
                p=report.p,
                backend=report.backend,
                status=report.status,
                iterations=report.iterations,
                residual=_finite_or_none(summary["residual"]),
                energy=_finite_or_none(summary["energy"]),
                l1_norm=_finite_or_none(summary["l1_norm"]),
                linf_norm=_finite_or_none(summary["linf_norm"]),
                z_inf=_finite_or_none(summary["z_inf"]),
                blow_up=blow_up,
            )
            session.add(step)
            session.flush()
            return step.id

    def finish_run(self, run_id: int, status: str, classification: Optional[str] = None):
        with session_scope(self.url) as session:
            run = session.get(Run, run_id)
            if run is None:
                logger.warning(f"Run {run_id} not found in the ledger")
                return
            run.status = status
            run.classification = classification
            run.finished_at = datetime.utcnow()

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        """
        Fetch a run with its steps.

        Args:
            run_id: Run id

        Returns:
            Run properties and step rows, or None
        """
        with session_scope(self.url) as session:
            run = session.get(Run, run_id)
            if run is None:
                return None
            return {
                "id": run.id,
                "command": run.command,
                "seed": run.seed,
                "status": run.status,
                "classification": run.classification,
                "config": json.loads(run.config_json),
                "module_versions": json.loads(run.module_versions),
                "steps": [
                    {
                        "p": step.p,
                        "status": step.status,
                        "iterations": step.iterations,
                        "energy": step.energy,
                        "l1_norm": step.l1_norm,
                        "linf_norm": step.linf_norm,
                        "z_inf": step.z_inf,
                        "blow_up": step.blow_up,
                    }
                    for step in run.steps
                ],
            }

    def list_runs(self, command: Optional[str] = None, limit: int = 20) -> List[Dict[str, Any]]:
        with session_scope(self.url) as session:
            query = select(Run).order_by(Run.id.desc()).limit(limit)
            if command:
                query = query.where(Run.command == command)
            return [
                {"id": run.id, "command": run.command, "status": run.status, "created_at": run.created_at.isoformat()}
                for run in session.scalars(query)
            ]


class RunLedger:
    """
    Ledger front end used by the commands.
    Falls back to a no-op when the ledger is disabled or the database is unreachable.
    """

    def __init__(self, enabled: bool = USE_RUN_LEDGER, url: str = RUN_LEDGER_URL):
        self.service = None
        if enabled:
            try:
                self.service = RunLedgerService(url)
            except Exception as e:
                logger.error(f"Failed to initialize the run ledger: {e}")
                logger.warning("Continuing without a run ledger")
        else:
            logger.info("Run ledger disabled")

    @property
    def enabled(self) -> bool:
        return self.service is not None

    def _call(self, name: str, *args, **kwargs):
        if self.service is None:
            return None
        try:
            return getattr(self.service, name)(*args, **kwargs)
        except Exception as e:
            logger.error(f"Run ledger {name} failed: {e}")
            return None

    def start_run(self, command: str, config: Dict[str, Any], seed: int) -> Optional[int]:
        return self._call("start_run", command, config, seed)

    def record_step(self, run_id: Optional[int], report):
        if run_id is not None:
            self._call("record_step", run_id, report)

    def record_steps(self, run_id: Optional[int], reports):
        for report in reports:
            self.record_step(run_id, report)

    def finish_run(self, run_id: Optional[int], status: str, classification: Optional[str] = None):
        if run_id is not None:
            self._call("finish_run", run_id, status, classification)
