"""Read-only access to training runs under a runs root directory."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from pydantic import ValidationError

from disent_toolkit.models.schemas import MetricReport, RunRecord, RunSummary, TraversalStats
from disent_toolkit.services.config_loader import RESOLVED_NAME
from disent_toolkit.services.evaluation import REPORT_NAME
from disent_toolkit.services.trainer import RUN_LOG
from disent_toolkit.services.traversal import STATS_NAME, TRAVERSAL_DIR

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = frozenset({".pgm", ".png"})


def _safe_name(name: str) -> bool:
    return bool(name) and "/" not in name and "\\" not in name and ".." not in name and name not in (".", "..")


class RunStore:
    """Service for discovering runs and reading their logs, reports and images.

    A run is any direct child directory of ``root`` holding a resolved config.
    Names are single path components; anything else is rejected.
    """

    def __init__(self, root: Path) -> None:
        self.root = root

    def run_dir(self, name: str) -> Path | None:
        """Directory of run ``name``, or None if it is not a valid run.

        Raises:
            ValueError: If ``name`` is not a plain directory name.
        """
        if not _safe_name(name):
            raise ValueError(f"Invalid run name: {name}")
        path = self.root / name
        if not (path / RESOLVED_NAME).is_file():
            return None
        return path

    def summarize(self, path: Path) -> RunSummary:
        loss_terms: list[str] = []
        try:
            config = json.loads((path / RESOLVED_NAME).read_text(encoding="utf-8"))
            loss_terms = list(config.get("loss_terms", []))
        except (json.JSONDecodeError, OSError) as e:
            logger.warning("Unreadable config in run %s: %s", path.name, e)
        records = self.read_log(path.name, tail=1) or []
        return RunSummary(
            name=path.name,
            last_iter=records[-1].iter if records else None,
            has_report=(path / REPORT_NAME).is_file(),
            has_traversal=(path / TRAVERSAL_DIR / STATS_NAME).is_file(),
            loss_terms=loss_terms,
        )

    def list_runs(self) -> list[RunSummary]:
        if not self.root.is_dir():
            logger.debug("Runs root does not exist: %s", self.root)
            return []
        runs = [
            self.summarize(child)
            for child in sorted(self.root.iterdir())
            if child.is_dir() and (child / RESOLVED_NAME).is_file()
        ]
        return runs

    def read_log(self, name: str, tail: int | None = None) -> list[RunRecord] | None:
        """RunLog records of ``name`` (the last ``tail`` if given); None if the run is unknown.

        Malformed lines are skipped with a warning.
        """
        path = self.run_dir(name)
        if path is None:
            return None
        log_path = path / RUN_LOG
        if not log_path.is_file():
            return []
        lines = [line for line in log_path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if tail is not None:
            lines = lines[-tail:] if tail > 0 else []
        records = []
        for line in lines:
            try:
                records.append(RunRecord.model_validate_json(line))
            except ValidationError as e:
                logger.warning("Skipping malformed RunLog line in %s: %s", name, e)
        return records

    def read_report(self, name: str) -> MetricReport | None:
        path = self.run_dir(name)
        if path is None or not (path / REPORT_NAME).is_file():
            return None
        return MetricReport.model_validate_json((path / REPORT_NAME).read_text(encoding="utf-8"))

    def read_traversal(self, name: str) -> TraversalStats | None:
        path = self.run_dir(name)
        if path is None or not (path / TRAVERSAL_DIR / STATS_NAME).is_file():
            return None
        return TraversalStats.model_validate_json((path / TRAVERSAL_DIR / STATS_NAME).read_text(encoding="utf-8"))

    def image_path(self, name: str, filename: str) -> Path | None:
        """Exported image inside the run's traversal directory.

        Raises:
            ValueError: If either name is not a plain file name or the suffix is not an image.
        """
        if not _safe_name(filename):
            raise ValueError(f"Invalid filename: {filename}")
        if Path(filename).suffix.lower() not in IMAGE_SUFFIXES:
            raise ValueError(f"Not an image file: {filename}")
        path = self.run_dir(name)
        if path is None:
            return None
        image = path / TRAVERSAL_DIR / filename
        return image if image.is_file() else None
