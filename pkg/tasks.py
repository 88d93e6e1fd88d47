import logging
import time

from celery_app import celery
from harness import run_single
from schemas import ExperimentConfig

logger = logging.getLogger(__name__)


@celery.task(bind=True, name="multi_q.run_seed")
def run_seed(self, config: dict[str, object], seed: int) -> dict[str, object]:
    """Run one seed of an experiment and return its record as JSON-ready data."""
    started_at = time.perf_counter()
    try:
        record = run_single(ExperimentConfig.model_validate(config), seed)
    except Exception:
        logger.exception("Seed %s failed during task execution", seed)
        raise
    logger.info(
        "Seed %s finished with status %s in %d ms",
        seed,
        record.status,
        int((time.perf_counter() - started_at) * 1000),
    )
    return record.model_dump(mode="json")
