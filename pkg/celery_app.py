import ssl

from celery import Celery

from config import load_settings


settings = load_settings()

CELERY_BROKER_URL = settings.redis_url or "memory://"
CELERY_RESULT_BACKEND = settings.redis_url or "cache+memory://"

celery = Celery(
    "multi_q",
    broker=CELERY_BROKER_URL,
    backend=CELERY_RESULT_BACKEND,
    include=["tasks"],
)

if settings.redis_url and settings.redis_url.startswith("rediss://"):
    celery.conf.broker_use_ssl = {
        "ssl_cert_reqs": ssl.CERT_NONE
    }
    celery.conf.redis_backend_use_ssl = {
        "ssl_cert_reqs": ssl.CERT_NONE
    }

# Without a broker every seed runs in-process, in order.
celery.conf.update(
    task_track_started=True,
    task_serializer="json",
    result_serializer="json",
    accept_content=["json"],
    task_always_eager=not bool(settings.redis_url),
    task_eager_propagates=True,
    worker_prefetch_multiplier=1,
)
