"""Minimal JSON-over-HTTP client shared by the remote encoder and LLM backends."""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request

from .errors import TransportError

log = logging.getLogger(__name__)


class JsonClient:
    def __init__(self, base_url: str, *, timeout: float = 10.0, max_in_flight: int = 4, retries: int = 2, backoff: float = 0.1):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        body = json.dumps(payload).encode("utf-8")
        attempts = 0
        last: Exception | None = None
        status = None
        while attempts <= self.retries:
            attempts += 1
            req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
            try:
                with self._slots:
                    with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                        raw = resp.read()
                return json.loads(raw.decode("utf-8"))
            except urllib.error.HTTPError as exc:
                last, status = exc, exc.code
                if exc.code < 500:
                    raise TransportError(f"POST {url} -> HTTP {exc.code}", url=url, attempts=attempts, retryable=False, status=exc.code) from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                last = exc
            except json.JSONDecodeError as exc:
                raise TransportError(f"POST {url} returned invalid JSON", url=url, attempts=attempts, retryable=False) from exc
            log.debug("POST %s failed (attempt %d): %s", url, attempts, last)
            if attempts <= self.retries:
                time.sleep(self.backoff * attempts)
        raise TransportError(f"POST {url} failed after {attempts} attempt(s): {last}", url=url, attempts=attempts, retryable=True, status=status)
