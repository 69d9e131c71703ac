"""HTTP plumbing shared by the classifier, scorer and caption clients."""
from __future__ import annotations

import base64
import threading
import time
from typing import Any, Callable, Optional, Sequence

import httpx
import numpy as np


class ServiceError(Exception):
    pass


class ServiceUnavailable(ServiceError):
    pass


class MalformedResponse(ServiceError):
    pass


class RateLimiter:
    """Token bucket shared across threads; ``rps <= 0`` disables it."""

    def __init__(self, rps: float = 0.0, burst: int = 1, clock=time.monotonic, sleep=time.sleep):
        self.rps = float(rps)
        self.burst = max(1, burst)
        self._tokens = float(self.burst)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a request may go out; returns seconds waited."""
        if self.rps <= 0:
            return 0.0
        with self._lock:
            now = self._clock()
            self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rps)
            self._last = now
            wait = 0.0
            if self._tokens < 1.0:
                wait = (1.0 - self._tokens) / self.rps
                self._sleep(wait)
                self._last = self._clock()
                self._tokens = 1.0
            self._tokens -= 1.0
            return wait


class ServiceClient:
    """JSON-over-HTTP POST client with retries and a shared rate limiter.

    The underlying ``httpx.Client`` is created lazily, so instances can be
    pickled into worker processes (each process gets its own pool).
    """

    def __init__(self, url: str, *, timeout_s: float = 30.0, attempts: int = 1,
                 backoff_s: Sequence[float] = (1.0, 4.0, 16.0), rps_limit: float = 0.0,
                 fallback: bool = True, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.url = url
        self.timeout_s = timeout_s
        self.attempts = max(1, attempts)
        self.backoff_s = tuple(backoff_s)
        self.fallback = fallback
        self.transport = transport
        self.sleep = sleep
        self.limiter = RateLimiter(rps_limit, sleep=sleep)
        self._client: Optional[httpx.Client] = None
        self._lock = threading.Lock()
        self.last_attempts = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_client"] = None
        state["_lock"] = None
        state["limiter"] = (self.limiter.rps,)
        state["sleep"] = None if self.sleep is time.sleep else self.sleep
        return state

    def __setstate__(self, state):
        rps = state.pop("limiter")[0]
        self.__dict__.update(state)
        if self.sleep is None:
            self.sleep = time.sleep
        self._lock = threading.Lock()
        self.limiter = RateLimiter(rps, sleep=self.sleep)

    @property
    def client(self) -> httpx.Client:
        with self._lock:
            if self._client is None:
                self._client = httpx.Client(timeout=self.timeout_s, transport=self.transport)
            return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None

    def post_json(self, payload: dict) -> dict:
        last: Exception | None = None
        for attempt in range(1, self.attempts + 1):
            self.last_attempts = attempt
            self.limiter.acquire()
            try:
                resp = self.client.post(self.url, json=payload)
            except httpx.TransportError as e:  # timeouts, refused connections
                last = e
            else:
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = ServiceUnavailable(f"HTTP {resp.status_code} from {self.url}")
                elif resp.status_code >= 400:
                    raise ServiceUnavailable(f"HTTP {resp.status_code} from {self.url}")
                else:
                    try:
                        body = resp.json()
                    except ValueError as e:
                        raise MalformedResponse(f"non-JSON body from {self.url}") from e
                    if not isinstance(body, dict):
                        raise MalformedResponse("response body is not a JSON object")
                    return body
            if attempt < self.attempts:
                self.sleep(self.backoff_s[min(attempt - 1, len(self.backoff_s) - 1)])
        raise ServiceUnavailable(f"{self.url} failed after {self.attempts} attempt(s): {last}")


def encode_frames(frames, color: bool = False) -> dict[str, Any]:
    """Frame-set payload: count, dimensions and base64 8-bit planes."""
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to encode")
    planes = []
    for fb in frames:
        if color:
            arr = fb.rgb if fb.rgb is not None else np.repeat(fb.luma[..., None], 3, axis=2)
        else:
            arr = fb.luma
        planes.append(base64.b64encode(np.ascontiguousarray(arr, dtype=np.uint8).tobytes()).decode("ascii"))
    return {
        "count": len(frames),
        "width": frames[0].width,
        "height": frames[0].height,
        "channels": 3 if color else 1,
        "format": "rgb24" if color else "gray8",
        "frame_indices": [fb.index for fb in frames],
        "frames": planes,
    }


def decode_frames(payload: dict) -> list[np.ndarray]:
    h, w, c = payload["height"], payload["width"], payload.get("channels", 1)
    shape = (h, w, 3) if c == 3 else (h, w)
    return [np.frombuffer(base64.b64decode(s), np.uint8).reshape(shape) for s in payload["frames"]]
