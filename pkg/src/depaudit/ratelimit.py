"""Token-bucket rate limiting for outbound index queries."""

from __future__ import annotations

import threading
import time


class TokenBucket:
    """Blocking token bucket; capacity 1 yields evenly spaced requests.

    The clock and sleep functions are injectable so tests can drive the
    bucket with virtual time.
    """

    def __init__(
        self,
        rate_per_minute: float = 120.0,
        capacity: float = 1.0,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        if rate_per_minute <= 0:
            raise ValueError("rate_per_minute must be positive")
        if capacity < 1.0:
            raise ValueError("capacity below one token can never fill a request")
        self.rate = rate_per_minute / 60.0
        self.capacity = float(capacity)
        self._tokens = float(capacity)
        self._clock = clock
        self._sleep = sleep
        self._updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Take one token, sleeping until one is available; returns wait time."""
        waited = 0.0
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(
                    self.capacity, self._tokens + (now - self._updated) * self.rate
                )
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return waited
                shortfall = (1.0 - self._tokens) / self.rate
            self._sleep(shortfall)
            waited += shortfall
