"""Token bucket behavior under a virtual clock."""

import pytest

from depaudit.ratelimit import TokenBucket


class VirtualClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t

    def sleep(self, seconds):
        assert seconds >= 0
        self.t += seconds


def test_capacity_one_spaces_requests_evenly():
    clock = VirtualClock()
    bucket = TokenBucket(rate_per_minute=10, clock=clock, sleep=clock.sleep)
    stamps = []
    for _ in range(5):
        bucket.acquire()
        stamps.append(clock.t)
    assert stamps == [0.0, 6.0, 12.0, 18.0, 24.0]


def test_first_token_is_free():
    clock = VirtualClock()
    bucket = TokenBucket(rate_per_minute=1, clock=clock, sleep=clock.sleep)
    assert bucket.acquire() == 0.0
    assert clock.t == 0.0


def test_burst_capacity_then_steady_rate():
    clock = VirtualClock()
    bucket = TokenBucket(rate_per_minute=60, capacity=3, clock=clock,
                         sleep=clock.sleep)
    stamps = []
    for _ in range(5):
        bucket.acquire()
        stamps.append(clock.t)
    assert stamps == [0.0, 0.0, 0.0, 1.0, 2.0]


def test_idle_time_refills_up_to_capacity():
    clock = VirtualClock()
    bucket = TokenBucket(rate_per_minute=60, capacity=2, clock=clock,
                         sleep=clock.sleep)
    bucket.acquire()
    bucket.acquire()
    clock.t += 100.0  # refill saturates at capacity, not rate * idle
    bucket.acquire()
    bucket.acquire()
    start = clock.t
    bucket.acquire()
    assert clock.t == pytest.approx(start + 1.0)


def test_rejects_bad_parameters():
    with pytest.raises(ValueError):
        TokenBucket(rate_per_minute=0)
    with pytest.raises(ValueError):
        TokenBucket(rate_per_minute=10, capacity=0.5)
