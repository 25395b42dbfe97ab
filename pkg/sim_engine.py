# -*- coding: utf-8 -*-
"""
Simulation Engine Module.

Deterministic discrete-event core used by every scenario run. Time is an
integer count of microseconds since the start of the run. The event calendar
is a simpy `Environment`; simpy orders events by (time, priority, insertion
id), which gives the (fire_at, seq) total order required here as long as all
actions are scheduled with the same priority.

Randomness comes from `Rng`, a seeded numpy generator. A scenario draws all
of its random values from one `Rng` built from its seed, before the run starts,
so the event loop itself is free of randomness.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Generator

import numpy as np
import simpy

logger = logging.getLogger(__name__)

SimTime = int  # microseconds since simulation start


class SimulationError(Exception):
    """Base class for engine errors."""


class PastTime(SimulationError):
    """Raised when an event is scheduled before the current clock."""


class BadRange(SimulationError):
    """Raised when a random draw is requested over an empty range."""


@dataclass
class EventHandle:
    """Reference to a scheduled action; lets the owner cancel it before it fires."""
    fire_at: SimTime
    seq: int
    cancelled: bool = field(default=False, compare=False)

    def cancel(self):
        self.cancelled = True


class Rng:
    """Seeded random source. The same seed always yields the same draw sequence."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._generator = np.random.default_rng(self.seed)

    def uniform(self, lo: SimTime, hi: SimTime) -> SimTime:
        """
        Draws an integer time uniformly from the closed interval [lo, hi].

        Raises:
            BadRange: if lo > hi.
        """
        if lo > hi:
            raise BadRange(f"Empty range: lo={lo} > hi={hi}")
        if lo == hi:
            return lo
        return int(self._generator.integers(lo, hi, endpoint=True))


class SimEngine:
    """Virtual clock plus event calendar for a single scenario run."""

    def __init__(self):
        self.env = simpy.Environment(initial_time=0)
        self._seq = itertools.count()
        self._executed = 0

    @property
    def now(self) -> SimTime:
        return int(self.env.now)

    def schedule(self, fire_at: SimTime, action: Callable[[], None]) -> EventHandle:
        """
        Schedules `action` to run exactly once when the clock reaches `fire_at`.

        Actions scheduled for the same instant run in insertion order.

        Args:
            fire_at (SimTime): Absolute firing time in microseconds.
            action (Callable): Zero-argument handler.

        Returns:
            EventHandle: Handle that can cancel the action before it runs.

        Raises:
            PastTime: if fire_at is earlier than the current clock.
        """
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise PastTime(f"Cannot schedule at t={fire_at} us, clock is at {self.now} us")
        handle = EventHandle(fire_at=fire_at, seq=next(self._seq))
        timeout = self.env.timeout(fire_at - self.now)
        timeout.callbacks.append(lambda _event: self._fire(handle, action))
        return handle

    def _fire(self, handle: EventHandle, action: Callable[[], None]):
        if handle.cancelled:
            return
        self._executed += 1
        action()

    def start_process(self, generator: Generator) -> simpy.Process:
        """Registers a simpy process (periodic sources, the TTI clock)."""
        return self.env.process(generator)

    def run_until(self, t_end: SimTime) -> int:
        """
        Executes every event with fire_at <= t_end and leaves the clock at t_end.

        Events scheduled by handlers for the current instant run within the
        same call.

        Returns:
            int: Number of scheduled actions executed during this call.
        """
        t_end = int(t_end)
        if t_end < self.now:
            raise PastTime(f"Cannot run back to t={t_end} us, clock is at {self.now} us")
        before = self._executed
        if t_end > self.now:
            self.env.run(until=t_end)
        # simpy stops *before* ordinary events at `until`; the boundary is inclusive here.
        while self.env.peek() <= t_end:
            self.env.step()
        return self._executed - before
