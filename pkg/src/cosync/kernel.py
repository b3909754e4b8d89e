"""Discrete-event core: integer microsecond time, events and the future event set.

Simulation time is a plain non-negative ``int`` counting microseconds since the
start of the run. Both the orchestrator and the network simulator share this
unit, so no conversion happens at the coupling boundary.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from .errors import SchedulingInPast, TimeOverflow

SimTime = int

MAX_TIME: SimTime = 2**64 - 1

US_PER_MS = 1_000
US_PER_S = 1_000_000


def check_time(t: SimTime) -> SimTime:
    if not isinstance(t, int) or isinstance(t, bool):
        raise TypeError(f"simulation time must be an int, got {type(t).__name__}")
    if t < 0:
        raise ValueError(f"simulation time must be non-negative, got {t}")
    if t > MAX_TIME:
        raise TimeOverflow(f"simulation time {t} exceeds {MAX_TIME}")
    return t


def add_time(t: SimTime, duration: SimTime) -> SimTime:
    """Checked addition; never wraps."""
    total = check_time(t) + check_time(duration)
    if total > MAX_TIME:
        raise TimeOverflow(f"{t} + {duration} overflows simulation time")
    return total


def ms(value: float) -> SimTime:
    return check_time(round(value * US_PER_MS))


@dataclass(frozen=True, order=False)
class Event:
    id: int
    time: SimTime
    owner: str
    payload: Any = None

    @property
    def key(self) -> tuple[SimTime, int]:
        return (self.time, self.id)


@dataclass
class EventQueue:
    """Future event set ordered by ``(time, id)``.

    Ids come from a per-queue counter, so same-time events pop in insertion
    order. Cancellation is lazy: cancelled ids stay in the heap and are skipped
    on pop.
    """

    _heap: list[tuple[SimTime, int, Event]] = field(default_factory=list)
    _ids: Iterator[int] = field(default_factory=itertools.count)
    _pending: set[int] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self._pending)

    def __bool__(self) -> bool:
        return bool(self._pending)

    def schedule(self, time: SimTime, owner: str, payload: Any = None, now: SimTime = 0) -> int:
        check_time(time)
        if time < now:
            raise SchedulingInPast(f"event for {owner!r} at {time} is before now={now}")
        event = Event(next(self._ids), time, owner, payload)
        heapq.heappush(self._heap, (event.time, event.id, event))
        self._pending.add(event.id)
        return event.id

    def _drop_cancelled(self) -> None:
        while self._heap and self._heap[0][1] not in self._pending:
            heapq.heappop(self._heap)

    def peek(self) -> Optional[Event]:
        self._drop_cancelled()
        return self._heap[0][2] if self._heap else None

    def peek_time(self) -> Optional[SimTime]:
        event = self.peek()
        return None if event is None else event.time

    def pop_next(self) -> Optional[Event]:
        self._drop_cancelled()
        if not self._heap:
            return None
        _, event_id, event = heapq.heappop(self._heap)
        self._pending.discard(event_id)
        return event

    def cancel(self, event_id: int) -> bool:
        if event_id in self._pending:
            self._pending.remove(event_id)
            return True
        return False

    def __contains__(self, event_id: int) -> bool:
        return event_id in self._pending

    def events(self) -> list[Event]:
        """Pending events in pop order (does not modify the queue)."""
        return sorted((e for _, i, e in self._heap if i in self._pending), key=lambda e: e.key)
