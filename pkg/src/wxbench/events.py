"""In-process event fan-out to connected clients.

Each subscriber owns a thread-safe queue scoped to one project; publishers
(executor, pollers, ensemble mutations) push typed messages. Delivery is
at-least-once per connected subscriber, and a single publishing thread per
run preserves per-run ordering.
"""

from __future__ import annotations

import queue
import threading

from .store import utcnow


def make_event(event_type: str, **fields) -> dict:
    event = {"type": event_type, "ts": utcnow()}
    event.update(fields)
    return event


class Subscription:
    def __init__(self, project_id: int):
        self.project_id = project_id
        self.queue: queue.Queue[dict] = queue.Queue()

    def get(self, timeout: float | None = None) -> dict:
        return self.queue.get(timeout=timeout)


class EventBus:
    def __init__(self):
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []

    def subscribe(self, project_id: int) -> Subscription:
        sub = Subscription(project_id)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, project_id: int, event: dict) -> None:
        with self._lock:
            targets = [s for s in self._subs if s.project_id == project_id]
        for sub in targets:
            sub.queue.put(event)
