"""Topic-based publish/subscribe with hierarchical subject filtering.

Topics are '/'-joined level strings. Subscription filters may use '+' to match
exactly one level and a trailing '#' to match any remaining levels (including
none). Delivery semantics: exactly-once per matching subscriber (deduplicated
across overlapping filters), per-publisher FIFO, no retained messages. Channel
loss belongs to the radio layer, never here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

MAX_TOPIC_BYTES = 256
SINGLE = "+"
MULTI = "#"


class TopicError(ValueError):
    """Malformed topic or subscription filter."""


def split_topic(topic: str) -> list[str]:
    """Validate and split a concrete topic into levels."""
    levels = topic.split("/")
    if len(topic.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise TopicError(f"topic exceeds {MAX_TOPIC_BYTES} bytes: {topic[:40]}...")
    for level in levels:
        if not level:
            raise TopicError(f"empty level in topic {topic!r}")
        if SINGLE in level or MULTI in level:
            raise TopicError(f"wildcard character in topic {topic!r}")
    return levels


def split_filter(pattern: str) -> list[str]:
    """Validate and split a subscription filter into levels.

    Raises at subscribe time so that matching itself never has to re-check.
    """
    if len(pattern.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise TopicError(f"filter exceeds {MAX_TOPIC_BYTES} bytes: {pattern[:40]}...")
    levels = pattern.split("/")
    for i, level in enumerate(levels):
        if not level:
            raise TopicError(f"empty level in filter {pattern!r}")
        if level == MULTI:
            if i != len(levels) - 1:
                raise TopicError(f"'#' must be the final level: {pattern!r}")
        elif level == SINGLE:
            continue
        elif SINGLE in level or MULTI in level:
            raise TopicError(f"wildcard must occupy a whole level: {pattern!r}")
    return levels


def matches(pattern: str, topic: str) -> bool:
    """Level-wise filter match: '+' eats one level, trailing '#' eats the rest."""
    flevels = split_filter(pattern)
    tlevels = split_topic(topic)
    for i, flevel in enumerate(flevels):
        if flevel == MULTI:
            # Trailing '#' eats zero or more levels: "a/#" accepts "a".
            return True
        if i >= len(tlevels):
            return False
        if flevel != SINGLE and flevel != tlevels[i]:
            return False
    return len(flevels) == len(tlevels)


@dataclass(frozen=True)
class BrokerMessage:
    topic: str
    payload: dict
    publisher: str
    t_pub: int


@dataclass
class _Subscription:
    sub_id: int
    client: str
    pattern: str
    callback: Callable[[BrokerMessage], None]
    active: bool = True


@dataclass
class Broker:
    """One broker instance; edge nodes each run their own.

    ``taps`` observe every well-formed published message regardless of
    subscriptions (the archive hangs off a tap).
    """

    name: str = "broker"
    _subs: dict[int, _Subscription] = field(default_factory=dict)
    _by_key: dict[tuple[str, str], int] = field(default_factory=dict)
    _next_id: int = 1
    taps: list[Callable[[BrokerMessage], None]] = field(default_factory=list)

    def add_tap(self, tap: Callable[[BrokerMessage], None]) -> None:
        self.taps.append(tap)

    def subscribe(
        self, client: str, pattern: str, callback: Callable[[BrokerMessage], None]
    ) -> int:
        """Register a filter; idempotent per (client, pattern)."""
        split_filter(pattern)
        key = (client, pattern)
        existing = self._by_key.get(key)
        if existing is not None and self._subs[existing].active:
            return existing
        sub_id = self._next_id
        self._next_id += 1
        self._subs[sub_id] = _Subscription(sub_id, client, pattern, callback)
        self._by_key[key] = sub_id
        return sub_id

    def unsubscribe(self, sub_id: int) -> None:
        sub = self._subs.get(sub_id)
        if sub is None or not sub.active:
            raise KeyError(f"unknown subscription id {sub_id}")
        sub.active = False
        self._by_key.pop((sub.client, sub.pattern), None)

    def publish(self, msg: BrokerMessage) -> int:
        """Deliver to every subscriber with at least one matching filter.

        Returns the number of subscribers reached. A subscriber with several
        overlapping filters still sees the message exactly once.
        """
        split_topic(msg.topic)
        for tap in self.taps:
            tap(msg)
        delivered_clients: set[str] = set()
        # Insertion order of the subscription dict makes fan-out deterministic.
        targets: list[_Subscription] = []
        for sub in self._subs.values():
            if not sub.active or sub.client in delivered_clients:
                continue
            if matches(sub.pattern, msg.topic):
                delivered_clients.add(sub.client)
                targets.append(sub)
        for sub in targets:
            sub.callback(msg)
        return len(targets)
