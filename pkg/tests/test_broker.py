import random

import pytest
from hypothesis import given, settings, strategies as st

from cvsim.broker import Broker, BrokerMessage, TopicError, matches, split_filter, split_topic


def reference_matches(pattern, topic):
    """Recursive reference matcher, written independently of the router's
    iterative one: '+' consumes exactly one level, trailing '#' consumes the
    rest (possibly nothing)."""

    def rec(fl, tl):
        if not fl:
            return not tl
        if fl[0] == "#":
            return True
        if not tl:
            return False
        if fl[0] == "+" or fl[0] == tl[0]:
            return rec(fl[1:], tl[1:])
        return False

    return rec(pattern.split("/"), topic.split("/"))


# -- validation ------------------------------------------------------------

@pytest.mark.parametrize("topic", ["a", "a/b", "bsm/raw/veh1", "x" * 250])
def test_valid_topics(topic):
    split_topic(topic)


@pytest.mark.parametrize("topic", ["", "a//b", "/a", "a/", "a/+/b", "a/#", "x" * 300])
def test_invalid_topics(topic):
    with pytest.raises(TopicError):
        split_topic(topic)


@pytest.mark.parametrize("pattern", ["a", "+", "#", "a/+/c", "a/#", "+/+/+", "bsm/raw/+"])
def test_valid_filters(pattern):
    split_filter(pattern)


@pytest.mark.parametrize("pattern", ["", "a/#/b", "#/a", "a/b+", "a/+b", "a//b", "a/"])
def test_invalid_filters(pattern):
    with pytest.raises(TopicError):
        split_filter(pattern)


def test_malformed_filter_rejected_at_subscribe_time():
    broker = Broker()
    with pytest.raises(TopicError):
        broker.subscribe("c1", "a/#/b", lambda m: None)


# -- matching --------------------------------------------------------------

@pytest.mark.parametrize(
    "pattern,topic,expected",
    [
        ("bsm/raw/+", "bsm/raw/veh1", True),
        ("bsm/#", "bsm/raw/veh1", True),
        ("bsm/#", "bsm", True),
        ("bsm/raw", "bsm/processed", False),
        ("bsm/raw", "bsm/raw", True),
        ("+", "bsm", True),
        ("+", "bsm/raw", False),
        ("#", "a/b/c/d", True),
        ("a/+/c", "a/b/c", True),
        ("a/+/c", "a/b/d", False),
        ("a/+", "a", False),
        ("a/b/#", "a/b/c/d/e", True),
        ("a/b/#", "a", False),
    ],
)
def test_matches_examples(pattern, topic, expected):
    assert matches(pattern, topic) is expected
    assert reference_matches(pattern, topic) is expected


def _random_topic(rng, levels=(1, 4), alphabet=("a", "b", "c")):
    n = rng.randint(*levels)
    return "/".join(rng.choice(alphabet) for _ in range(n))


def _random_filter(rng, levels=(1, 4), alphabet=("a", "b", "c")):
    n = rng.randint(*levels)
    parts = [rng.choice(alphabet + ("+",)) for _ in range(n)]
    if rng.random() < 0.3:
        parts.append("#")
    return "/".join(parts)


def test_matcher_agrees_with_reference_on_random_pairs():
    rng = random.Random(20240811)
    for _ in range(2000):
        pattern = _random_filter(rng)
        topic = _random_topic(rng)
        assert matches(pattern, topic) == reference_matches(pattern, topic), (pattern, topic)


# -- pub/sub semantics -------------------------------------------------------

def msg(topic, payload=None, publisher="p", t=0):
    return BrokerMessage(topic=topic, payload=payload or {}, publisher=publisher, t_pub=t)


def test_publish_counts_and_archive_tap():
    broker = Broker()
    tapped = []
    broker.add_tap(tapped.append)
    assert broker.publish(msg("bsm/raw/v1")) == 0
    assert len(tapped) == 1  # taps see messages even with zero subscribers

    got = []
    broker.subscribe("c1", "bsm/#", got.append)
    broker.subscribe("c2", "bsm/raw/+", got.append)
    broker.subscribe("c3", "queue/#", got.append)
    assert broker.publish(msg("bsm/raw/v1")) == 2
    assert len(got) == 2


def test_overlapping_filters_deliver_once():
    broker = Broker()
    got = []
    broker.subscribe("c1", "bsm/#", got.append)
    broker.subscribe("c1", "bsm/raw/+", got.append)
    assert broker.publish(msg("bsm/raw/v1")) == 1
    assert len(got) == 1


def test_no_retroactive_delivery():
    broker = Broker()
    got = []
    broker.publish(msg("bsm/raw/v1"))
    broker.subscribe("c1", "bsm/#", got.append)
    assert got == []


def test_unsubscribe_stops_delivery_and_resubscribe_is_idempotent():
    broker = Broker()
    got = []
    sid = broker.subscribe("c1", "bsm/#", got.append)
    assert broker.subscribe("c1", "bsm/#", got.append) == sid
    broker.unsubscribe(sid)
    broker.publish(msg("bsm/raw/v1"))
    assert got == []
    with pytest.raises(KeyError):
        broker.unsubscribe(sid)
    new_sid = broker.subscribe("c1", "bsm/#", got.append)
    assert new_sid != sid
    broker.publish(msg("bsm/raw/v1"))
    assert len(got) == 1


def test_malformed_topic_rejected_at_publish():
    broker = Broker()
    with pytest.raises(TopicError):
        broker.publish(msg("bsm/+/v1"))


def test_per_publisher_fifo_order():
    broker = Broker()
    got = []
    broker.subscribe("c1", "bsm/#", got.append)
    for i in range(50):
        broker.publish(msg("bsm/raw/v1", payload={"i": i}))
    assert [m.payload["i"] for m in got] == list(range(50))


# -- hypothesis properties ----------------------------------------------------

level = st.sampled_from(["a", "b", "c", "d1"])
topic_strategy = st.lists(level, min_size=1, max_size=4).map("/".join)
filter_strategy = st.builds(
    lambda parts, tail: "/".join(parts + ([tail] if tail else [])),
    st.lists(st.sampled_from(["a", "b", "c", "d1", "+"]), min_size=1, max_size=4),
    st.sampled_from(["", "#"]),
)


@settings(max_examples=300, deadline=None)
@given(pattern=filter_strategy, topic=topic_strategy)
def test_matches_equals_reference(pattern, topic):
    assert matches(pattern, topic) == reference_matches(pattern, topic)


@settings(max_examples=200, deadline=None)
@given(
    subs=st.lists(
        st.tuples(st.sampled_from(["c1", "c2", "c3"]), filter_strategy), min_size=0, max_size=6
    ),
    topics=st.lists(topic_strategy, min_size=0, max_size=10),
)
def test_delivery_soundness_and_dedup(subs, topics):
    broker = Broker()
    received = []  # (client, pattern-set snapshot, message index)
    client_filters = {}
    for client, pattern in subs:
        broker.subscribe(client, pattern, lambda m, c=client: received.append((c, m)))
        client_filters.setdefault(client, set()).add(pattern)
    for i, topic in enumerate(topics):
        broker.publish(msg(topic, payload={"i": i}))
    # soundness: every delivery matched at least one of the client's filters
    for client, m in received:
        assert any(matches(p, m.topic) for p in client_filters[client])
    # no duplicates: one client sees one message at most once
    seen = [(c, m.payload["i"]) for c, m in received]
    assert len(seen) == len(set(seen))
    # completeness: every matching message was delivered
    for client, patterns in client_filters.items():
        expected = {
            i for i, t in enumerate(topics) if any(matches(p, t) for p in patterns)
        }
        got = {i for c, i in seen if c == client}
        assert got == expected
