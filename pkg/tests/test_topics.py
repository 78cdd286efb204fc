import pytest
from hypothesis import given, strategies as st

from energysaver.wirebus.topics import InvalidTopic, check_filter, check_topic, reading_topic, topic_matches

from strategies import segment, topics


@pytest.mark.parametrize("filt,topic,expected", [
    ("energysaver/#", "energysaver/s1/reading", True),
    ("a/b", "a/b", True),
    ("a/#", "b/a", False),
    ("a/#", "a", True),
    ("#", "x/y/z", True),
    ("a/b", "a/b/c", False),
    ("a/b/c", "a/b", False),
])
def test_matching_examples(filt, topic, expected):
    assert topic_matches(filt, topic) is expected


@pytest.mark.parametrize("filt", ["a/#/b", "#/a", "a/b#", "", "a//b", "x" * 257])
def test_invalid_filters(filt):
    with pytest.raises(InvalidTopic):
        check_filter(filt)


@pytest.mark.parametrize("topic", ["a/#", "#", "a/", "/a", ""])
def test_invalid_publish_topics(topic):
    with pytest.raises(InvalidTopic):
        check_topic(topic)


def test_reading_topic():
    assert reading_topic("house1") == "energysaver/house1/reading"


@given(topics)
def test_topic_matches_itself_and_root_wildcard(t):
    assert topic_matches(t, t)
    assert topic_matches("#", t)


@given(st.lists(segment, min_size=1, max_size=5), st.integers(0, 5))
def test_prefix_wildcard_matches_exactly_the_extensions(segs, k):
    k = min(k, len(segs))
    prefix = segs[:k]
    filt = "/".join(prefix + ["#"])
    assert topic_matches(filt, "/".join(segs))
    other = ["x" + s for s in segs]
    if k > 0:
        assert not topic_matches(filt, "/".join(other))
