"""Topic names and subscription filters (``/``-separated, trailing ``#``)."""
from __future__ import annotations

from .codec import MAX_TOPIC_BYTES


class InvalidTopic(ValueError):
    pass


def _segments(text: str) -> list[str]:
    if not text:
        raise InvalidTopic("empty topic")
    if len(text.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise InvalidTopic(f"topic exceeds {MAX_TOPIC_BYTES} bytes")
    segs = text.split("/")
    if any(s == "" for s in segs):
        raise InvalidTopic(f"empty segment in {text!r}")
    return segs


def check_topic(topic: str) -> list[str]:
    """Validate a publish topic, which may not contain ``#``."""
    segs = _segments(topic)
    if any("#" in s for s in segs):
        raise InvalidTopic(f"wildcard in publish topic {topic!r}")
    return segs


def check_filter(filt: str) -> list[str]:
    """Validate a subscription filter; ``#`` only as a whole final segment."""
    segs = _segments(filt)
    for i, s in enumerate(segs):
        if "#" in s and (s != "#" or i != len(segs) - 1):
            raise InvalidTopic(f"'#' must be the final segment in {filt!r}")
    return segs


def topic_matches(filt: str, topic: str) -> bool:
    fsegs = check_filter(filt)
    tsegs = check_topic(topic)
    if fsegs[-1] == "#":
        head = fsegs[:-1]
        return tsegs[:len(head)] == head
    return fsegs == tsegs


def reading_topic(sensor_id: str) -> str:
    return f"energysaver/{sensor_id}/reading"
