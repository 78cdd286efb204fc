"""Minimal MQTT-style publish/subscribe transport (QoS 0, token auth)."""
from .broker import DEFAULT_PORT, Broker, BrokerStartupError, broker_serve, parse_address
from .client import (AuthRejected, Backoff, Client, ClientError, ConnectionLost,
                     ServerProtocolError, client_connect, connect_with_backoff)
from .codec import (ConnAck, Connect, Disconnect, Frame, MalformedFrame, PingReq, PingResp,
                    Publish, SubAck, Subscribe, decode_frame, encode_frame)
from .topics import InvalidTopic, reading_topic, topic_matches

__all__ = [
    "DEFAULT_PORT", "Broker", "BrokerStartupError", "broker_serve", "parse_address",
    "AuthRejected", "Backoff", "Client", "ClientError", "ConnectionLost", "ServerProtocolError",
    "client_connect", "connect_with_backoff",
    "ConnAck", "Connect", "Disconnect", "Frame", "MalformedFrame", "PingReq", "PingResp",
    "Publish", "SubAck", "Subscribe", "decode_frame", "encode_frame",
    "InvalidTopic", "reading_topic", "topic_matches",
]
