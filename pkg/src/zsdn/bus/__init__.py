"""Message bus: length-prefixed frame protocol, broker, and client session."""

from zsdn.bus.frames import (
    BusFrame,
    BusProtocolError,
    FrameReader,
    FrameType,
    frame_decode,
    frame_encode,
)
from zsdn.bus.broker import BrokerCore, BrokerServer
from zsdn.bus.client import (
    BusError,
    BusSession,
    RegistrationRefused,
    RequestTimeout,
    SessionClosed,
    default_bus_addr,
    parse_addr,
)

__all__ = [
    "BusFrame",
    "BusProtocolError",
    "FrameReader",
    "FrameType",
    "frame_decode",
    "frame_encode",
    "BrokerCore",
    "BrokerServer",
    "BusError",
    "BusSession",
    "RegistrationRefused",
    "RequestTimeout",
    "SessionClosed",
    "default_bus_addr",
    "parse_addr",
]
