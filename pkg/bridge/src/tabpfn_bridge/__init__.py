"""Serve a tabular in-context classifier over stdio, one JSON line per message."""

from .server import BridgeSession, resolve_model, serve

__version__ = "0.1.0"
