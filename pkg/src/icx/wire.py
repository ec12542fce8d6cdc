"""Line-delimited JSON wire protocol for out-of-process predictor backends.

The channel is the standard input/output of a child process. One request
line yields exactly one response line:

    -> {"op":"hello","version":1}
    <- {"op":"hello","version":1,"max_context":1024}
    -> {"op":"predict","id":7,"train_x":[[...]],"train_y":[...],"inference_x":[[...]]}
    <- {"op":"result","id":7,"proba":[...]}            # each entry in [0, 1]
    <- {"op":"error","id":7,"message":"..."}           # on failure

Numbers are serialized as decimal with full double precision. Request
encoding is deterministic (fixed key order, no whitespace), so identical
calls produce byte-identical request lines.
"""

from __future__ import annotations

import json
import os
import select
import subprocess
from typing import Sequence

import numpy as np

from .cost import CostLedger
from .dataset import Dataset
from .predictor import PredictionBatch, Predictor

PROTOCOL_VERSION = 1


class BackendError(RuntimeError):
    """Failure attributable to the backend channel, not the caller."""


class TransportError(BackendError):
    """Malformed traffic, broken pipe, or timeout on the predictor channel."""


class RemoteError(BackendError):
    """The backend answered with a protocol-level error message."""


def encode_hello() -> str:
    return '{"op":"hello","version":%d}' % PROTOCOL_VERSION


def encode_predict(request_id: int, train_x, train_y, inference_x) -> str:
    payload = {
        "op": "predict",
        "id": int(request_id),
        "train_x": np.asarray(train_x, dtype=np.float64).tolist(),
        "train_y": np.asarray(train_y, dtype=np.float64).tolist(),
        "inference_x": np.asarray(inference_x, dtype=np.float64).tolist(),
    }
    return json.dumps(payload, separators=(",", ":"))


def decode_line(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TransportError(f"malformed response line: {exc}") from None
    if not isinstance(message, dict) or "op" not in message:
        raise TransportError("response is not a protocol message")
    return message


class _LineChannel:
    """Child process with line-oriented stdio and read timeouts."""

    def __init__(self, command: Sequence[str], timeout: float) -> None:
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise TransportError(f"could not start backend {command!r}: {exc}") from None
        self._buffer = b""

    def send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise TransportError("backend process has exited")
        try:
            self._proc.stdin.write(line.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"backend pipe closed: {exc}") from None

    def read_line(self) -> str:
        fd = self._proc.stdout.fileno()
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = self._buffer[:newline]
                self._buffer = self._buffer[newline + 1 :]
                return line.decode("utf-8")
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                raise TransportError(f"backend timed out after {self.timeout}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise TransportError("backend closed the channel mid-response")
            self._buffer += chunk

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class ExternalPredictor(Predictor):
    """Predictor served by a child process speaking the wire protocol.

    The ledger charges the standard token formula regardless of how the
    remote backend computes. Transport problems raise
    :class:`TransportError`; remote refusals raise :class:`RemoteError`;
    caller-side contract violations raise before anything is sent.
    """

    def __init__(self, command: Sequence[str], ledger: CostLedger | None = None,
                 timeout: float = 60.0) -> None:
        super().__init__(ledger)
        self.command = tuple(command)
        self._channel = _LineChannel(command, timeout)
        self._next_id = 0
        self.max_context = self._handshake()

    def _handshake(self) -> int:
        self._channel.send_line(encode_hello())
        reply = decode_line(self._channel.read_line())
        if reply.get("op") != "hello" or reply.get("version") != PROTOCOL_VERSION:
            raise TransportError(f"unexpected handshake reply: {reply!r}")
        max_context = reply.get("max_context")
        if not isinstance(max_context, int) or max_context < 1:
            raise TransportError(f"handshake carries no usable max_context: {reply!r}")
        return max_context

    def _predict(self, train: Dataset, X: np.ndarray) -> PredictionBatch:
        request_id = self._next_id
        self._next_id += 1
        self._channel.send_line(encode_predict(request_id, train.features, train.labels, X))
        reply = decode_line(self._channel.read_line())
        if reply.get("op") == "error":
            raise RemoteError(str(reply.get("message", "backend error")))
        if reply.get("op") != "result":
            raise TransportError(f"expected a result message, got {reply!r}")
        if reply.get("id") != request_id:
            raise TransportError(f"response id {reply.get('id')!r} does not echo request id {request_id}")
        proba = reply.get("proba")
        if not isinstance(proba, list):
            raise TransportError("result carries no probability list")
        if len(proba) != X.shape[0]:
            raise TransportError(f"{len(proba)} probabilities for {X.shape[0]} inference rows")
        probs = np.asarray(proba, dtype=np.float64)
        if probs.size and (not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0):
            raise TransportError("probabilities outside [0, 1]")
        return PredictionBatch(probs)

    def close(self) -> None:
        self._channel.close()

    def __enter__(self) -> "ExternalPredictor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
