"""Line-delimited JSON predictor server.

Protocol (one request line, one response line, over stdin/stdout):

    -> {"op":"hello","version":1}
    <- {"op":"hello","version":1,"max_context":1024}
    -> {"op":"predict","id":7,"train_x":[[...]],"train_y":[...],"inference_x":[[...]]}
    <- {"op":"result","id":7,"proba":[...]}
    <- {"op":"error","id":7,"message":"..."}

Each predict request carries its own context and is answered by a single
fit-and-predict invocation; nothing is cached across requests, since callers
send a different context per coalition or subset. Requests whose context
exceeds ``max_context`` are rejected before the model is invoked. Malformed
lines and model exceptions produce error responses (id -1 when the request id
is unknown) and the loop continues.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

PROTOCOL_VERSION = 1
DEFAULT_MAX_CONTEXT = 1024


class ModelUnavailableError(RuntimeError):
    pass


class _TabPFNModel:
    """The pretrained tabular in-context classifier, one deterministic
    configuration unless more ensemble members are requested."""

    name = "tabpfn"

    def __init__(self, device: str = "cpu", ensemble: int = 1) -> None:
        try:
            from tabpfn import TabPFNClassifier
        except ImportError as exc:
            raise ModelUnavailableError(f"tabpfn is not importable: {exc}") from None
        self._classifier = TabPFNClassifier(device=device, N_ensemble_configurations=ensemble)

    def predict_proba(self, train_x, train_y, inference_x):
        self._classifier.fit(train_x, train_y)
        return self._classifier.predict_proba(inference_x)[:, 1]


class _LogisticModel:
    """Fallback fit-per-request classifier for environments without the
    pretrained model; keeps the protocol fully exercisable."""

    name = "logistic"

    def __init__(self) -> None:
        from sklearn.linear_model import LogisticRegression

        self._factory = lambda: LogisticRegression(max_iter=200)

    def predict_proba(self, train_x, train_y, inference_x):
        classes = np.unique(train_y)
        if classes.size == 1:
            # single-class context: the posterior is that class
            return np.full(len(inference_x), float(classes[0]))
        model = self._factory()
        model.fit(train_x, train_y)
        positive = list(model.classes_).index(1.0)
        return model.predict_proba(inference_x)[:, positive]


def resolve_model(name: str = "auto", device: str = "cpu", ensemble: int = 1):
    """Pick the serving model: the pretrained classifier when importable,
    otherwise the logistic fallback (with a warning under ``auto``)."""
    if name == "tabpfn":
        return _TabPFNModel(device=device, ensemble=ensemble)
    if name == "logistic":
        return _LogisticModel()
    if name == "auto":
        try:
            return _TabPFNModel(device=device, ensemble=ensemble)
        except ModelUnavailableError:
            print("tabpfn-bridge: tabpfn not importable, serving the logistic fallback",
                  file=sys.stderr)
            return _LogisticModel()
    raise ValueError(f"unknown model {name!r}")


class BridgeSession:
    """Protocol state machine for one stdio session."""

    def __init__(self, model, max_context: int = DEFAULT_MAX_CONTEXT) -> None:
        self.model = model
        self.max_context = int(max_context)
        self.handshaken = False
        self.requests_served = 0

    def handle_line(self, line: str) -> dict:
        """One request line in, one response payload out; never raises."""
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"op": "error", "id": -1, "message": f"malformed JSON: {exc.msg}"}
        if not isinstance(message, dict) or "op" not in message:
            return {"op": "error", "id": -1, "message": "not a protocol message"}
        if message["op"] == "hello":
            self.handshaken = True
            return {"op": "hello", "version": PROTOCOL_VERSION, "max_context": self.max_context}
        if message["op"] == "predict":
            return self._predict(message)
        return {"op": "error", "id": self._request_id(message), "message": f"unknown op {message['op']!r}"}

    def _predict(self, message: dict) -> dict:
        request_id = self._request_id(message)
        try:
            train_x = np.asarray(message["train_x"], dtype=np.float64)
            train_y = np.asarray(message["train_y"], dtype=np.float64)
            inference_x = np.asarray(message["inference_x"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            return {"op": "error", "id": request_id, "message": f"bad predict payload: {exc}"}
        if train_x.ndim != 2 or inference_x.ndim != 2 or train_y.ndim != 1:
            return {"op": "error", "id": request_id, "message": "bad payload shapes"}
        if train_x.shape[0] != train_y.shape[0]:
            return {"op": "error", "id": request_id,
                    "message": f"{train_x.shape[0]} training rows vs {train_y.shape[0]} labels"}
        if train_x.shape[0] == 0:
            return {"op": "error", "id": request_id, "message": "empty context"}
        if inference_x.shape[1] != train_x.shape[1]:
            return {"op": "error", "id": request_id,
                    "message": f"column mismatch: {inference_x.shape[1]} vs {train_x.shape[1]}"}
        if train_x.shape[0] > self.max_context:
            return {"op": "error", "id": request_id,
                    "message": f"context of {train_x.shape[0]} rows exceeds max_context {self.max_context}"}
        try:
            proba = np.asarray(self.model.predict_proba(train_x, train_y, inference_x), dtype=np.float64)
            proba = np.clip(proba, 0.0, 1.0)
        except Exception as exc:  # keep serving after model failures
            return {"op": "error", "id": request_id, "message": f"model failure: {exc}"}
        self.requests_served += 1
        return {"op": "result", "id": request_id, "proba": proba.tolist()}

    @staticmethod
    def _request_id(message: dict) -> int:
        request_id = message.get("id", -1)
        return request_id if isinstance(request_id, int) else -1


def serve(session: BridgeSession, stdin=None, stdout=None) -> None:
    """Read request lines until EOF, writing one response line per request."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        response = session.handle_line(line)
        stdout.write(json.dumps(response, separators=(",", ":")) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tabpfn-bridge",
        description="Serve a tabular in-context classifier over the stdio predictor protocol.",
    )
    parser.add_argument("--model", choices=["auto", "tabpfn", "logistic"], default="auto")
    parser.add_argument("--max-context", type=int, default=DEFAULT_MAX_CONTEXT,
                        help="reject contexts larger than this many rows")
    parser.add_argument("--device", default="cpu", help="device for the pretrained model")
    parser.add_argument("--ensemble", type=int, default=1,
                        help="ensemble configurations for the pretrained model (1 = deterministic)")
    args = parser.parse_args(argv)
    try:
        model = resolve_model(args.model, device=args.device, ensemble=args.ensemble)
    except (ModelUnavailableError, ValueError) as exc:
        print(f"tabpfn-bridge: {exc}", file=sys.stderr)
        return 2
    serve(BridgeSession(model, max_context=args.max_context))
    return 0


if __name__ == "__main__":
    sys.exit(main())
