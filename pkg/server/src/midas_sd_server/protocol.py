"""Server-side frame and payload handling for the newline-JSON tensor
protocol.

One JSON object per line, sorted keys, compact separators; tensors are a
shape list plus base64 of little-endian 4-byte reals.  This module is
deliberately self-contained: the server is a separate component and owns
its own copy of the wire layer.
"""

from __future__ import annotations

import base64
import json

import numpy as np

PROTOCOL_VERSION = 1
SCHEDULE_BASE = "scaled_linear_1000"


class ProtocolError(Exception):
    pass


def encode_frame(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_frame(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("frame is not a JSON object")
    return obj


def tensor_to_payload(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def payload_to_tensor(payload: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in payload["shape"])
        raw = base64.b64decode(payload["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad tensor payload: {exc}") from None
    if len(raw) != 4 * int(np.prod(shape)):
        raise ProtocolError(
            f"tensor payload is {len(raw)} bytes, expected {4 * int(np.prod(shape))}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def error_response(request_id, code: str, message: str) -> dict:
    return {"id": request_id, "error": {"code": code, "message": message}}


def result_response(request_id, result: dict) -> dict:
    return {"id": request_id, "result": result}
