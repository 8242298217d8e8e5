"""Wire-protocol client for an external denoiser/VAE service.

Frames are newline-delimited JSON over a stream socket, one object per
line, serialized with sorted keys so byte-level transcripts are
reproducible.  Tensor payloads carry a shape list plus base64 of
little-endian 4-byte reals.  Each request carries a session-monotonic
``id`` echoed by the response.  Ops: ``info``, ``predict_noise``,
``encode``, ``decode``.

Timesteps on the wire are base-schedule indices (0..1000) so the server
needs no knowledge of the client's subsampled schedule.

Two loopback servers ship with the package: :class:`EchoServer` (protocol
fixture, echoes tensors back) and :class:`ToyServer` (serves the toy
codec and predictor, so the full pipeline can run against a socket).
"""

from __future__ import annotations

import base64
import json
import math
import socket
import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from . import codec
from .diffusion import BASE_STEPS, BETA_END, BETA_START, TOY_PATTERN_STD, TOY_SIGMA0, _prompt_pattern

__all__ = [
    "PROTOCOL_VERSION",
    "BackendError",
    "ConnectError",
    "ProtocolError",
    "IdMismatchError",
    "RemoteError",
    "BackendInfo",
    "tensor_to_payload",
    "payload_to_tensor",
    "encode_frame",
    "decode_frame",
    "Session",
    "connect",
    "EchoServer",
    "ToyServer",
]

PROTOCOL_VERSION = 1
SCHEDULE_BASE = "scaled_linear_1000"
DEFAULT_GUIDANCE = 3.0


class BackendError(Exception):
    """Base class for everything the backend boundary can raise."""


class ConnectError(BackendError):
    pass


class ProtocolError(BackendError):
    """Malformed frame; ``offset`` is the stream byte offset of the
    offending line."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IdMismatchError(ProtocolError):
    pass


class RemoteError(BackendError):
    """Structured error object returned by the server."""

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class BackendInfo:
    protocol_version: int
    latent_dims: tuple[int, int, int]
    schedule_base: str
    concurrency_safe: bool


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
    expected = 4 * int(np.prod(shape)) if shape else 4
    if len(raw) != 4 * int(np.prod(shape)):
        raise ProtocolError(
            f"tensor payload is {len(raw)} bytes, expected {expected} for shape {list(shape)}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def encode_frame(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_frame(line: bytes, offset: int | None = None) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}", offset=offset) from None
    if not isinstance(obj, dict):
        raise ProtocolError("frame is not a JSON object", offset=offset)
    return obj


class Session:
    """One serialized request/response stream.

    Requests get monotonically increasing ids; the response id must match.
    No retries: every failure surfaces to the caller.
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = sock.makefile("rb")
        self._lock = threading.Lock()
        self._next_id = 1
        self._read_offset = 0

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def call(self, op: str, **fields) -> dict:
        with self._lock:
            request = {"op": op, "id": self._next_id, **fields}
            self._next_id += 1
            try:
                self._sock.sendall(encode_frame(request))
                start = self._read_offset
                line = self._reader.readline()
            except OSError as exc:
                raise ConnectError(f"backend connection failed: {exc}") from None
            if not line:
                raise ProtocolError("connection closed mid-request", offset=start)
            self._read_offset += len(line)
            response = decode_frame(line, offset=start)
        if "error" in response:
            err = response["error"]
            raise RemoteError(str(err.get("code", "unknown")), str(err.get("message", "")))
        if response.get("id") != request["id"]:
            raise IdMismatchError(
                f"response id {response.get('id')} does not match request id {request['id']}",
                offset=start,
            )
        return response

    def info(self) -> BackendInfo:
        result = self.call("info").get("result", {})
        try:
            dims = tuple(int(d) for d in result["latent_dims"])
            return BackendInfo(
                protocol_version=int(result["protocol_version"]),
                latent_dims=(dims[0], dims[1], dims[2]),
                schedule_base=str(result["schedule_base"]),
                concurrency_safe=bool(result["concurrency_safe"]),
            )
        except (KeyError, IndexError, ValueError) as exc:
            raise ProtocolError(f"bad info result: {exc}") from None

    def predict_noise(
        self,
        latent: np.ndarray,
        timestep: int,
        prompt: str,
        ref_latent: np.ndarray | None = None,
        ref_weight: float = 0.0,
        guidance: float = DEFAULT_GUIDANCE,
    ) -> np.ndarray:
        tensors = {"latent": tensor_to_payload(latent)}
        if ref_latent is not None:
            tensors["ref_latent"] = tensor_to_payload(ref_latent)
        response = self.call(
            "predict_noise",
            tensors=tensors,
            timestep=int(timestep),
            prompt=prompt,
            ref_weight=float(ref_weight),
            guidance=float(guidance),
        )
        out = payload_to_tensor(response["result"]["tensors"]["result"])
        if out.shape != np.asarray(latent).shape:
            raise ProtocolError(
                f"predict_noise returned shape {out.shape}, expected {np.asarray(latent).shape}"
            )
        return out

    def encode_image(self, img: codec.ImageBuffer) -> np.ndarray:
        pixels = np.moveaxis(img.data.astype(np.float64), -1, 0)
        response = self.call("encode", tensors={"image": tensor_to_payload(pixels)})
        return payload_to_tensor(response["result"]["tensors"]["result"])

    def decode_latent(self, z: np.ndarray) -> codec.ImageBuffer:
        response = self.call("decode", tensors={"latent": tensor_to_payload(z)})
        pixels = payload_to_tensor(response["result"]["tensors"]["result"])
        data = np.rint(np.clip(np.moveaxis(pixels, 0, -1), 0.0, 255.0)).astype(np.uint8)
        return codec.ImageBuffer(data)


def connect(address: str, timeout: float = 30.0) -> Session:
    """Open a session to ``host:port`` (an optional ``tcp:`` prefix is
    accepted)."""
    addr = address.removeprefix("tcp:")
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"backend address must be host:port, got {address!r}")
    try:
        sock = socket.create_connection((host, int(port)), timeout=timeout)
    except OSError as exc:
        raise ConnectError(f"cannot connect to {address}: {exc}") from None
    return Session(sock)


# ----------------------------------------------------------- loopback servers


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            line = self.rfile.readline()
            if not line:
                return
            try:
                request = decode_frame(line)
            except ProtocolError as exc:
                self.wfile.write(
                    encode_frame({"id": 0, "error": {"code": "protocol", "message": str(exc)}})
                )
                return
            response = self.server.owner.respond(request)  # type: ignore[attr-defined]
            self.wfile.write(encode_frame(response))
            self.wfile.flush()


class _LoopbackServer:
    """Threaded localhost TCP server around a ``respond`` method."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socketserver.ThreadingTCPServer((host, port), _Handler, bind_and_activate=True)
        self._server.daemon_threads = True
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "_LoopbackServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "_LoopbackServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _error(self, request: dict, code: str, message: str) -> dict:
        return {"id": request.get("id", 0), "error": {"code": code, "message": message}}

    def respond(self, request: dict) -> dict:  # pragma: no cover - overridden
        raise NotImplementedError


class EchoServer(_LoopbackServer):
    """Protocol fixture: echoes every tensor back unchanged."""

    latent_dims = (4, 64, 64)

    def respond(self, request: dict) -> dict:
        op = request.get("op")
        rid = request.get("id", 0)
        if op == "info":
            return {
                "id": rid,
                "result": {
                    "protocol_version": PROTOCOL_VERSION,
                    "latent_dims": list(self.latent_dims),
                    "schedule_base": SCHEDULE_BASE,
                    "concurrency_safe": False,
                },
            }
        if op in ("predict_noise", "encode", "decode"):
            tensors = request.get("tensors", {})
            key = "latent" if "latent" in tensors else "image"
            if key not in tensors:
                return self._error(request, "bad_request", f"{op} needs a tensor payload")
            return {"id": rid, "result": {"tensors": {"result": tensors[key]}}}
        return self._error(request, "bad_op", f"unknown op {op!r}")


class ToyServer(_LoopbackServer):
    """Serves the toy codec and closed-form predictor over the protocol.

    Timesteps arrive as base-schedule indices; the cumulative signal
    coefficient is looked up on the 1000-step base grid, which matches the
    client's subsampled values exactly.
    """

    def __init__(self, image_size: int = 64, host: str = "127.0.0.1", port: int = 0):
        super().__init__(host=host, port=port)
        self.latent_dims = (codec.TOY_CHANNELS, image_size // 4, image_size // 4)
        sqrt_beta = np.linspace(math.sqrt(BETA_START), math.sqrt(BETA_END), BASE_STEPS)
        self._alpha_bar_base = np.concatenate([[1.0], np.cumprod(1.0 - sqrt_beta**2)])

    def _predict(self, request: dict) -> np.ndarray:
        tensors = request["tensors"]
        latent = payload_to_tensor(tensors["latent"])
        t = int(request["timestep"])
        if not 1 <= t <= BASE_STEPS:
            raise ValueError(f"timestep {t} outside [1, {BASE_STEPS}]")
        a = self._alpha_bar_base[t]
        mu = _prompt_pattern(str(request.get("prompt", "")), latent.shape, TOY_PATTERN_STD)
        ref_weight = float(request.get("ref_weight", 0.0))
        if "ref_latent" in tensors and ref_weight > 0.0:
            mu = (1.0 - ref_weight) * mu + ref_weight * payload_to_tensor(tensors["ref_latent"])
        shrink = TOY_SIGMA0**2 * math.sqrt(a) / (a * TOY_SIGMA0**2 + 1.0 - a)
        x0 = mu + shrink * (latent - math.sqrt(a) * mu)
        return (latent - math.sqrt(a) * x0) / math.sqrt(1.0 - a)

    def respond(self, request: dict) -> dict:
        op = request.get("op")
        rid = request.get("id", 0)
        try:
            if op == "info":
                return {
                    "id": rid,
                    "result": {
                        "protocol_version": PROTOCOL_VERSION,
                        "latent_dims": list(self.latent_dims),
                        "schedule_base": SCHEDULE_BASE,
                        "concurrency_safe": True,
                    },
                }
            if op == "predict_noise":
                out = self._predict(request)
            elif op == "encode":
                pixels = payload_to_tensor(request["tensors"]["image"])
                img = codec.ImageBuffer(
                    np.rint(np.clip(np.moveaxis(pixels, 0, -1), 0.0, 255.0)).astype(np.uint8)
                )
                out = codec.toy_encode(img)
            elif op == "decode":
                img = codec.toy_decode(payload_to_tensor(request["tensors"]["latent"]))
                out = np.moveaxis(img.data.astype(np.float64), -1, 0)
            else:
                return self._error(request, "bad_op", f"unknown op {op!r}")
            return {"id": rid, "result": {"tensors": {"result": tensor_to_payload(out)}}}
        except (KeyError, ValueError, ProtocolError) as exc:
            return self._error(request, "bad_request", str(exc))
