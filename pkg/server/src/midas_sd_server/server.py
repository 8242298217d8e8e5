"""TCP server implementing info/encode/decode/predict_noise over the
newline-JSON tensor protocol.

Requests are handled serially per connection; the server is stateless
across requests apart from the loaded model weights.  All scheduling
lives client-side: timesteps arrive as base-schedule indices.
"""

from __future__ import annotations

import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from . import protocol
from .model import BASE_STEPS, LatentModel, build_reference_model, load_model

__all__ = ["ServerConfig", "BackendServer", "serve"]


@dataclass(frozen=True)
class ServerConfig:
    checkpoint: str = "reference"  # "reference" or a checkpoint file path
    host: str = "127.0.0.1"
    port: int = 0
    image_size: int = 512
    guidance_default: float = 3.0
    device: str = "cpu"

    def advertised_dims(self) -> tuple[int, int, int]:
        return (4, self.image_size // 8, self.image_size // 8)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        while True:
            line = self.rfile.readline()
            if not line:
                return
            try:
                request = protocol.decode_frame(line)
            except protocol.ProtocolError as exc:
                self.wfile.write(
                    protocol.encode_frame(protocol.error_response(0, "protocol", str(exc)))
                )
                return
            response = self.server.owner.respond(request)  # type: ignore[attr-defined]
            self.wfile.write(protocol.encode_frame(response))
            self.wfile.flush()


class BackendServer:
    """Model-backed protocol server.

    Refuses to start when the loaded checkpoint's latent geometry differs
    from the advertised dimensions.
    """

    def __init__(self, config: ServerConfig, model: LatentModel | None = None):
        self.config = config
        if model is None:
            model = build_reference_model() if config.checkpoint == "reference" else load_model(config.checkpoint)
        self.model = model
        advertised = config.advertised_dims()
        probe = model.latent_dims(config.image_size, config.image_size)
        if probe != advertised:
            raise ValueError(
                f"checkpoint latent dims {probe} differ from advertised {advertised}"
            )
        self._server = socketserver.ThreadingTCPServer(
            (config.host, config.port), _Handler, bind_and_activate=True
        )
        self._server.daemon_threads = True
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "BackendServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "BackendServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def serve_forever(self) -> None:
        self._thread.start()
        self._thread.join()

    # ------------------------------------------------------------- handlers

    def respond(self, request: dict) -> dict:
        op = request.get("op")
        rid = request.get("id", 0)
        try:
            if op == "info":
                return protocol.result_response(
                    rid,
                    {
                        "protocol_version": protocol.PROTOCOL_VERSION,
                        "latent_dims": list(self.config.advertised_dims()),
                        "schedule_base": protocol.SCHEDULE_BASE,
                        "concurrency_safe": False,
                    },
                )
            if op == "predict_noise":
                return protocol.result_response(rid, self._predict(request))
            if op == "encode":
                return protocol.result_response(rid, self._encode(request))
            if op == "decode":
                return protocol.result_response(rid, self._decode(request))
            return protocol.error_response(rid, "bad_op", f"unknown op {op!r}")
        except (KeyError, ValueError, protocol.ProtocolError) as exc:
            return protocol.error_response(rid, "bad_request", str(exc))

    def _predict(self, request: dict) -> dict:
        tensors = request["tensors"]
        latent = protocol.payload_to_tensor(tensors["latent"])
        if latent.ndim != 3 or latent.shape[0] != 4:
            raise ValueError(f"latent must be (4, H, W), got {latent.shape}")
        timestep = int(request["timestep"])
        if not 0 <= timestep <= BASE_STEPS:
            raise ValueError(f"timestep {timestep} outside [0, {BASE_STEPS}]")
        ref = None
        if "ref_latent" in tensors:
            ref = protocol.payload_to_tensor(tensors["ref_latent"])
        eps = self.model.predict_noise(
            latent,
            timestep,
            str(request.get("prompt", "")),
            ref,
            float(request.get("ref_weight", 0.0)),
            float(request.get("guidance", self.config.guidance_default)),
        )
        return {"tensors": {"result": protocol.tensor_to_payload(eps)}}

    def _encode(self, request: dict) -> dict:
        pixels = protocol.payload_to_tensor(request["tensors"]["image"])
        if pixels.ndim != 3 or pixels.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {pixels.shape}")
        if pixels.shape[1] % 8 or pixels.shape[2] % 8:
            raise ValueError(f"image {pixels.shape} not divisible by 8")
        z = self.model.encode(pixels)
        return {"tensors": {"result": protocol.tensor_to_payload(z)}}

    def _decode(self, request: dict) -> dict:
        latent = protocol.payload_to_tensor(request["tensors"]["latent"])
        if latent.ndim != 3 or latent.shape[0] != 4:
            raise ValueError(f"latent must be (4, H, W), got {latent.shape}")
        pixels = np.clip(self.model.decode(latent), 0.0, 255.0)
        return {"tensors": {"result": protocol.tensor_to_payload(pixels)}}


def serve(config: ServerConfig) -> None:
    server = BackendServer(config)
    print(f"serving on {server.address}", flush=True)
    server.serve_forever()
