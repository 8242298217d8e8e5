import argparse

from .server import ServerConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="midas-sd-server",
        description="Serve a latent-diffusion model over the newline-JSON tensor protocol.",
    )
    parser.add_argument(
        "--checkpoint",
        default="reference",
        help="checkpoint file path, or 'reference' for the analytic built-in stack",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7331)
    parser.add_argument("--image-size", type=int, default=512)
    parser.add_argument("--guidance", type=float, default=3.0)
    args = parser.parse_args(argv)
    serve(
        ServerConfig(
            checkpoint=args.checkpoint,
            host=args.host,
            port=args.port,
            image_size=args.image_size,
            guidance_default=args.guidance,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
