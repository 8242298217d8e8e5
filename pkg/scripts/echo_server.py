#!/usr/bin/env python3
"""Run a bundled loopback backend server (echo fixture or toy-serving)."""

import argparse
import time

from midas.backend import EchoServer, ToyServer


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", choices=["echo", "toy"], default="echo")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--image-size", type=int, default=64, help="toy mode only")
    args = parser.parse_args()
    if args.mode == "echo":
        server = EchoServer(host=args.host, port=args.port)
    else:
        server = ToyServer(image_size=args.image_size, host=args.host, port=args.port)
    server.start()
    print(f"{args.mode} server listening on {server.address}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
