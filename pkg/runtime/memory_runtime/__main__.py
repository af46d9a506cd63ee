"""Entry point: speak the wire protocol over stdio.

Launched by the evaluation harness as
``python -m memory_runtime --protocol 1 --session <id>``.
"""

from __future__ import annotations

import argparse
import sys

from . import PROTOCOL_VERSION
from .protocol import FrameError, decode_frame, encode_frame
from .server import Server, err_frame


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="memory_runtime")
    parser.add_argument("--protocol", type=int, default=PROTOCOL_VERSION)
    parser.add_argument("--session", default="")
    args = parser.parse_args(argv)

    def send(frame: dict) -> None:
        sys.stdout.write(encode_frame(frame) + "\n")
        sys.stdout.flush()

    if args.protocol != PROTOCOL_VERSION:
        send(err_frame("protocol_error",
                       f"unsupported protocol version {args.protocol} (runtime speaks {PROTOCOL_VERSION})"))
        return 2

    def recv():
        while True:
            line = sys.stdin.readline()
            if not line:
                return None
            if not line.strip():
                continue
            try:
                return decode_frame(line)
            except FrameError as error:
                send(err_frame("protocol_error", str(error)))

    Server(recv, send).serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
