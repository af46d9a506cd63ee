"""Newline-delimited JSON framing for the harness wire protocol."""

from __future__ import annotations

import json


class FrameError(ValueError):
    pass


def decode_frame(line: str) -> dict:
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as error:
        raise FrameError(f"undecodable frame: {error}") from error
    if not isinstance(frame, dict) or "type" not in frame:
        raise FrameError("frame must be an object with a 'type' field")
    return frame


def encode_frame(frame: dict) -> str:
    return json.dumps(frame)
