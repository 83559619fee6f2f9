"""Streaming affect inference over newline-delimited JSON on TCP.

Requests:
  {"type": "frame", "session": S, "seq": n, "png_b64": "..."}
  {"type": "reset", "session": S}

Replies:
  {"type": "affect", "session": S, "seq": n, "value": 0.123456}
  {"type": "warmup", "session": S, "seq": n, "frames": k}   (first 3 frames)
  {"type": "ack", "session": S, "op": "reset"}
  {"type": "error", "code": ..., "detail": ...}

Frames are preprocessed exactly like offline ingestion (resize, luma,
[0, 1]) and predictions use the same single-stack forward pass, so a
streamed sequence reproduces predict_video bit for bit. Affect values are
printed with 6 decimals. Messages are UTF-8, LF-terminated, at most 8 MiB.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from pem.ingest import image_to_pixels
from pem.model.train import STACK_DEPTH, ModelBundle, forward

MAX_MESSAGE_BYTES = 8 * 1024 * 1024
DEFAULT_SESSION_TIMEOUT_S = 300.0
DEFAULT_MAX_SESSIONS = 64


@dataclass
class Session:
    id: str
    ring: deque = field(default_factory=lambda: deque(maxlen=STACK_DEPTH))
    seq: int = 0
    last_active: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _error(code: str, detail: str) -> str:
    return json.dumps({"type": "error", "code": code, "detail": detail})


class AffectService:
    """Session bookkeeping and message handling, independent of sockets."""

    def __init__(
        self,
        bundle: ModelBundle,
        max_sessions: int = DEFAULT_MAX_SESSIONS,
        session_timeout_s: float = DEFAULT_SESSION_TIMEOUT_S,
        clock=time.monotonic,
    ):
        self.bundle = bundle
        self.max_sessions = max_sessions
        self.session_timeout_s = session_timeout_s
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()

    def _evict_idle(self, now: float) -> None:
        stale = [
            sid
            for sid, sess in self._sessions.items()
            if now - sess.last_active > self.session_timeout_s
        ]
        for sid in stale:
            del self._sessions[sid]

    def handle_line(self, line: str) -> str:
        """One request line in, one reply line out (without newlines)."""
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return _error("bad_json", f"malformed JSON: {exc}")
        if not isinstance(msg, dict):
            return _error("bad_request", "message must be a JSON object")
        mtype = msg.get("type")
        if mtype == "frame":
            return self._handle_frame(msg)
        if mtype == "reset":
            return self._handle_reset(msg)
        return _error("bad_request", f"unknown message type {mtype!r}")

    def _get_session(self, msg: dict, create: bool) -> Session | str:
        sid = msg.get("session")
        if not isinstance(sid, str) or not sid:
            return _error("bad_request", "missing session id")
        now = self.clock()
        with self._registry_lock:
            self._evict_idle(now)
            sess = self._sessions.get(sid)
            if sess is None:
                if not create:
                    return _error("unknown_session", f"unknown session {sid!r}")
                if len(self._sessions) >= self.max_sessions:
                    return _error("too_many_sessions", f"limit {self.max_sessions} reached")
                sess = Session(sid, last_active=now)
                self._sessions[sid] = sess
            return sess

    def _handle_frame(self, msg: dict) -> str:
        sess = self._get_session(msg, create=True)
        if isinstance(sess, str):
            return sess
        seq = msg.get("seq")
        if not isinstance(seq, int):
            return _error("bad_request", "seq must be an integer")
        payload = msg.get("png_b64")
        if not isinstance(payload, str):
            return _error("bad_request", "missing png_b64 payload")
        with sess.lock:
            if seq <= sess.seq:
                return _error(
                    "stale_frame", f"stale frame: seq {seq} not after {sess.seq}"
                )
            try:
                png = base64.b64decode(payload, validate=True)
                with Image.open(io.BytesIO(png)) as img:
                    pixels = image_to_pixels(img, self.bundle.config.side)
            except (binascii.Error, OSError, ValueError) as exc:
                return _error("bad_image", f"undecodable image: {exc}")
            sess.seq = seq
            sess.last_active = self.clock()
            sess.ring.append(pixels)
            if len(sess.ring) < STACK_DEPTH:
                return json.dumps(
                    {
                        "type": "warmup",
                        "session": sess.id,
                        "seq": seq,
                        "frames": len(sess.ring),
                    }
                )
            value = forward(self.bundle, np.stack(sess.ring))
            return (
                f'{{"type": "affect", "session": {json.dumps(sess.id)}, '
                f'"seq": {seq}, "value": {value:.6f}}}'
            )

    def _handle_reset(self, msg: dict) -> str:
        sess = self._get_session(msg, create=False)
        if isinstance(sess, str):
            return sess
        with sess.lock:
            sess.ring.clear()
            sess.seq = 0
            sess.last_active = self.clock()
        return json.dumps({"type": "ack", "session": sess.id, "op": "reset"})


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: AffectService = self.server.service  # type: ignore[attr-defined]
        while True:
            try:
                line = self.rfile.readline(MAX_MESSAGE_BYTES + 2)
            except (ConnectionResetError, OSError):
                return
            if not line:
                return
            if len(line) > MAX_MESSAGE_BYTES:
                # cannot resync mid-message, so reply and drop the connection
                self._reply(_error("too_large", f"message exceeds {MAX_MESSAGE_BYTES} bytes"))
                return
            try:
                text = line.decode("utf-8")
            except UnicodeDecodeError as exc:
                self._reply(_error("bad_json", f"not UTF-8: {exc}"))
                continue
            self._reply(service.handle_line(text))

    def _reply(self, reply: str) -> None:
        try:
            self.wfile.write(reply.encode("utf-8") + b"\n")
        except (BrokenPipeError, OSError):
            pass


class AffectServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: AffectService):
        super().__init__(address, _Handler)
        self.service = service


def serve(
    bundle: ModelBundle,
    host: str = "127.0.0.1",
    port: int = 7877,
    max_sessions: int = DEFAULT_MAX_SESSIONS,
    session_timeout_s: float = DEFAULT_SESSION_TIMEOUT_S,
) -> AffectServer:
    """Create a server (not yet running); call serve_forever() to block."""
    service = AffectService(bundle, max_sessions, session_timeout_s)
    return AffectServer((host, port), service)
