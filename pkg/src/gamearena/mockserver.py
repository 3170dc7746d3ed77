"""Local HTTP server speaking the three completion wire styles, for offline runs and tests."""

from __future__ import annotations

import json
import random
import re
import threading
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable

from .gateway import MOCK_PATHS

KIND_BY_PATH = {path: kind for kind, path in MOCK_PATHS.items()}
_OPTIONS = re.compile(r":\s*(.+?)\.?\s*$")


@dataclass
class Reply:
    """A scripted response: HTTP ``status`` and, on success, ``text``."""

    text: str = ""
    status: int = 200


Responder = Callable[[str, str], "Reply | str | int"]


def prompt_of(kind: str, body: dict[str, Any]) -> str:
    if kind == "generic_http":
        return body.get("prompt", "")
    messages = body.get("messages") or [{}]
    return messages[-1].get("content", "")


def first_option(kind: str, prompt: str) -> str:
    """Pick the first option listed on the prompt's last line (``... : X, Y.``)."""
    last = prompt.strip().splitlines()[-1] if prompt.strip() else ""
    m = _OPTIONS.search(last)
    if not m:
        return "Hello."
    return m.group(1).split(", ")[0]


def random_option(seed: int = 0) -> Responder:
    rng = random.Random(seed)
    lock = threading.Lock()

    def respond(kind: str, prompt: str) -> str:
        last = prompt.strip().splitlines()[-1] if prompt.strip() else ""
        m = _OPTIONS.search(last)
        if not m:
            return "Hello."
        with lock:
            return rng.choice(m.group(1).split(", "))

    return respond


def wire_payload(kind: str, text: str) -> dict[str, Any]:
    if kind == "openai_style":
        return {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 0, "completion_tokens": 0}}
    if kind == "anthropic_style":
        return {"content": [{"type": "text", "text": text}],
                "usage": {"input_tokens": 0, "output_tokens": 0}}
    return {"text": text}


class MockLLMServer:
    """Threaded mock server.

    ``replies`` is consumed in order (strings become 200 replies, ints become
    bare error statuses); once it is empty ``responder`` answers. Every
    decoded request body is kept in ``requests`` as ``(kind, body)``.
    """

    def __init__(self, replies: Iterable[Reply | str | int] = (), responder: Responder | None = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.replies = deque(replies)
        self.responder = responder or first_option
        self.requests: list[tuple[str, dict[str, Any]]] = []
        self.headers: list[dict[str, str]] = []
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802
                kind = KIND_BY_PATH.get(self.path.rstrip("/"))
                length = int(self.headers.get("content-length", 0))
                raw = self.rfile.read(length)
                if kind is None:
                    self._send(404, {"error": "unknown path"})
                    return
                try:
                    body = json.loads(raw)
                except ValueError:
                    self._send(400, {"error": "invalid json"})
                    return
                reply = server._next(kind, body, dict(self.headers))
                if reply.status != 200:
                    self._send(reply.status, {"error": f"mock status {reply.status}"})
                else:
                    self._send(200, wire_payload(kind, reply.text))

            def _send(self, status: int, payload: dict[str, Any]) -> None:
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("content-type", "application/json")
                self.send_header("content-length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args: Any) -> None:
                pass

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    def _next(self, kind: str, body: dict[str, Any], headers: dict[str, str]) -> Reply:
        with self._lock:
            self.requests.append((kind, body))
            self.headers.append(headers)
            scripted = self.replies.popleft() if self.replies else None
        if scripted is None:
            scripted = self.responder(kind, prompt_of(kind, body))
        if isinstance(scripted, Reply):
            return scripted
        if isinstance(scripted, int):
            return Reply(status=scripted)
        return Reply(text=scripted)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockLLMServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockLLMServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()
