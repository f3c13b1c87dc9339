"""A small threaded HTTP server exposing a local backend over the wire protocol.

Used by the tests and for trying the remote client without a real model
server. With ``table`` set, every /v1/next request returns that fixed list
of ``(id, text, logprob)`` rows.
"""

from __future__ import annotations

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from cgr.errors import CGRError


class _Handler(BaseHTTPRequestHandler):
    server_version = "cgr-stub/0.1"

    def log_message(self, fmt, *args):
        pass

    def _reply(self, status, obj):
        data = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        stub = self.server.stub
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except ValueError:
            self._reply(400, {"error": "invalid JSON"})
            return
        try:
            if self.path == "/v1/tokenize":
                toks = stub.backend.tokenize(body["text"])
                self._reply(200, {"ids": [t.id for t in toks], "texts": [t.text for t in toks]})
            elif self.path == "/v1/next":
                self._reply(200, {"candidates": stub.next_rows(body["context_ids"], int(body["top_k"]))})
            else:
                self._reply(404, {"error": f"no route {self.path}"})
        except (KeyError, TypeError, ValueError, CGRError) as exc:
            self._reply(400, {"error": str(exc)})


class StubServer:
    def __init__(self, backend, table=None, host="127.0.0.1", port=0):
        self.backend = backend
        self.table = table
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.stub = self
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def next_rows(self, context_ids, top_k):
        if self.table is not None:
            return [{"id": i, "text": t, "logprob": lp} for i, t, lp in self.table[:top_k]]
        by_id = self.backend.vocabulary.by_id
        context = [by_id[int(i)] for i in context_ids]
        dist = self.backend.next_distribution(context, top_k)
        return [
            {"id": t.id, "text": t.text, "logprob": math.log(p) if p > 0 else -1e30}
            for t, p in dist.candidates
        ]

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._httpd.serve_forever()

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
