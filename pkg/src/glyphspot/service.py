"""Labeling HTTP service backing the browser UI.

Serves kernel metadata and images, accepts label posts, and appends every
mutation to the JSONL store through one lock (last write wins; deletes are
tombstones). Static UI files, when a bundle directory is supplied, come
from the same server so the tool needs no separate deployment.

API (all JSON unless noted):
  GET    /api/kernels?status=unlabeled|labeled&limit=N -> [{id, url, page, box}]
  GET    /api/kernels/{id}/image                       -> PNG bytes
  POST   /api/labels   {"kernel", "label", ["ts"]}     -> 201 + record
  DELETE /api/labels/{id}                              -> 204 (tombstone)
  GET    /api/progress                                 -> {"labeled", "total"}
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .labels import VALID_LABELS, append_label, replay_labels
from .segmentation import INDEX_NAME

MIME = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}


@dataclass
class KernelInfo:
    id: str
    page: str
    box: list | None


class LabelStore:
    """Kernel registry plus label state, with one serialized writer."""

    def __init__(self, kernels_dir: str | Path, labels_file: str | Path):
        self.kernels_dir = Path(kernels_dir)
        self.labels_file = Path(labels_file)
        self._lock = threading.Lock()
        self.kernels: dict[str, KernelInfo] = {}
        index = self.kernels_dir / INDEX_NAME
        if index.exists():
            for line in index.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self.kernels[rec["kernel"]] = KernelInfo(rec["kernel"], rec.get("page", ""), rec.get("box"))
        else:
            for png in sorted(self.kernels_dir.glob("*.png")):
                self.kernels[png.name] = KernelInfo(png.name, "", None)
        self.state = {k: v for k, v in replay_labels(self.labels_file).items() if k in self.kernels}

    def list_kernels(self, status: str | None, limit: int | None) -> list[KernelInfo]:
        out = []
        for kid, info in self.kernels.items():
            labeled = self.state.get(kid) is not None
            if status == "labeled" and not labeled:
                continue
            if status == "unlabeled" and labeled:
                continue
            out.append(info)
            if limit is not None and len(out) >= limit:
                break
        return out

    def set_label(self, kernel: str, label: str | None, ts: float | None = None) -> dict:
        with self._lock:
            record = append_label(self.labels_file, kernel, label, ts)
            self.state[kernel] = label
        return record

    def progress(self) -> dict:
        labeled = sum(1 for v in self.state.values() if v is not None)
        return {"labeled": labeled, "total": len(self.kernels)}

    def image_path(self, kernel: str) -> Path | None:
        if kernel not in self.kernels:
            return None
        path = self.kernels_dir / kernel
        return path if path.exists() else None


class _Handler(BaseHTTPRequestHandler):
    store: LabelStore
    ui_dir: Path | None

    def log_message(self, *args) -> None:  # stay quiet; logs go to stderr elsewhere
        pass

    def _send_json(self, obj, status=200) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, data: bytes, content_type: str, status=200) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, message: str) -> None:
        self._send_json({"error": message}, status=status)

    def do_GET(self) -> None:
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.split("/") if p]
        if parts[:2] == ["api", "kernels"] and len(parts) == 2:
            query = parse_qs(url.query)
            status = query.get("status", [None])[0]
            if status not in (None, "labeled", "unlabeled"):
                return self._error(400, f"unknown status {status!r}")
            limit = query.get("limit", [None])[0]
            limit = int(limit) if limit is not None else None
            items = [
                {"id": k.id, "url": f"/api/kernels/{k.id}/image", "page": k.page, "box": k.box}
                for k in self.store.list_kernels(status, limit)
            ]
            return self._send_json(items)
        if parts[:2] == ["api", "kernels"] and len(parts) == 4 and parts[3] == "image":
            path = self.store.image_path(parts[2])
            if path is None:
                return self._error(404, "unknown kernel")
            return self._send_bytes(path.read_bytes(), "image/png")
        if parts == ["api", "progress"]:
            return self._send_json(self.store.progress())
        if parts[:1] == ["api"]:
            return self._error(404, "unknown endpoint")
        return self._serve_static(parts)

    def _serve_static(self, parts: list[str]) -> None:
        if self.ui_dir is None:
            return self._send_bytes(
                b"<html><body><h1>glyphspot labeling service</h1>"
                b"<p>No UI bundle configured; the JSON API lives under /api/.</p></body></html>",
                MIME[".html"],
            )
        rel = "/".join(parts) or "index.html"
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            target = self.ui_dir / "index.html"
            if not target.is_file():
                return self._error(404, "not found")
        return self._send_bytes(target.read_bytes(), MIME.get(target.suffix, "application/octet-stream"))

    def do_POST(self) -> None:
        url = urlparse(self.path)
        if url.path != "/api/labels":
            return self._error(404, "unknown endpoint")
        try:
            length = int(self.headers.get("Content-Length", 0))
            record = json.loads(self.rfile.read(length))
            kernel = record["kernel"]
            label = record["label"]
        except (ValueError, KeyError, json.JSONDecodeError):
            return self._error(400, "body must be JSON with kernel and label")
        if label not in VALID_LABELS:
            return self._error(400, f"label must be one of {list(VALID_LABELS)}")
        if kernel not in self.store.kernels:
            return self._error(404, f"unknown kernel {kernel!r}")
        stored = self.store.set_label(kernel, label, record.get("ts"))
        return self._send_json(stored, status=201)

    def do_DELETE(self) -> None:
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.split("/") if p]
        if parts[:2] != ["api", "labels"] or len(parts) != 3:
            return self._error(404, "unknown endpoint")
        kernel = parts[2]
        if kernel not in self.store.kernels:
            return self._error(404, f"unknown kernel {kernel!r}")
        self.store.set_label(kernel, None)
        self.send_response(204)
        self.send_header("Content-Length", "0")
        self.end_headers()


def make_server(
    port: int,
    kernels_dir: str | Path,
    labels_file: str | Path,
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    """Bind the service; caller decides between serve_forever and a thread."""
    store = LabelStore(kernels_dir, labels_file)
    handler = type("Handler", (_Handler,), {"store": store, "ui_dir": Path(ui_dir) if ui_dir else None})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def run_server(port: int, kernels_dir, labels_file, ui_dir=None) -> None:
    server = make_server(port, kernels_dir, labels_file, ui_dir)
    try:
        server.serve_forever()
    finally:
        server.server_close()
