"""Read-only HTTP API over a pre-built hierarchy bundle.

The bundle is loaded once into immutable state; every request is answered
from stored assignment matrices (click propagation needs no model
execution), so concurrent handling is safe without locking. Responses are
JSON with sorted keys, making identical requests byte-identical.
"""

from __future__ import annotations

import json
import mimetypes
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import applications
from .errors import EngineError, OutOfBoundsClick
from .graphs import Hierarchy, hierarchy_from_json
from .rle import labels_payload, mask_payload
from .tensor_io import SuperpixelMap, load_tensor, validate_label_map


@dataclass(frozen=True)
class BundleState:
    hierarchy: Hierarchy
    sp: SuperpixelMap
    grouping: list[np.ndarray]
    gradcam: dict[int, dict]
    image_bytes: bytes | None

    @property
    def meta(self) -> dict:
        return {
            "levels": self.hierarchy.num_levels,
            "sizes": self.hierarchy.sizes,
            "width": self.sp.width,
            "height": self.sp.height,
            "tdmp": self.hierarchy.config.tdmp_enabled,
            "has_image": self.image_bytes is not None,
            "gradcam_levels": sorted(self.gradcam),
        }


def load_bundle(bundle_dir: Path) -> BundleState:
    hierarchy = hierarchy_from_json((bundle_dir / "hierarchy.json").read_text())
    sp = validate_label_map(load_tensor(bundle_dir / "labels.dgmt"))
    grouping = applications.grouping_maps(hierarchy, sp)
    gradcam = {}
    for level in range(1, hierarchy.num_levels + 1):
        path = bundle_dir / f"gradcam_l{level}.json"
        if path.exists():
            gradcam[level] = json.loads(path.read_text())
    image_path = bundle_dir / "image.ppm"
    image_bytes = image_path.read_bytes() if image_path.exists() else None
    return BundleState(
        hierarchy=hierarchy, sp=sp, grouping=grouping, gradcam=gradcam, image_bytes=image_bytes
    )


def _click_response(state: BundleState, body: dict) -> dict:
    try:
        level = int(body["level"])
        raw = body["clicks"]
        clicks = tuple(
            applications.Click(
                x=int(c["x"]),
                y=int(c["y"]),
                polarity=str(c.get("polarity", applications.POSITIVE)),
            )
            for c in raw
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise _BadRequest(f"malformed click body: {exc}") from exc
    if not 1 <= level <= state.hierarchy.num_levels:
        raise _NotFound(f"level {level} out of range")
    mask = applications.click_propagate(
        state.hierarchy, state.sp, applications.ClickSet(clicks=clicks, level=level)
    )
    return {"mask": mask_payload(mask), "level": level, "num_clicks": len(clicks)}


class _BadRequest(Exception):
    pass


class _NotFound(Exception):
    pass


class BundleHandler(BaseHTTPRequestHandler):
    server_version = "hiergraph/0.1"

    # the server instance carries .state (BundleState) and .ui_dir

    def log_message(self, fmt, *args):  # quiet by default
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    def _send_json(self, payload: dict, status: int = 200):
        body = json.dumps(payload, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, body: bytes, content_type: str, status: int = 200):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, message: str):
        self._send_json({"error": message}, status)

    def do_GET(self):
        state: BundleState = self.server.state
        path = self.path.split("?", 1)[0]
        try:
            if path == "/api/meta":
                self._send_json(state.meta)
            elif path.startswith("/api/levels/") and path.endswith("/labels"):
                level_str = path[len("/api/levels/") : -len("/labels")]
                self._get_labels(state, level_str)
            elif path.startswith("/api/gradcam/"):
                self._get_gradcam(state, path[len("/api/gradcam/") :])
            elif path == "/api/image":
                if state.image_bytes is None:
                    self._send_error_json(404, "bundle has no image")
                else:
                    self._send_bytes(state.image_bytes, "image/x-portable-pixmap")
            else:
                self._serve_static(path)
        except _NotFound as exc:
            self._send_error_json(404, str(exc))
        except EngineError as exc:
            self._send_error_json(422, str(exc))

    def _get_labels(self, state: BundleState, level_str: str):
        try:
            level = int(level_str)
        except ValueError:
            raise _NotFound(f"bad level {level_str!r}")
        if not 1 <= level <= state.hierarchy.num_levels:
            raise _NotFound(f"level {level} out of range")
        payload = labels_payload(state.grouping[level - 1], state.hierarchy.sizes[level - 1])
        payload["level"] = level
        self._send_json(payload)

    def _get_gradcam(self, state: BundleState, level_str: str):
        try:
            level = int(level_str)
        except ValueError:
            raise _NotFound(f"bad level {level_str!r}")
        if level not in state.gradcam:
            raise _NotFound(f"no heat stored for level {level}")
        payload = dict(state.gradcam[level])
        payload["level"] = level
        self._send_json(payload)

    def _serve_static(self, path: str):
        ui_dir: Path | None = self.server.ui_dir
        if ui_dir is None:
            raise _NotFound(f"unknown route {path}")
        rel = path.lstrip("/") or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            raise _NotFound(f"unknown route {path}")
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._send_bytes(target.read_bytes(), ctype)

    def do_POST(self):
        state: BundleState = self.server.state
        path = self.path.split("?", 1)[0]
        if path != "/api/click":
            self._send_error_json(404, f"unknown route {path}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(body, dict):
                raise _BadRequest("body must be a JSON object")
            response = _click_response(state, body)
        except (_BadRequest, json.JSONDecodeError) as exc:
            self._send_error_json(400, str(exc))
            return
        except _NotFound as exc:
            self._send_error_json(404, str(exc))
            return
        except OutOfBoundsClick as exc:
            self._send_error_json(422, str(exc))
            return
        except EngineError as exc:
            self._send_error_json(422, str(exc))
            return
        self._send_json(response)


def make_server(bundle_dir: Path, port: int = 0, ui_dir: Path | None = None) -> ThreadingHTTPServer:
    state = load_bundle(Path(bundle_dir))
    server = ThreadingHTTPServer(("127.0.0.1", port), BundleHandler)
    server.state = state
    server.ui_dir = ui_dir
    return server


def serve(bundle_dir: Path, port: int, ui_dir: Path | None = None) -> None:
    server = make_server(bundle_dir, port, ui_dir)
    host, actual_port = server.server_address
    print(f"serving bundle on http://{host}:{actual_port}/ (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
