"""JSON-over-HTTP control API with a server-sent event stream.

Endpoints:
    GET  /status              session snapshot
    POST /steer               {"vx", "vy"} or {"to_mm": [x, y]}, opt "override"
    POST /source              {"on", "wavelength_nm"?, "power_w"?, "hold_s"?}
    POST /scan                {"preset": name} or {"plan": {...}}, opt "seed"
    GET  /scan/{id}           scan progress
    GET  /scan/{id}/map       response map as CSV (snapshot while running)
    POST /scan/{id}/cancel    cooperative cancellation
    GET  /events              text/event-stream of {seq, t, kind, payload};
                              resumes after ?from_seq=N or Last-Event-ID

Error mapping: validation 400, interlock 409, busy 409, unknown id 404,
fault 500. Built on the stdlib threading HTTP server so concurrent readers
and one SSE consumer per connection need no extra dependencies.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .calibration import OutOfRangeError
from .config import _parse_plan  # shared strict plan schema
from .scanning import map_to_csv
from .service import BusyError, FaultError, SessionService
from .steering import InterlockError

__all__ = ["ApiServer", "serve"]


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "cryoscan"

    # quiet by default; the CLI passes log_fn for verbose mode
    def log_message(self, fmt, *args):
        log = getattr(self.server, "log_fn", None)
        if log is not None:
            log(fmt % args)

    @property
    def session(self) -> SessionService:
        return self.server.session

    # -- plumbing -------------------------------------------------------------

    def _send_json(self, obj, code=200):
        body = json.dumps(obj).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, code, message):
        self._send_json({"error": message}, code=code)

    def _read_body(self):
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid JSON body: {exc}") from None

    def _dispatch(self, fn):
        try:
            fn()
        except (BusyError, InterlockError) as exc:
            self._send_error_json(409, str(exc))
        except (KeyError,) as exc:
            self._send_error_json(404, str(exc))
        except (ValueError, OutOfRangeError) as exc:
            self._send_error_json(400, str(exc))
        except FaultError as exc:
            self._send_error_json(500, str(exc))
        except BrokenPipeError:
            pass

    # -- GET --------------------------------------------------------------------

    def do_GET(self):
        path = self.path.split("?")[0].rstrip("/")
        if path == "/status":
            self._dispatch(lambda: self._send_json(self.session.status()))
        elif path == "/events":
            self._dispatch(self._stream_events)
        elif path.startswith("/scan/") and path.endswith("/map"):
            scan_id = path[len("/scan/"):-len("/map")]
            self._dispatch(lambda: self._send_map(scan_id))
        elif path.startswith("/scan/"):
            scan_id = path[len("/scan/"):]
            self._dispatch(lambda: self._send_json(self.session.scan_status(scan_id)))
        else:
            self._send_error_json(404, f"no such endpoint {path!r}")

    def _send_map(self, scan_id):
        csv = map_to_csv(self.session.fetch_map(scan_id))
        body = csv.encode()
        self.send_response(200)
        self.send_header("Content-Type", "text/csv; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _stream_events(self):
        query = ""
        if "?" in self.path:
            query = self.path.split("?", 1)[1]
        from_seq = 0
        for part in query.split("&"):
            if part.startswith("from_seq="):
                from_seq = int(part.split("=", 1)[1])
        if "Last-Event-ID" in self.headers:
            from_seq = int(self.headers["Last-Event-ID"])

        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        seq = from_seq
        try:
            while not self.server.stopping.is_set():
                events = self.session.wait_events(seq, timeout=1.0)
                for ev in events:
                    payload = json.dumps(ev.to_dict())
                    chunk = f"id: {ev.seq}\ndata: {payload}\n\n".encode()
                    self.wfile.write(chunk)
                    seq = ev.seq
                if events:
                    self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass

    # -- POST -------------------------------------------------------------------

    def do_POST(self):
        path = self.path.split("?")[0].rstrip("/")
        if path == "/steer":
            self._dispatch(self._post_steer)
        elif path == "/source":
            self._dispatch(self._post_source)
        elif path == "/scan":
            self._dispatch(self._post_scan)
        elif path.startswith("/scan/") and path.endswith("/cancel"):
            scan_id = path[len("/scan/"):-len("/cancel")]
            self._dispatch(lambda: self._send_json(self.session.cancel_scan(scan_id)))
        else:
            self._send_error_json(404, f"no such endpoint {path!r}")

    def _post_steer(self):
        body = self._read_body()
        allowed = {"vx", "vy", "to_mm", "override"}
        if set(body) - allowed:
            raise ValueError(f"unknown steer fields {sorted(set(body) - allowed)}")
        ack = self.session.steer(
            vx=body.get("vx"), vy=body.get("vy"),
            to_mm=tuple(body["to_mm"]) if "to_mm" in body else None,
            override=bool(body.get("override", False)),
        )
        self._send_json(ack)

    def _post_source(self):
        body = self._read_body()
        allowed = {"on", "wavelength_nm", "power_w", "hold_s", "sample_every_s"}
        if set(body) - allowed:
            raise ValueError(f"unknown source fields {sorted(set(body) - allowed)}")
        if "on" not in body:
            raise ValueError("source command needs 'on': true|false")
        ack = self.session.source_control(
            on=bool(body["on"]),
            wavelength=body.get("wavelength_nm"),
            power=body.get("power_w"),
            hold_s=float(body.get("hold_s", 0.0)),
            sample_every_s=float(body.get("sample_every_s", 1.0)),
        )
        self._send_json(ack)

    def _post_scan(self):
        body = self._read_body()
        allowed = {"preset", "plan", "seed"}
        if set(body) - allowed:
            raise ValueError(f"unknown scan fields {sorted(set(body) - allowed)}")
        plan = None
        if "plan" in body:
            plan = _parse_plan(body["plan"], "plan")
        handle = self.session.run_scan(plan=plan, preset=body.get("preset"),
                                       seed=body.get("seed"))
        self._send_json({"scan_id": handle.scan_id,
                         "points_total": handle.points_total})


class ApiServer:
    """Threaded HTTP server wrapper with clean startup/shutdown for tests."""

    def __init__(self, session: SessionService, host: str = "127.0.0.1", port: int = 0,
                 log_fn=None):
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.session = session
        self.httpd.stopping = threading.Event()
        self.httpd.log_fn = log_fn
        self.session = session
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        name="cryoscan-http", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.stopping.set()
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def serve_forever(self):
        try:
            self.httpd.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()


def serve(session: SessionService, host: str = "127.0.0.1", port: int = 8917,
          log_fn=None) -> ApiServer:
    return ApiServer(session, host=host, port=port, log_fn=log_fn).start()
