import json
import time
import urllib.error
import urllib.request

import pytest

from cryoscan.server import ApiServer
from cryoscan.service import SessionService


@pytest.fixture()
def server(cfg):
    svc = SessionService(cfg, session_id="http")
    srv = ApiServer(svc, port=0).start()
    yield srv
    srv.stop()


def api(server, method, path, body=None):
    url = f"http://127.0.0.1:{server.port}{path}"
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


class TestHttpApi:
    def test_status(self, server):
        code, st = api(server, "GET", "/status")
        assert code == 200
        assert st["state"] == "idle"
        assert st["mirror"]["vx"] == 0.0

    def test_steer_round_trip(self, server):
        code, ack = api(server, "POST", "/steer", {"vx": 0.25, "vy": -0.5})
        assert code == 200
        assert ack["commanded"] == {"vx": 0.25, "vy": -0.5}
        assert ack["predicted_mm"] is not None

    def test_steer_validation(self, server):
        code, err = api(server, "POST", "/steer", {"vx": 3.0, "vy": 0.0})
        assert code == 400
        assert "error" in err

    def test_source_band_validation(self, server):
        code, _ = api(server, "POST", "/source",
                      {"on": True, "wavelength_nm": 650.0, "power_w": 1e-6})
        assert code == 200
        code, err = api(server, "POST", "/source",
                        {"on": True, "wavelength_nm": 2500.0})
        assert code == 400

    def test_scan_lifecycle_and_map_csv(self, server):
        code, out = api(server, "POST", "/scan", {
            "plan": {"kind": "grid", "vx_lo": 0.0, "vx_hi": 0.5,
                     "vy_lo": 0.0, "vy_hi": 0.5, "nx": 3, "ny": 3},
            "seed": 5,
        })
        assert code == 200
        scan_id = out["scan_id"]
        deadline = time.time() + 30
        while time.time() < deadline:
            code, st = api(server, "GET", f"/scan/{scan_id}")
            if st["state"] == "done":
                break
            time.sleep(0.02)
        assert st["state"] == "done"

        url = f"http://127.0.0.1:{server.port}/scan/{scan_id}/map"
        with urllib.request.urlopen(url, timeout=10) as resp:
            text = resp.read().decode()
        assert resp.headers["Content-Type"].startswith("text/csv")
        from cryoscan.scanning import load_map
        import tempfile, pathlib
        with tempfile.TemporaryDirectory() as d:
            p = pathlib.Path(d) / "m.csv"
            p.write_text(text)
            m = load_map(p)
        assert len(m.samples) == 9

    def test_busy_scan_conflict(self, server):
        code, out = api(server, "POST", "/scan", {
            "plan": {"kind": "grid", "vx_lo": 0.0, "vx_hi": 1.0,
                     "vy_lo": 0.0, "vy_hi": 1.0, "nx": 41, "ny": 41},
        })
        assert code == 200
        code2, err = api(server, "POST", "/steer", {"vx": 0.1, "vy": 0.1})
        assert code2 == 409
        code3, _ = api(server, "POST", f"/scan/{out['scan_id']}/cancel")
        assert code3 == 200

    def test_unknown_endpoint_404(self, server):
        code, _ = api(server, "GET", "/wibble")
        assert code == 404
        code, _ = api(server, "GET", "/scan/scan-99")
        assert code == 404

    def test_events_stream_and_resume(self, server):
        api(server, "POST", "/steer", {"vx": 0.1, "vy": 0.2})
        api(server, "POST", "/source", {"on": True, "wavelength_nm": 650.0,
                                        "power_w": 1e-6, "hold_s": 3.0})

        url = f"http://127.0.0.1:{server.port}/events?from_seq=0"
        events = []
        with urllib.request.urlopen(url, timeout=10) as resp:
            assert resp.headers["Content-Type"].startswith("text/event-stream")
            block = []
            while len(events) < 5:
                line = resp.readline().decode().rstrip("\n")
                if line == "":
                    if block:
                        data = [l[6:] for l in block if l.startswith("data: ")]
                        events.append(json.loads(data[0]))
                        block = []
                else:
                    block.append(line)
        seqs = [e["seq"] for e in events]
        assert seqs == sorted(seqs)
        kinds = {e["kind"] for e in events}
        assert "session" in kinds and "steer" in kinds and "sample" in kinds

        # resume from the middle: the replay starts strictly after from_seq
        url = f"http://127.0.0.1:{server.port}/events?from_seq={seqs[2]}"
        with urllib.request.urlopen(url, timeout=10) as resp:
            first = None
            while first is None:
                line = resp.readline().decode().rstrip("\n")
                if line.startswith("data: "):
                    first = json.loads(line[6:])
        assert first["seq"] == seqs[2] + 1
