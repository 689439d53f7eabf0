"""Smoke test for the vizarel extension module.

Starts `vizarel serve` on free ports, logs an analytic pendulum run over the
binary protocol using the bindings, then reads the session back from disk
and over HTTP.

    pip install --no-build-isolation ./crates/py
    cargo build --bin vizarel
    python python/smoke.py
"""

import json
import math
import os
import socket
import subprocess
import sys
import tempfile
import time
import urllib.request

import vizarel

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BIN = os.environ.get("VIZAREL_BIN", os.path.join(ROOT, "target", "debug", "vizarel"))


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for(port, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            return socket.create_connection(("127.0.0.1", port), timeout=1.0)
        except OSError:
            time.sleep(0.05)
    raise RuntimeError(f"server did not open port {port}")


def call(sock, buf, message):
    sock.sendall(message)
    while True:
        try:
            reply, used = vizarel.decode_reply(bytes(buf))
            del buf[:used]
            return reply
        except ValueError:
            chunk = sock.recv(4096)
            if not chunk:
                raise RuntimeError("connection closed")
            buf.extend(chunk)


def pendulum(k, amp=1.2, omega=2.0, dt=0.05):
    th = amp * math.cos(omega * k * dt)
    th_dot = -amp * omega * math.sin(omega * k * dt)
    return [math.sin(th), math.cos(th), th_dot], -th_dot, -th * th


def main():
    # pure helpers
    assert vizarel.compute_return([1.0, 1.0, 1.0], 0.5) == 1.75
    assert vizarel.segment_episodes([False, True, False]) == [(0, 2, True), (2, 3, False)]
    try:
        vizarel.Schema([3], [1], reward_dim=0)
        raise AssertionError("reward_dim 0 accepted")
    except ValueError:
        pass

    schema = vizarel.Schema([3], [1], steps=120)
    init = schema.encode_init()
    assert init[:4] == b"VZRL" and init[5] == 0x01

    data_dir = tempfile.mkdtemp(prefix="vizarel-smoke-")
    port, http_port = free_port(), free_port()
    server = subprocess.Popen(
        [BIN, "serve", "--data-dir", data_dir, "--port", str(port), "--http-port", str(http_port)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    try:
        sock = wait_for(port)
        buf = bytearray()
        reply = call(sock, buf, init)
        assert reply == {"kind": "ack", "value": 0}, reply

        # 120 steps in batches of 10, episodes of 40
        for start in range(0, 120, 10):
            obses, actions, rewards, dones = [], [], [], []
            for k in range(start, start + 10):
                s, a, r = pendulum(k)
                obses += s
                actions.append(a)
                rewards.append(r)
                dones.append((k + 1) % 40 == 0)
            reply = call(sock, buf, schema.encode_log_state(obses, actions, rewards, dones))
            assert reply["kind"] == "ack", reply
        assert call(sock, buf, vizarel.encode_flush())["kind"] == "ack"
        sock.close()

        reader = vizarel.SessionReader(os.path.join(data_dir, "session-0"))
        assert reader.schema == schema
        assert len(reader) == 3
        for ep in reader.episodes():
            assert ep["complete"] and ep["n_steps"] == 40, ep
            for step in reader.episode(ep["id"]):
                s = step["s"]
                assert abs(s[0] ** 2 + s[1] ** 2 - 1.0) < 1e-6
        m = reader.metrics()
        assert m["episode_count"] == 3 and m["total_steps"] == 120, m

        with urllib.request.urlopen(f"http://127.0.0.1:{http_port}/api/metrics") as resp:
            remote = json.load(resp)
        for key, value in m.items():
            assert remote[key] == value, (key, remote[key], value)
    finally:
        server.terminate()
        server.wait(timeout=10)

    rows = [[float(c * 10 + (i % 3)), float(i % 5)] for c in range(2) for i in range(10)]
    coords, kl = vizarel.project(rows, perplexity=5.0, iterations=300, seed=1)
    assert len(coords) == 20 and math.isfinite(kl)

    print("smoke ok: 3 episodes, 120 steps, metrics agree with HTTP")


if __name__ == "__main__":
    sys.exit(main())
