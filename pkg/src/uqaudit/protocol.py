"""Length-prefixed binary frames for external denoisers and samplers.

Request::

    "UQX1" | opcode u8 | height u32 | width u32 | count u32 | payload

Response::

    "UQX1" | status u8 | height u32 | width u32 | count u32 | payload

Integers are little-endian, pixels are little-endian f32, row-major.

* opcode 1 (denoise): ``count == 1``; one image in, one image out.
* opcode 2 (sample): the request payload is one observation (``h * w``
  values) and ``count`` is the number of posterior samples wanted; the
  response carries ``count`` images.
* status 1 (error): ``height = width = 0``, ``count`` is the byte length of
  a UTF-8 message that forms the payload.

A server answers a malformed frame with an error frame and then closes the
connection, since the stream cannot be resynchronised.
"""

from __future__ import annotations

import shlex
import socket
import struct
import subprocess
import sys
import threading
import time

import numpy as np

from .errors import ProtocolError, TransportError

MAGIC = b"UQX1"
HEADER = struct.Struct("<4sBIII")
OP_DENOISE = 1
OP_SAMPLE = 2
STATUS_OK = 0
STATUS_ERROR = 1
MAX_SIDE = 1 << 14
MAX_PAYLOAD_BYTES = 1 << 28


def _images_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def encode_request(opcode, image, count=1):
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if opcode == OP_DENOISE:
        return HEADER.pack(MAGIC, OP_DENOISE, h, w, 1) + _images_bytes(image)
    if opcode == OP_SAMPLE:
        return HEADER.pack(MAGIC, OP_SAMPLE, h, w, int(count)) + _images_bytes(image)
    raise ValueError(f"unknown opcode {opcode}")


def encode_response(images):
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    n, h, w = images.shape
    return HEADER.pack(MAGIC, STATUS_OK, h, w, n) + _images_bytes(images)


def encode_error(message):
    body = message.encode("utf-8")
    return HEADER.pack(MAGIC, STATUS_ERROR, 0, 0, len(body)) + body


def request_payload_size(opcode, h, w, count):
    """Expected request payload size in bytes; raises ProtocolError if invalid."""
    if opcode not in (OP_DENOISE, OP_SAMPLE):
        raise ProtocolError(f"unknown opcode {opcode}")
    if not (1 <= h <= MAX_SIDE and 1 <= w <= MAX_SIDE):
        raise ProtocolError(f"bad image size {h}x{w}")
    if opcode == OP_DENOISE and count != 1:
        raise ProtocolError(f"denoise frames carry exactly one image, got count={count}")
    if count < 1:
        raise ProtocolError("count must be >= 1")
    n_out = count * h * w * 4
    if n_out > MAX_PAYLOAD_BYTES:
        raise ProtocolError(f"frame too large ({n_out} bytes)")
    return h * w * 4


def _read_exact(rfile, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = rfile.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def read_request(rfile):
    """Read one request. Returns None on clean EOF before a header."""
    head = _read_exact(rfile, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError("truncated header")
    magic, opcode, h, w, count = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    size = request_payload_size(opcode, h, w, count)
    body = _read_exact(rfile, size)
    if len(body) < size:
        raise ProtocolError(f"truncated payload ({len(body)} of {size} bytes)")
    image = np.frombuffer(body, dtype="<f4").reshape(h, w)
    return opcode, image, count


def read_response(rfile):
    """Read one response; returns a float32 array of shape (count, h, w)."""
    head = _read_exact(rfile, HEADER.size)
    if len(head) < HEADER.size:
        raise TransportError("connection closed before a response header")
    magic, status, h, w, count = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r} in response")
    if status == STATUS_ERROR:
        msg = _read_exact(rfile, min(count, MAX_PAYLOAD_BYTES)).decode("utf-8", "replace")
        raise ProtocolError(f"remote error: {msg}")
    if status != STATUS_OK:
        raise ProtocolError(f"unknown status {status}")
    size = count * h * w * 4
    if size > MAX_PAYLOAD_BYTES:
        raise ProtocolError("response too large")
    body = _read_exact(rfile, size)
    if len(body) < size:
        raise TransportError("truncated response payload")
    return np.frombuffer(body, dtype="<f4").reshape(count, h, w)


# ---------------------------------------------------------------------------
# server side
# ---------------------------------------------------------------------------


class IdentityHandler:
    """Echoes images back; sample requests return copies of the observation."""

    def denoise(self, image):
        return image

    def sample(self, observation, count):
        return np.repeat(observation[None], count, axis=0)


class DenoiserHandler:
    def __init__(self, denoiser):
        self.denoiser = denoiser

    def denoise(self, image):
        return self.denoiser(np.asarray(image, dtype=np.float64))

    def sample(self, observation, count):
        raise ProtocolError("this server only denoises")


def serve_stream(rfile, wfile, handler):
    """Answer requests until EOF or the first malformed frame."""
    while True:
        try:
            req = read_request(rfile)
        except ProtocolError as exc:
            wfile.write(encode_error(str(exc)))
            wfile.flush()
            return
        if req is None:
            return
        opcode, image, count = req
        try:
            if opcode == OP_DENOISE:
                out = np.asarray(handler.denoise(image))
                if out.shape != image.shape:
                    raise ProtocolError(f"handler changed image shape {image.shape} -> {out.shape}")
            else:
                out = np.asarray(handler.sample(image, count))
                if out.shape != (count, *image.shape):
                    raise ProtocolError(f"handler returned shape {out.shape}")
            wfile.write(encode_response(out))
        except Exception as exc:  # handler failures go back to the client
            wfile.write(encode_error(f"{type(exc).__name__}: {exc}"))
        wfile.flush()


def serve_socket(sock, handler):
    with sock, sock.makefile("rb") as r, sock.makefile("wb") as w:
        serve_stream(r, w, handler)


def loopback(handler):
    """Connected client socket whose peer is served by ``handler`` in a thread."""
    client, server = socket.socketpair()
    t = threading.Thread(target=serve_socket, args=(server, handler), daemon=True)
    t.start()
    return client, t


def serve_tcp(host, port, handler, ready=None):
    """Serve each TCP connection in its own thread (runs forever)."""
    with socket.create_server((host, port)) as srv:
        if ready is not None:
            ready(srv.getsockname())
        while True:
            conn, _ = srv.accept()
            threading.Thread(target=serve_socket, args=(conn, handler), daemon=True).start()


# ---------------------------------------------------------------------------
# client side
# ---------------------------------------------------------------------------


class _Connection:
    """One request at a time over a socket, a subprocess's stdio, or a loopback."""

    def __init__(self, endpoint):
        self._lock = threading.Lock()
        self._proc = None
        self.endpoint = endpoint
        try:
            if isinstance(endpoint, socket.socket):
                self._sock = endpoint
            elif endpoint.startswith("tcp://"):
                host, port = endpoint[len("tcp://") :].rsplit(":", 1)
                self._sock = socket.create_connection((host, int(port)))
            elif endpoint.startswith("stdio:"):
                self._sock = None
                self._proc = subprocess.Popen(
                    shlex.split(endpoint[len("stdio:") :]), stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
                self._r, self._w = self._proc.stdout, self._proc.stdin
            else:
                raise ValueError(f"unsupported endpoint {endpoint!r} (use tcp://host:port or stdio:<command>)")
        except OSError as exc:
            raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
        if self._sock is not None:
            self._r = self._sock.makefile("rb")
            self._w = self._sock.makefile("wb")

    def request(self, frame):
        with self._lock:
            try:
                self._w.write(frame)
                self._w.flush()
                return read_response(self._r)
            except (OSError, ValueError) as exc:
                raise TransportError(f"transport failure talking to {self.endpoint}: {exc}") from exc

    def close(self):
        for f in (self._w, self._r):
            try:
                f.close()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.wait(timeout=5)


class ExternalDenoiser:
    """Denoiser served by an external process; payloads travel as f32."""

    def __init__(self, endpoint, epsilon, lipschitz=1.0):
        self.epsilon = float(epsilon)
        self._lip = float(lipschitz)
        self._conn = _Connection(endpoint)

    def __call__(self, x):
        x = np.asarray(x)
        out = self._conn.request(encode_request(OP_DENOISE, x))
        if out.shape != (1, *x.shape):
            raise ProtocolError(f"external denoiser returned shape {out.shape[1:]} for {x.shape}")
        return out[0].astype(np.float64)

    def lipschitz(self):
        return self._lip

    def close(self):
        self._conn.close()


class ExternalSampler:
    """Sampler plugin: asks an external process for ``n_samples`` posterior
    draws per observation. No potentials, so only ball regions apply."""

    def __init__(self, endpoint, n_samples):
        self.n_samples = int(n_samples)
        self._conn = _Connection(endpoint)

    def __call__(self, y, m, seed, stream):
        from .samplers import ChainOutput

        t0 = time.perf_counter()
        draws = self._conn.request(encode_request(OP_SAMPLE, y, self.n_samples)).astype(np.float64)
        if draws.shape != (self.n_samples, *np.shape(y)):
            raise ProtocolError(f"external sampler returned shape {draws.shape}")
        return ChainOutput(
            samples=draws,
            potentials=None,
            mean=draws.mean(axis=0),
            second_moment=(draws * draws).mean(axis=0),
            wall_time=time.perf_counter() - t0,
        )

    def close(self):
        self._conn.close()


# ---------------------------------------------------------------------------
# conformance check
# ---------------------------------------------------------------------------


def _fuzz_frames(rng, n):
    kinds = ["magic", "truncated", "oversized", "opcode", "count", "zero", "header"]
    frames = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        good = encode_request(OP_DENOISE, rng.standard_normal((h, w)))
        if kind == "magic":
            bad = bytes(rng.integers(65, 91, size=4, dtype=np.uint8)) + good[4:]
            if bad[:4] == MAGIC:
                bad = b"XQU1" + good[4:]
        elif kind == "truncated":
            bad = good[: HEADER.size + int(rng.integers(0, 4 * h * w))]
        elif kind == "oversized":
            bad = HEADER.pack(MAGIC, OP_SAMPLE, MAX_SIDE, MAX_SIDE, int(rng.integers(2, 1 << 31))) + good[HEADER.size :]
        elif kind == "opcode":
            bad = HEADER.pack(MAGIC, int(rng.integers(3, 256)), h, w, 1) + good[HEADER.size :]
        elif kind == "count":
            bad = HEADER.pack(MAGIC, OP_DENOISE, h, w, int(rng.integers(2, 100))) + good[HEADER.size :]
        elif kind == "zero":
            bad = HEADER.pack(MAGIC, OP_DENOISE, 0, w, 1)
        else:
            bad = good[: int(rng.integers(1, HEADER.size))]
        frames.append((kind, bad))
    return frames


def send_raw(frame, handler=None):
    """Send raw bytes to a fresh loopback server, half-close, return the reply bytes."""
    client, t = loopback(handler or IdentityHandler())
    with client:
        client.sendall(frame)
        client.shutdown(socket.SHUT_WR)
        chunks = []
        while True:
            b = client.recv(65536)
            if not b:
                break
            chunks.append(b)
    t.join(timeout=5)
    return b"".join(chunks)


def protocol_check(n_frames=1000, n_fuzz=100, seed=0, out=None):
    """Round-trip random frames through a loopback identity denoiser and
    check that malformed frames are answered with error frames.

    Progress lines go to the text stream ``out`` when given. Returns
    ``(n_roundtrip_ok, n_fuzz_rejected)``.
    """
    rng = np.random.default_rng(seed)
    client, t = loopback(IdentityHandler())
    conn = _Connection(client)
    ok = 0
    for _ in range(n_frames):
        h, w = (int(v) for v in rng.integers(1, 33, size=2))
        img = rng.standard_normal((h, w)).astype("<f4")
        if rng.random() < 0.5:
            got = conn.request(encode_request(OP_DENOISE, img))
            expect = img[None]
        else:
            k = int(rng.integers(1, 5))
            got = conn.request(encode_request(OP_SAMPLE, img, k))
            expect = np.repeat(img[None], k, axis=0)
        ok += got.tobytes() == expect.astype("<f4").tobytes()
    conn.close()
    t.join(timeout=5)

    rejected = 0
    for kind, frame in _fuzz_frames(rng, n_fuzz):
        reply = send_raw(frame)
        if len(reply) >= HEADER.size:
            magic, status, _, _, count = HEADER.unpack_from(reply)
            if magic == MAGIC and status == STATUS_ERROR and len(reply) == HEADER.size + count:
                rejected += 1
                continue
        if out is not None:
            print(f"fuzz frame of kind {kind!r} was not rejected", file=out)
    if out is not None:
        print(f"roundtrip {ok}/{n_frames} bit-exact", file=out)
        print(f"fuzz {rejected}/{n_fuzz} rejected with error status", file=out)
    return ok, rejected


def main(argv=None):
    """``python -m uqaudit.protocol [identity|smoothing EPS]``: serve on stdio."""
    from .priors import SmoothingDenoiser

    argv = sys.argv[1:] if argv is None else argv
    kind = argv[0] if argv else "identity"
    if kind == "identity":
        handler = IdentityHandler()
    elif kind == "smoothing":
        handler = DenoiserHandler(SmoothingDenoiser(float(argv[1]) if len(argv) > 1 else 0.01))
    else:
        raise SystemExit(f"unknown handler {kind!r}")
    serve_stream(sys.stdin.buffer, sys.stdout.buffer, handler)


if __name__ == "__main__":
    main()
