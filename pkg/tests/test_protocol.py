import io
import sys
import threading

import numpy as np
import pytest

from uqaudit.errors import ProtocolError
from uqaudit.priors import SmoothingDenoiser
from uqaudit.protocol import (
    HEADER,
    MAGIC,
    OP_DENOISE,
    OP_SAMPLE,
    STATUS_ERROR,
    DenoiserHandler,
    ExternalDenoiser,
    ExternalSampler,
    IdentityHandler,
    encode_request,
    loopback,
    protocol_check,
    read_request,
    read_response,
    send_raw,
    serve_tcp,
)


def test_request_layout():
    img = np.arange(6, dtype=np.float32).reshape(2, 3)
    f = encode_request(OP_SAMPLE, img, 4)
    assert f[:4] == b"UQX1" and f[4] == 2
    assert HEADER.unpack_from(f) == (MAGIC, 2, 2, 3, 4)
    assert len(f) == HEADER.size + 6 * 4
    op, got, count = read_request(io.BytesIO(f))
    assert op == OP_SAMPLE and count == 4 and np.array_equal(got, img)


def test_error_frame_is_readable():
    reply = send_raw(b"NOPE" + bytes(13))
    magic, status, h, w, count = HEADER.unpack_from(reply)
    assert magic == MAGIC and status == STATUS_ERROR and (h, w) == (0, 0)
    assert b"magic" in reply[HEADER.size :]
    with pytest.raises(ProtocolError, match="remote error"):
        read_response(io.BytesIO(reply))


def test_loopback_external_denoiser_smoothing(rng):
    client, t = loopback(DenoiserHandler(SmoothingDenoiser(0.02)))
    d = ExternalDenoiser(client, 0.02)
    x = rng.random((8, 8))
    np.testing.assert_allclose(d(x), SmoothingDenoiser(0.02)(x), atol=1e-6)
    d.close()


def test_external_sampler_over_stdio(rng):
    s = ExternalSampler(f"stdio:{sys.executable} -m uqaudit.protocol identity", 3)
    y = rng.random((4, 5)).astype(np.float32)
    out = s(y, None, 0, (0,))
    assert out.samples.shape == (3, 4, 5) and out.potentials is None
    np.testing.assert_array_equal(out.mean, y)
    s.close()


def test_tcp_server_roundtrip(rng):
    ready = threading.Event()
    addr = {}

    def on_ready(a):
        addr["a"] = a
        ready.set()

    threading.Thread(target=serve_tcp, args=("127.0.0.1", 0, IdentityHandler(), on_ready), daemon=True).start()
    assert ready.wait(5)
    host, port = addr["a"]
    d = ExternalDenoiser(f"tcp://{host}:{port}", 0.1)
    x = rng.random((3, 3)).astype(np.float32)
    assert np.array_equal(d(x), x)
    d.close()


def test_shape_changing_handler_rejected():
    class Bad:
        def denoise(self, image):
            return image[:1]

    client, t = loopback(Bad())
    with pytest.raises(ProtocolError):
        ExternalDenoiser(client, 0.1)(np.zeros((4, 4)))


def test_conformance_check_small():
    ok, rejected = protocol_check(200, 35, seed=3, out=None)
    assert ok == 200 and rejected == 35
