import numpy as np
import pytest

from midas_sd_server.server import BackendServer, ServerConfig


def bilinear(src, out_h, out_w):
    h, w = src.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - np.floor(ys), 0, 1)[:, None]
    fx = np.clip(xs - np.floor(xs), 0, 1)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def make_test_photo(seed=4242, size=512, coarse=12):
    """Smooth synthetic photo, (size, size, 3) uint8."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, 3))
    for c in range(3):
        f = bilinear(rng.standard_normal((coarse, coarse)), size, size)
        f -= f.min()
        f /= f.max() + 1e-12
        img[..., c] = f * 200 + 28
    return np.rint(img).astype(np.uint8)


def psnr(a, b):
    mse = np.mean((a.astype(float) - b.astype(float)) ** 2)
    return 99.0 if mse == 0 else 10.0 * np.log10(255.0**2 / mse)


@pytest.fixture(scope="session")
def reference_server():
    with BackendServer(ServerConfig(image_size=512)) as server:
        yield server
