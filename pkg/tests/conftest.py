import json
import pathlib

import pytest

from midas.backend import EchoServer
from midas.codec import save_image
from midas.corpus import synth_image

GOLDEN_DIR = pathlib.Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden():
    cache = {}

    def load(name):
        if name not in cache:
            cache[name] = json.loads((GOLDEN_DIR / f"{name}.json").read_text())
        return cache[name]

    return load


@pytest.fixture(scope="session")
def corpus8():
    return [synth_image(seed) for seed in range(8)]


@pytest.fixture(scope="session")
def echo_server():
    with EchoServer() as server:
        yield server


@pytest.fixture
def secret_files(tmp_path):
    paths = []
    for j in range(2):
        path = tmp_path / f"secret{j}.png"
        save_image(synth_image(1000 + j), path)
        paths.append(str(path))
    return paths
