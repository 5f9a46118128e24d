import time
from types import SimpleNamespace

import numpy as np
import pytest

from grounder.cli import run
from grounder.fixtures import fixture_embeddings, fixture_lexicon, write_blob_fixture


@pytest.fixture(scope="session")
def table():
    return fixture_embeddings()


@pytest.fixture(scope="session")
def lexicon():
    return fixture_lexicon()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planted(tmp_path_factory):
    """The 200-image planted-blob fixture with all three models trained by the CLI
    at default settings (seed 0). Shared by the CLI and acceptance tests."""
    root = tmp_path_factory.mktemp("planted")
    fx = write_blob_fixture(root / "fx")
    words = ["--lexicon", str(fx["lexicon"]), "--embeddings", str(fx["embeddings"])]
    models, seconds = {}, {}
    for cmd, name in (("train-entity", "entity"), ("train-attr", "attribute"),
                      ("train-color", "color")):
        out = root / f"{name}.grdm"
        start = time.perf_counter()
        rc = run([cmd, "--manifest", str(fx["train"]), *words, "--out", str(out), "--seed", "0"])
        seconds[name] = time.perf_counter() - start
        assert rc == 0, f"{cmd} failed"
        models[name] = out
    model_flags = ["--entity-model", str(models["entity"]),
                   "--attribute-model", str(models["attribute"]),
                   "--color-model", str(models["color"])]
    return SimpleNamespace(root=root, fx=fx, words=words, models=models, seconds=seconds,
                           model_flags=model_flags)
