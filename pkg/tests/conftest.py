import io
import os
import sys

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, os.path.dirname(__file__))  # make oracles importable

from ctcad import svm, zoo
from ctcad.svm import NuSvmConfig


def make_png(array: np.ndarray) -> bytes:
    """Encode an (h, w) or (h, w, 3) uint8 array as PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def make_jpeg(array: np.ndarray, quality: int = 90) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def noise_png(rng, size=224, mean=128.0, sigma=40.0) -> bytes:
    arr = np.clip(rng.normal(mean, sigma, (size, size)), 0, 255).astype(np.uint8)
    return make_png(arr)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    """224-input tiny dense net bundle (feature dim 16) on disk."""
    path = tmp_path_factory.mktemp("bundles") / "small"
    graph = zoo.write_demo_bundle(str(path), "small", seed=11)
    return str(path), graph


@pytest.fixture(scope="session")
def small_model_file(tmp_path_factory, small_bundle):
    """Nu-SVM model matching the small bundle's 16-dim features."""
    _, graph = small_bundle
    rng = np.random.default_rng(5)
    n = 30
    X = np.vstack(
        [
            rng.normal(0.0, 1.0, (n // 2, graph.feature_dim)) + 2.0,
            rng.normal(0.0, 1.0, (n // 2, graph.feature_dim)) - 2.0,
        ]
    )
    y = np.array([1] * (n // 2) + [-1] * (n // 2))
    model = svm.train_nu_svm(X, y, NuSvmConfig(nu=0.4, gamma=0.05, max_iter=5000, tol=1e-6))
    path = tmp_path_factory.mktemp("models") / "small.nsvm"
    svm.save_model(model, str(path))
    return str(path)


@pytest.fixture(scope="session")
def densenet_bundle(tmp_path_factory):
    """Full DenseNet121-shaped random bundle (feature dim 1024)."""
    path = tmp_path_factory.mktemp("bundles") / "densenet121"
    graph = zoo.write_demo_bundle(str(path), "densenet121", seed=7)
    return str(path), graph


@pytest.fixture(scope="session")
def densenet_model_file(tmp_path_factory, densenet_bundle):
    _, graph = densenet_bundle
    rng = np.random.default_rng(9)
    n = 24
    X = np.vstack(
        [
            rng.normal(0.0, 1.0, (n // 2, graph.feature_dim)) + 0.5,
            rng.normal(0.0, 1.0, (n // 2, graph.feature_dim)) - 0.5,
        ]
    )
    y = np.array([1] * (n // 2) + [-1] * (n // 2))
    model = svm.train_nu_svm(X, y, NuSvmConfig(nu=0.4, gamma=0.001, max_iter=5000, tol=1e-5))
    path = tmp_path_factory.mktemp("models") / "densenet.nsvm"
    svm.save_model(model, str(path))
    return str(path)
