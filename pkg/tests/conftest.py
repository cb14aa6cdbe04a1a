import sys

import numpy as np
import pytest

from sl0sr.dictionary import CoupledDictionary, TrainingConfig, harvest_pairs, train_coupled
from sl0sr.imaging import to_luminance


def skimage_gray(name):
    """A scikit-image sample picture as a grayscale [0, 1] array."""
    data = pytest.importorskip("skimage.data")
    img = np.asarray(getattr(data, name)(), dtype=np.float64)
    if img.ndim == 3:
        img = to_luminance(img[..., :3])
    return np.clip(img / 255.0, 0.0, 1.0)


def random_coupled_dictionary(seed=0, atoms=1024, p=5, scale=2, zero_mean=True):
    """Valid coupled dictionary with random (optionally mean-free) atoms."""
    rng = np.random.default_rng(seed)
    m_l, m_h = p * p, (scale * p) ** 2
    lo = rng.normal(size=(m_l, atoms))
    hi = rng.normal(size=(m_h, atoms))
    if zero_mean:
        lo -= lo.mean(axis=0)
        hi -= hi.mean(axis=0)
    norms = np.sqrt(np.sum(lo ** 2, axis=0) + np.sum(hi ** 2, axis=0))
    return CoupledDictionary(lo / norms, hi / norms, p, scale * p, scale)


@pytest.fixture(scope="session")
def quick_trained_dictionary():
    """1024-atom dictionary from one epoch on a few thousand natural patch pairs."""
    images = [skimage_gray(n) for n in ("astronaut", "coffee")]
    lr, hr = harvest_pairs(images, max_pairs=3000, seed=0)
    return train_coupled(lr, hr, TrainingConfig(atom_count=1024, epochs=1))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
