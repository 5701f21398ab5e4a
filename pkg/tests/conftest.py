import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ch4map.cube import RadianceCube

settings.register_profile(
    "ci", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("ci")

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")


def make_cube(data, wl=None, fwhm=None, pixel=(30.0, 30.0)):
    data = np.asarray(data, dtype=np.float32)
    bands = data.shape[0]
    wl = np.linspace(2100.0, 2450.0, bands) if wl is None else wl
    fwhm = np.full(bands, 9.0) if fwhm is None else fwhm
    return RadianceCube(data, wl, fwhm, pixel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cube(rng):
    return make_cube(1.0 + 0.1 * rng.random((6, 5, 4)))


def random_spd(rng, n, cond=1e3):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.logspace(0, np.log10(cond), n)
    return (q * eig) @ q.T
