import numpy as np
import pytest

from adsrnet.data import write_png
from adsrnet.tensor import precision


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def smooth_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Deterministic textured RGB test image (uint8)."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.stack(
        [
            128 + 90 * np.sin(xx / 5.0 + c) * np.cos(yy / 7.0 - c) + 20 * r.standard_normal((h, w))
            for c in range(3)
        ],
        axis=2,
    )
    return np.clip(np.round(base), 0, 255).astype(np.uint8)


@pytest.fixture
def toy_split(tmp_path):
    """A two-image split directory with HR/ only (LR generated by tests as needed)."""
    hr = tmp_path / "toy" / "HR"
    write_png(hr / "a.png", smooth_image(64, 56, 1))
    write_png(hr / "b.png", smooth_image(48, 72, 2))
    return tmp_path / "toy"


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    _ACCEPTANCE[marker.args[0]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (len(s.split()[0]), s)):
        status, detail = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{status}  criterion {label}" + (f"  ({detail})" if detail else ""))
