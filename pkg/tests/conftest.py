import numpy as np
import pytest
from hypothesis import settings

from fraudkit.synthetic import make_synthetic_elliptic

_CRITERIA: list[tuple[str, str, str]] = []


class _Recorder:
    """Records acceptance-criterion outcomes for the end-of-run table."""

    def __call__(self, name: str, ok: bool, detail: str = "") -> bool:
        status = "PASS" if ok else "FAIL"
        _CRITERIA.append((name, status, detail))
        print(f"{status} {name} {detail}")
        return bool(ok)

    def skip(self, name: str, reason: str):
        _CRITERIA.append((name, "SKIP", reason))
        print(f"SKIP {name} {reason}")
        pytest.skip(reason)


@pytest.fixture
def criterion():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_files(tmp_path_factory):
    return make_synthetic_elliptic(tmp_path_factory.mktemp("synthetic"), n_steps=12,
                                   nodes_per_step=100, seed=7)


SMALL_SPLIT = {"train_end": 6, "val_start": 7, "val_end": 9, "test_start": 10}


settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")
