import numpy as np
import pytest

from mrptick import GammaLaw, MrpModel

PLUS = (0.276225, 2397.219)
MINUS = (0.07132677, 1561.593)
ALPHA = -0.875


@pytest.fixture(scope="session")
def fitted_model():
    """Symmetric model with sign-dependent Gamma kernels (the fitted trend / mean-reverting laws)."""
    return MrpModel.symmetric(ALPHA, GammaLaw(*PLUS), GammaLaw(*MINUS))


@pytest.fixture(scope="session")
def fitted_h_model(fitted_model):
    """Same chain with the sign-averaged sojourn law for every transition."""
    mix = fitted_model.mixture_law
    return MrpModel.symmetric(ALPHA, mix, mix)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


class _Recorder:
    def __init__(self, store, number, title):
        self.store, self.number, self.title = store, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        self.store.setdefault(self.number, []).append((status, self.title, self.detail))
        return False


@pytest.fixture
def acceptance(request):
    """``with acceptance(n, title) as rec:`` records a pass/fail line for criterion n."""
    store = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})
    return lambda number, title: _Recorder(store, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        for status, title, detail in store[number]:
            line = f"criterion {number:>2}: {status}  {title}"
            terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
