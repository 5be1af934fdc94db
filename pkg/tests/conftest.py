import numpy as np
import pytest

from canreid.its import ItsConfig
from canreid.sampling import SplitSpec, split_traces
from canreid.synthetic import default_layout, gen_cohort, planted_series

# small enough for sub-second training steps, large enough to learn the toy tasks
TINY_ITS = dict(seg_len=2.0, kernel=0.5, conv_stride=0.1, filters1=4, filters2=4, pool=2,
                fc_units=8, lstm_hidden=4, dropout_rate=0.0)


def tiny_its_config(n_classes=3, head="multiclass", **kw):
    return ItsConfig(**{**TINY_ITS, **kw}, head=head, n_classes=n_classes)


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def small_cohort():
    return gen_cohort(3, duration=300, seed=1)


@pytest.fixture(scope="session")
def planted():
    return planted_series(n_drivers=3, n_noise=2, duration=300, rate_hz=10.0, seed=5)


@pytest.fixture(scope="session")
def planted_pools(planted):
    series, _ = planted
    return split_traces(series, SplitSpec(sample_duration=10, shift=2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
