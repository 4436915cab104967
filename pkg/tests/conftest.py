import numpy as np
import pytest

from detcal.synthetic import DetectorDistortion, generate_detection_dataset, generate_regression_arrays


@pytest.fixture(scope="session")
def confidence_data():
    """Held-out pair of datasets from a known logistic link."""
    d = DetectorDistortion(link_weight=0.5, link_bias=0.3)
    train = generate_detection_dataset(d, 5000, seed=11)
    test = generate_detection_dataset(d, 5000, seed=12)
    return d, train, test


@pytest.fixture(scope="session")
def inflated_regression():
    """Boxes whose reported variances are 4x the true ones."""
    d = DetectorDistortion(variance_scale=2.0)
    return generate_regression_arrays(d, 4000, seed=21), generate_regression_arrays(d, 4000, seed=22)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS = {}


@pytest.fixture
def report():
    """Record one acceptance line: ``report(number, passed, detail)``; the caller still asserts."""
    def record(number, passed, detail):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
