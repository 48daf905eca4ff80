from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from fedstlf import dataset as ds

T0 = datetime(2019, 1, 1, tzinfo=timezone.utc)


def make_client(client_id, train_X, train_y, test_X, test_y, load_std=1.0, scaler=(0.0, 1.0)):
    """Hand-built dataset; the default identity scaler makes scaled values equal kW."""
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    test_X = np.atleast_2d(np.asarray(test_X, dtype=float))
    lb = train_X.shape[1]
    n_train, n_test = len(train_X), len(test_X)
    times = tuple(T0 + timedelta(hours=lb + k) for k in range(n_train + n_test))
    return ds.ClientDataset(
        client_id=client_id,
        scaler=ds.MinMaxScaler(*scaler),
        train_X=train_X,
        train_y=np.asarray(train_y, dtype=float),
        test_X=test_X,
        test_y=np.asarray(test_y, dtype=float),
        load_std=load_std,
        train_times=times[:n_train],
        test_times=times[n_train:],
        look_back=lb,
    )


@pytest.fixture(scope="session")
def small_clients():
    """Eight short synthetic clients, two of them flat."""
    series = ds.synth_generate(8, 6, seed=21, flat_fraction=0.25)
    return [ds.build_client_dataset(s) for s in series]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
