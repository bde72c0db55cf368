import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pfedhpo.datasets import ClientBundle, DataSet, Federation

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def blob_data(rng, n, num_features=3, num_classes=2, scale=1.0):
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    centers = rng.normal(0, 2, (num_classes, num_features))
    x = centers[labels] + rng.normal(0, 1, (n, num_features))
    return DataSet(x * scale, labels, num_classes)


def small_federation(n_clients=3, seed=0, num_features=3, num_classes=2, per_client=30):
    rng = np.random.default_rng(seed)
    clients = []
    for i in range(n_clients):
        d = blob_data(rng, per_client, num_features, num_classes)
        a, b = int(per_client * 0.6), int(per_client * 0.8)
        idx = np.arange(per_client)
        clients.append(ClientBundle(i, d.subset(idx[:a]), d.subset(idx[a:b]), d.subset(idx[b:])))
    return Federation(tuple(clients))


@pytest.fixture
def fed():
    return small_federation()


# Acceptance verdicts, echoed in the terminal summary so they land in saved logs.
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
