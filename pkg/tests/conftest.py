import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def tiny_split():
    """8 users / 20 items with planted structure, split leave-one-out."""
    from ufrec.data import build_sequences, split_leave_one_out
    from ufrec.synth import generate

    rows, _ = generate(num_users=8, num_items=20, min_len=8, max_len=12, seed=1)
    seqs, _ = build_sequences(rows)
    return split_leave_one_out(seqs)


@pytest.fixture
def tiny_cfg():
    from ufrec.config import TrainConfig

    return TrainConfig(d=8, max_len=6, heads=2, e_all=10, e_b=0, e_t=1, num_train_negatives=5,
                       num_buckets=16, year_buckets=4, year_base=2015, batch=8,
                       uniform_ratio=0.5, frequent_ratio=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_report_header(config):
    return f"UFREC_NUMBA={os.environ.get('UFREC_NUMBA', '1')}"


ACCEPTANCE = pytest.StashKey()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """record(number, ok, detail): print and keep one PASS/FAIL line, then assert."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
