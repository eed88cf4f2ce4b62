import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    max_examples=50,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

from geoproxy.synth import WorldConfig, generate_world  # noqa: E402

# registry of acceptance criterion outcomes, printed in the terminal summary
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture(scope="session")
def tiny_world():
    """Small, fast world shared by unit tests (not the acceptance world)."""
    cfg = WorldConfig(
        n_sites=14,
        samples_per_site=12,
        n_days=90,
        proxy_cell=2.0,
        n_bumps=12,
        seed=11,
    )
    return generate_world(cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        flag = "PASS" if ok else "FAIL"
        line = f"criterion {num:2d} [{flag}] {name}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
