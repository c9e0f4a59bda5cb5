import pytest

from embal.config import DataConfig, ExperimentConfig, SyntheticSpec
from embal.models import default_train_config


def small_config(**kw) -> ExperimentConfig:
    base = dict(
        data=DataConfig(synthetic=SyntheticSpec(k=3, n=400, d=6, v=2, separation=2.5, seed=1)),
        budget_schedule=(20, 20, 20, 20, 20),
        strategy="margin",
        train={t: default_train_config(t, epochs=15) for t in ("linear", "shallow")},
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def make_config():
    return small_config


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
