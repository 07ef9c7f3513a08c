import pytest

from fedsel.core import DatasetConfig, ExperimentConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a PASS/FAIL line for the terminal summary, then assert."""
    def _report(criterion: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, f"{criterion}: {detail}"
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_config():
    return ExperimentConfig(
        num_clients=6, selection_ratio=0.5, rounds=4, learning_rate=0.05,
        dataset=DatasetConfig(n_samples=400, n_features=5, n_classes=3),
    )
