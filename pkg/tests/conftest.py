import numpy as np
import pytest

from unideal.model import Architecture, DecoupledModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_model(seed: int, dims=(4, 5, 3), head_depth: int = 1) -> DecoupledModel:
    model = DecoupledModel.init(Architecture(dims, head_depth), np.random.default_rng(seed))
    # nonzero biases so gradient checks cover them
    bias_rng = np.random.default_rng(seed + 10_000)
    for layer in model.layers:
        layer.biases[:] = bias_rng.normal(scale=0.1, size=layer.biases.shape)
    return model


def np_softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# one line per acceptance criterion, echoed at the end of the pytest run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
