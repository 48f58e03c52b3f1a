import numpy as np
import pytest

from flowcast import _backend
from flowcast.fields import (
    ConstantField,
    GaussianBridgeField,
    LinearField,
    RotationField,
    TabulatedField,
    TinyMLPField,
)


def _tabulated_from(field, half_width=4.0, nodes=9, time_nodes=11):
    axes = [np.linspace(-half_width, half_width, nodes)] * field.dim + [np.linspace(0.0, 1.0, time_nodes)]
    return TabulatedField.from_field(field, axes)


def shipped_fields():
    """One instance of every field type the package ships."""
    bridge = GaussianBridgeField([3.0, 0.0], 1.0, 1.0)
    return {
        "constant": ConstantField([1.0, -1.0]),
        "linear": LinearField([[-1.0, 0.3], [0.0, -0.5]], [0.2, -0.1]),
        "rotation": RotationField(1.0),
        "gauss_bridge": bridge,
        "gauss_bridge_complex": GaussianBridgeField([3.0, 0.0], 1.0, 0.1),
        "tabulated": _tabulated_from(bridge, half_width=6.0),
        "mlp": TinyMLPField.random(2, hidden=8, seed=3),
    }


SHIPPED = shipped_fields()


@pytest.fixture(params=sorted(SHIPPED))
def shipped_field(request):
    return SHIPPED[request.param]


@pytest.fixture(params=sorted(_backend.available_backends()))
def kernel_backend(request):
    return _backend.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


# -- acceptance summary ----------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail=""):
    """Log one acceptance criterion outcome and fail the calling test if needed."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
