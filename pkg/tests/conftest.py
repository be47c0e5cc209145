import numpy as np
import pytest

from deepfake_vit import tensor as T
from deepfake_vit.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        hi = f()
        x[i] = old - h
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error, floored so near-zero entries compare absolutely."""
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def check_grads(build, params: list[Tensor], tol: float = 1e-4) -> float:
    """Compare tape gradients of the scalar ``build()`` with finite differences.
    Returns the worst relative error."""
    for p in params:
        p.grad = None
    with T.Tape() as tape:
        loss = build()
    T.backward(loss, tape)
    worst = 0.0
    for p in params:
        def f():
            with T.no_grad():
                return build().item()
        num = numeric_grad(f, p.data)
        err = rel_error(p.grad, num)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch {err:.2e} for parameter of shape {p.shape}"
    return worst


# ------------------------------------------------------------ acceptance lines

ACCEPTANCE_LINES: list[str] = []


def record_criterion(label: str, ok: bool, detail: str, flag_only: bool = False) -> None:
    """Collect one acceptance line; printed again in the terminal summary."""
    status = "PASS" if ok else ("FLAG" if flag_only else "FAIL")
    line = f"[{status}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
