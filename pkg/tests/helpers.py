"""Shared test utilities."""

import numpy as np

from sib import diffcore as dc


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (``x`` is perturbed in place and restored)."""
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


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def check_grads(build, params: list[dc.Parameter], h: float = 1e-4) -> float:
    """Worst relative error between backprop and finite differences over ``params``.

    ``build()`` must rebuild the scalar loss node from the current parameter values.
    """
    dc.zero_grad(params)
    dc.backward(build())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = numeric_grad(lambda: float(build().value), p.value, h)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


ACCEPTANCE_LINES: list[str] = []


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if ``ok`` is false."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
