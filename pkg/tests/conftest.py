import numpy as np
import pytest


def rk4(deriv, y0, t0, t1, n=4000):
    """Classical fourth-order integration of y' = deriv(t, y)."""
    h = (t1 - t0) / n
    y = float(y0)
    t = t0
    for _ in range(n):
        k1 = deriv(t, y)
        k2 = deriv(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = deriv(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = deriv(t + h, y + h * k3)
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


@pytest.fixture
def rk4_oracle():
    return rk4


def z_score(est, se, target):
    return (est - target) / se if se > 0 else 0.0
