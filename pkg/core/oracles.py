"""Closed-form reference values the solvers are checked against."""

import math
from typing import Any, Callable

import numpy as np
from scipy.linalg import solve_banded

from core.errors import ParameterError


def exp_decay(b: float = 1.0, n_steps: int = 1000, x0: float = 1.0) -> dict[str, float]:
    """u' = -u: exact value at b and the backward Euler value (1 + tau)^-n."""
    tau = b / n_steps
    return {"exact": x0 * math.exp(-b), "backward_euler": x0 * (1.0 + tau) ** (-n_steps)}


def cos_periodic(t: float) -> float:
    """Periodic solution of -u' = u - cos t."""
    return 0.5 * (math.cos(t) + math.sin(t))


def contraction_rate(c: float, b: float) -> dict[str, float]:
    return {"verified": math.exp(-c * b), "stated": math.exp(-2.0 * c * b)}


def split_weak_norm(b: float) -> float:
    """Weak norm of the forcing +1 on [0, b/2], -1 after."""
    return 0.5 * b


def soft_threshold(x: np.ndarray, tau: float, weight: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau * weight, 0.0)


def stationary_heat(nodes: int = 49, extent: float = 1.0, source: float = 1.0) -> np.ndarray:
    """-u'' = source on (0, extent), u = 0 at both ends, three-point stencil."""
    if nodes < 1:
        raise ParameterError(f"nodes must be >= 1, got {nodes}")
    h = extent / (nodes + 1)
    ab = np.zeros((3, nodes))
    ab[0, 1:] = -1.0 / h**2
    ab[1, :] = 2.0 / h**2
    ab[2, :-1] = -1.0 / h**2
    return solve_banded((1, 1), ab, np.full(nodes, source))


ORACLES: dict[str, Callable[[], dict[str, Any]]] = {
    "exp_decay": lambda: {"b": 1.0, "n_steps": 1000, **exp_decay()},
    "cos_periodic": lambda: {"t": [0.0, math.pi / 2, math.pi], "u": [cos_periodic(t) for t in (0.0, math.pi / 2, math.pi)]},
    "contraction_rate": lambda: {"c": 1.0, "b": 1.0, **contraction_rate(1.0, 1.0)},
    "split_weak_norm": lambda: {"b": 1.0, "weak_norm": split_weak_norm(1.0)},
    "soft_threshold": lambda: {
        "x": [-2.0, -0.5, 0.0, 0.5, 2.0],
        "tau": 1.0,
        "prox": soft_threshold(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]), 1.0).tolist(),
    },
    "stationary_heat": lambda: {
        "nodes": 49,
        "max": float(np.max(stationary_heat())),
        "values": stationary_heat().tolist(),
    },
}


def oracle_values(name: str) -> dict[str, Any]:
    if name not in ORACLES:
        raise ParameterError(f"unknown oracle {name!r}; expected one of {sorted(ORACLES)}")
    return ORACLES[name]()
