"""Flat parameter vectors and central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REL_EPS = 1e-8


class ParamVector:
    """A flat float64 vector with named, shaped slices.

    >>> pv = ParamVector.from_arrays({"p": np.ones(3), "w": np.zeros((2, 2))})
    >>> pv["w"].shape
    (2, 2)
    """

    def __init__(self, data, registry):
        self.data = np.asarray(data, dtype=np.float64)
        self.registry = dict(registry)
        covered = sorted((s.start, s.stop) for s, _ in self.registry.values())
        pos = 0
        for start, stop in covered:
            if start != pos:
                raise ValueError("registry slices must partition the vector")
            pos = stop
        if pos != self.data.size:
            raise ValueError("registry slices must partition the vector")

    @classmethod
    def from_arrays(cls, arrays) -> "ParamVector":
        registry, chunks, pos = {}, [], 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            registry[name] = (slice(pos, pos + arr.size), arr.shape)
            chunks.append(arr.reshape(-1))
            pos += arr.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(data, registry)

    def __getitem__(self, name) -> np.ndarray:
        sl, shape = self.registry[name]
        return self.data[sl].reshape(shape)

    def names(self):
        return list(self.registry)

    def with_data(self, data) -> "ParamVector":
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.data.shape:
            raise ValueError(f"expected {self.data.shape}, got {data.shape}")
        return ParamVector(data.copy(), self.registry)

    def copy(self) -> "ParamVector":
        return self.with_data(self.data)

    def __len__(self):
        return self.data.size


def numeric_gradient(objective, theta, h: float = 1e-4) -> np.ndarray:
    """Central differences of ``objective`` at ``theta``, one coordinate at a time.

    ``theta`` may be a ParamVector (the objective then receives
    ParamVectors) or a plain array.
    """
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    is_pv = isinstance(theta, ParamVector)
    base = theta.data if is_pv else np.asarray(theta, dtype=np.float64)
    wrap = theta.with_data if is_pv else (lambda d: d)
    grad = np.zeros(base.size)
    flat = base.reshape(-1)
    for i in range(flat.size):
        x = flat.copy()
        x[i] = flat[i] + h
        f_plus = float(objective(wrap(x.reshape(base.shape))))
        x[i] = flat[i] - h
        f_minus = float(objective(wrap(x.reshape(base.shape))))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"objective is non-finite near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(base.shape)


def relative_error(analytic, numeric, eps: float = REL_EPS) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), eps)


@dataclass
class ParamCheck:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float


@dataclass
class GradReport:
    params: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.params.values()), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def lines(self):
        for name, c in self.params.items():
            yield f"{name:>8s}  n={c.numeric.size:<4d} max_rel_err={c.max_rel_error:.3e}"


def check_gradients(objective, analytic: ParamVector, theta: ParamVector, h: float = 1e-4) -> GradReport:
    """Compare an analytic gradient against central differences, per named parameter."""
    numeric = theta.with_data(numeric_gradient(objective, theta, h))
    report = GradReport()
    for name in theta.names():
        a, n = analytic[name], numeric[name]
        report.params[name] = ParamCheck(a.copy(), n.copy(), float(relative_error(a, n).max(initial=0.0)))
    return report
