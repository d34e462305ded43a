"""Compositional kernel algebra for the current models.

Kernels evaluate Gram matrices via ``kernel(X)`` or ``kernel(X, Y)`` and can
be summed or vertically rescaled by a binary velocity gate. Positive
hyperparameters are exposed through ``theta`` in log space, and
``kernel(X, eval_gradient=True)`` returns the Gram matrix together with its
gradient w.r.t. ``theta`` (symmetric case only), which is what marginal
likelihood optimization consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class VelocityGate:
    """Binary indicator that a velocity entry sits in the quasi-static band.

    The gate reads column ``index`` of the input, maps it back to physical
    units through ``value * scale + offset`` (identity by default, the
    inverse of a feature scaler otherwise) and returns 1 where the magnitude
    is strictly below ``threshold``.
    """

    index: int
    threshold: float = 1e-2
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("gate threshold must be positive")

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ValueError("gate expects a 2-D input matrix")
        if not 0 <= self.index < x.shape[1]:
            raise IndexError(f"gate index {self.index} out of range for "
                             f"{x.shape[1]} input dimensions")
        raw = x[:, self.index] * self.scale + self.offset
        return (np.abs(raw) < self.threshold).astype(float)

    def value(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=float)[None, :])[0])

    def to_dict(self) -> dict:
        return {"index": int(self.index), "threshold": float(self.threshold),
                "scale": float(self.scale), "offset": float(self.offset)}

    @classmethod
    def from_dict(cls, payload: dict) -> "VelocityGate":
        return cls(**payload)


class Kernel:
    """Base class: callable Gram assembly plus log-space hyperparameters."""

    def __call__(self, x, y=None, eval_gradient=False):
        raise NotImplementedError

    def diag(self, x):
        raise NotImplementedError

    @property
    def theta(self) -> np.ndarray:
        raise NotImplementedError

    @theta.setter
    def theta(self, value):
        raise NotImplementedError

    @property
    def n_theta(self) -> int:
        return self.theta.size

    def to_dict(self) -> dict:
        raise NotImplementedError

    def clone_with_theta(self, theta) -> "Kernel":
        clone = kernel_from_dict(self.to_dict())
        clone.theta = np.asarray(theta, dtype=float)
        return clone

    def __repr__(self):
        return f"{type(self).__name__}(theta={np.array2string(self.theta, precision=3)})"


def _check_inputs(x, y, n_active_max=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("kernel inputs must be 2-D matrices")
    if y is None:
        return x, None
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != x.shape[1]:
        raise ValueError("kernel input dimensions do not match")
    return x, y


def _select(x, active_dims):
    if active_dims is None:
        return x
    if np.max(active_dims) >= x.shape[1]:
        raise ValueError("active_dims exceed the input dimension")
    return x[:, active_dims]


class RBFKernel(Kernel):
    """Squared-exponential kernel with per-dimension length scales.

    ``k(x, y) = variance * exp(-0.5 * sum_d ((x_d - y_d) / length_scale_d)**2)``

    restricted to ``active_dims`` when given. ``length_scales`` may be a
    single shared value or one value per active dimension.
    """

    def __init__(self, variance=1.0, length_scales=1.0, active_dims=None):
        self.variance = float(variance)
        self.length_scales = np.atleast_1d(np.asarray(length_scales, dtype=float))
        self.active_dims = (None if active_dims is None
                            else np.asarray(active_dims, dtype=int))
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        if np.any(self.length_scales <= 0):
            raise ValueError("length scales must be positive")

    @property
    def theta(self) -> np.ndarray:
        return np.log(np.concatenate([[self.variance], self.length_scales]))

    @theta.setter
    def theta(self, value):
        value = np.asarray(value, dtype=float)
        if value.size != 1 + self.length_scales.size:
            raise ValueError("theta has the wrong size")
        self.variance = float(np.exp(value[0]))
        self.length_scales = np.exp(value[1:])

    def __call__(self, x, y=None, eval_gradient=False):
        x, y = _check_inputs(x, y)
        a = _select(x, self.active_dims) / self.length_scales
        b = a if y is None else _select(y, self.active_dims) / self.length_scales
        sq = cdist(a, b, "sqeuclidean")
        k = self.variance * np.exp(-0.5 * sq)
        if not eval_gradient:
            return k
        if y is not None:
            raise ValueError("gradients are only available for symmetric Gram "
                             "matrices")
        grads = np.empty(k.shape + (self.n_theta,))
        grads[..., 0] = k
        if self.length_scales.size == 1:
            grads[..., 1] = k * sq
        else:
            for d in range(self.length_scales.size):
                diff = a[:, d, None] - a[None, :, d]
                grads[..., 1 + d] = k * diff**2
        return k, grads

    def diag(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[0], self.variance)

    def to_dict(self) -> dict:
        return {
            "type": "rbf",
            "variance": self.variance,
            "length_scales": self.length_scales.tolist(),
            "active_dims": (None if self.active_dims is None
                            else self.active_dims.tolist()),
        }


class LinearKernel(Kernel):
    """Dot-product kernel with a diagonal weight-prior covariance.

    ``k(x, y) = sum_d variances_d * x_d * y_d`` over the active dimensions,
    the covariance of a linear model whose weights have the given prior
    variances. ``variances`` may be shared or per-dimension.
    """

    def __init__(self, variances=1.0, active_dims=None):
        self.variances = np.atleast_1d(np.asarray(variances, dtype=float))
        self.active_dims = (None if active_dims is None
                            else np.asarray(active_dims, dtype=int))
        if np.any(self.variances <= 0):
            raise ValueError("weight-prior variances must be positive")

    @property
    def theta(self) -> np.ndarray:
        return np.log(self.variances)

    @theta.setter
    def theta(self, value):
        value = np.asarray(value, dtype=float)
        if value.size != self.variances.size:
            raise ValueError("theta has the wrong size")
        self.variances = np.exp(value)

    def __call__(self, x, y=None, eval_gradient=False):
        x, y = _check_inputs(x, y)
        a = _select(x, self.active_dims)
        b = a if y is None else _select(y, self.active_dims)
        k = (a * self.variances) @ b.T
        if not eval_gradient:
            return k
        if y is not None:
            raise ValueError("gradients are only available for symmetric Gram "
                             "matrices")
        grads = np.empty(k.shape + (self.n_theta,))
        if self.variances.size == 1:
            grads[..., 0] = k
        else:
            for d in range(self.variances.size):
                grads[..., d] = self.variances[d] * np.outer(a[:, d], a[:, d])
        return k, grads

    def diag(self, x) -> np.ndarray:
        a = _select(np.asarray(x, dtype=float), self.active_dims)
        return np.sum(self.variances * a**2, axis=1)

    def to_dict(self) -> dict:
        return {
            "type": "linear",
            "variances": self.variances.tolist(),
            "active_dims": (None if self.active_dims is None
                            else self.active_dims.tolist()),
        }


class SumKernel(Kernel):
    """Sum of component kernels; hyperparameters concatenate in order."""

    def __init__(self, parts):
        self.parts = list(parts)
        if not self.parts:
            raise ValueError("SumKernel needs at least one part")

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([p.theta for p in self.parts])

    @theta.setter
    def theta(self, value):
        value = np.asarray(value, dtype=float)
        offset = 0
        for part in self.parts:
            size = part.n_theta
            part.theta = value[offset:offset + size]
            offset += size
        if offset != value.size:
            raise ValueError("theta has the wrong size")

    def __call__(self, x, y=None, eval_gradient=False):
        if not eval_gradient:
            out = self.parts[0](x, y)
            for part in self.parts[1:]:
                out = out + part(x, y)
            return out
        evaluated = [part(x, y, eval_gradient=True) for part in self.parts]
        k = sum(item[0] for item in evaluated)
        grads = np.dstack([item[1] for item in evaluated])
        return k, grads

    def diag(self, x) -> np.ndarray:
        return np.sum([part.diag(x) for part in self.parts], axis=0)

    def to_dict(self) -> dict:
        return {"type": "sum", "parts": [p.to_dict() for p in self.parts]}


class GatedKernel(Kernel):
    """Vertical rescaling of a kernel by a binary velocity gate.

    ``k(x, y) = a(x) * inner(x, y) * a(y)`` with ``a`` in {0, 1}: the inner
    covariance acts only between quasi-static inputs and is switched off
    everywhere else. A rescaled kernel is the covariance of ``a(x) f(x)``,
    so positive semidefiniteness is preserved exactly.
    """

    def __init__(self, inner: Kernel, gate: VelocityGate):
        self.inner = inner
        self.gate = gate

    @property
    def theta(self) -> np.ndarray:
        return self.inner.theta

    @theta.setter
    def theta(self, value):
        self.inner.theta = value

    def __call__(self, x, y=None, eval_gradient=False):
        ax = self.gate.values(np.asarray(x, dtype=float))
        ay = ax if y is None else self.gate.values(np.asarray(y, dtype=float))
        scale = np.outer(ax, ay)
        if not eval_gradient:
            return scale * self.inner(x, y)
        k, grads = self.inner(x, y, eval_gradient=True)
        return scale * k, scale[..., None] * grads

    def diag(self, x) -> np.ndarray:
        a = self.gate.values(np.asarray(x, dtype=float))
        return a**2 * self.inner.diag(x)

    def to_dict(self) -> dict:
        return {"type": "gated", "inner": self.inner.to_dict(),
                "gate": self.gate.to_dict()}


_KERNEL_TYPES = {"rbf", "linear", "sum", "gated"}


def kernel_from_dict(payload: dict) -> Kernel:
    """Rebuild a kernel from its tagged dictionary form."""
    kind = payload.get("type")
    if kind == "rbf":
        return RBFKernel(variance=payload["variance"],
                         length_scales=payload["length_scales"],
                         active_dims=payload.get("active_dims"))
    if kind == "linear":
        return LinearKernel(variances=payload["variances"],
                            active_dims=payload.get("active_dims"))
    if kind == "sum":
        return SumKernel([kernel_from_dict(p) for p in payload["parts"]])
    if kind == "gated":
        return GatedKernel(kernel_from_dict(payload["inner"]),
                           VelocityGate.from_dict(payload["gate"]))
    raise ValueError(f"unknown kernel type {kind!r}; expected one of "
                     f"{sorted(_KERNEL_TYPES)}")


def gram(kernel: Kernel, x, y=None) -> np.ndarray:
    """Gram matrix with entry (i, j) equal to ``kernel(x_i, y_j)``."""
    return kernel(x, y)


def pair_value(kernel: Kernel, x_i, x_j) -> float:
    """Kernel value for a single pair of input vectors."""
    x_i = np.asarray(x_i, dtype=float)[None, :]
    x_j = np.asarray(x_j, dtype=float)[None, :]
    return float(kernel(x_i, x_j)[0, 0])
