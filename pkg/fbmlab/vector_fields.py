"""Vector fields V_0 (drift) and V_1..V_d (diffusion) of the SDE.

Evaluators are batched: a state array has shape (d, m) for m paths, ``value`` returns (d, m), ``jacobian`` returns
(d, d, m) with ``[k, l] = dV^k / dx_l`` and ``hessian`` returns (d, d, d, m). One-dimensional fields may also carry
scalar (float -> float) evaluators, which the solver uses for single-path runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from fbmlab.errors import DomainError

FieldFn = Callable[[np.ndarray], np.ndarray]
ScalarFn = Callable[[float], float]


@dataclass(frozen=True)
class FieldBounds:
    """User-declared sup-norm bounds of a field and its first two derivatives."""

    value: float = math.inf
    jacobian: float = math.inf
    hessian: float = math.inf


@dataclass(frozen=True)
class VectorField:
    value: FieldFn
    jacobian: FieldFn
    hessian: FieldFn
    bounds: FieldBounds = FieldBounds()
    scalar: Optional[Tuple[ScalarFn, ScalarFn, ScalarFn]] = None


@dataclass
class VectorFieldSet:
    dim: int
    diffusion: List[VectorField]
    drift: Optional[VectorField] = None
    field_id: str = "custom"
    params: Dict[str, float] = field(default_factory=dict)
    debug: bool = False

    def __post_init__(self):
        if len(self.diffusion) != self.dim:
            raise ValueError(f"expected {self.dim} diffusion fields, got {len(self.diffusion)}")

    @property
    def has_drift(self) -> bool:
        return self.drift is not None

    @property
    def scalar_form(self) -> Optional[Tuple[Optional[ScalarFn], ScalarFn, ScalarFn]]:
        """(V_0, V_1, V_1') as float functions when d = 1 and every field provides them."""
        if self.dim != 1 or self.diffusion[0].scalar is None:
            return None
        if self.drift is not None and self.drift.scalar is None:
            return None
        drift = self.drift.scalar[0] if self.drift is not None else None
        sigma, dsigma, _ = self.diffusion[0].scalar
        return drift, sigma, dsigma

    def _checked(self, name: str, out: np.ndarray, bound: float) -> np.ndarray:
        if self.debug:
            assert np.all(np.abs(out) <= bound * (1 + 1e-12)), f"{self.field_id}: {name} exceeds declared bound {bound}"
        return out

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.zeros_like(x)
        return self._checked("V_0", self.drift.value(x), self.drift.bounds.value)

    def diffusion_at(self, x: np.ndarray) -> np.ndarray:
        """(d, d, m) array whose column i is V_{i+1}(x)."""
        columns = [self._checked(f"V_{i + 1}", f.value(x), f.bounds.value) for i, f in enumerate(self.diffusion)]
        return np.stack(columns, axis=1)

    def diffusion_jacobians_at(self, x: np.ndarray) -> List[np.ndarray]:
        return [
            self._checked(f"DV_{i + 1}", f.jacobian(x), f.bounds.jacobian) for i, f in enumerate(self.diffusion)
        ]

    def verify_bounds(self, x: np.ndarray):
        """Evaluates every field and its first two derivatives at the states ``x`` (shape (d, m)) and raises
        DomainError listing each declared bound that is exceeded."""
        named = [(f"V_{i + 1}", f) for i, f in enumerate(self.diffusion)]
        if self.drift is not None:
            named.append(("V_0", self.drift))
        exceeded = []
        for name, f in named:
            for prefix, evaluate, bound in (
                ("", f.value, f.bounds.value),
                ("D", f.jacobian, f.bounds.jacobian),
                ("D2", f.hessian, f.bounds.hessian),
            ):
                observed = float(np.max(np.abs(evaluate(x))))
                if observed > bound * (1 + 1e-12):
                    exceeded.append(f"{prefix}{name} reaches {observed:.4g} > {bound:.4g}")
        if exceeded:
            raise DomainError(f"{self.field_id}: declared bounds exceeded: {'; '.join(exceeded)}")


def diagonal_field(
    dim: int,
    component: int,
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray], np.ndarray],
    d2f: Callable[[np.ndarray], np.ndarray],
    bounds: FieldBounds,
    scalar: Optional[Tuple[ScalarFn, ScalarFn, ScalarFn]] = None,
) -> VectorField:
    """V(x) = f(x_c) e_c."""

    def value(x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        out[component] = f(x[component])
        return out

    def jacobian(x: np.ndarray) -> np.ndarray:
        out = np.zeros((dim, dim) + x.shape[1:])
        out[component, component] = df(x[component])
        return out

    def hessian(x: np.ndarray) -> np.ndarray:
        out = np.zeros((dim, dim, dim) + x.shape[1:])
        out[component, component, component] = d2f(x[component])
        return out

    return VectorField(value, jacobian, hessian, bounds, scalar if dim == 1 else None)


def componentwise_field(
    dim: int,
    f: Callable[[np.ndarray], np.ndarray],
    df: Callable[[np.ndarray], np.ndarray],
    d2f: Callable[[np.ndarray], np.ndarray],
    bounds: FieldBounds,
    scalar: Optional[Tuple[ScalarFn, ScalarFn, ScalarFn]] = None,
) -> VectorField:
    """V(x)_k = f(x_k) for every k (used for drifts)."""

    def jacobian(x: np.ndarray) -> np.ndarray:
        out = np.zeros((dim, dim) + x.shape[1:])
        out[np.arange(dim), np.arange(dim)] = df(x)
        return out

    def hessian(x: np.ndarray) -> np.ndarray:
        out = np.zeros((dim, dim, dim) + x.shape[1:])
        out[np.arange(dim), np.arange(dim), np.arange(dim)] = d2f(x)
        return out

    return VectorField(f, jacobian, hessian, bounds, scalar if dim == 1 else None)


def scalar_field_set(
    sigma: Callable[[np.ndarray], np.ndarray],
    dsigma: Callable[[np.ndarray], np.ndarray],
    d2sigma: Callable[[np.ndarray], np.ndarray],
    bounds: FieldBounds = FieldBounds(),
    field_id: str = "custom",
) -> VectorFieldSet:
    """Driftless one-dimensional set from numpy callables (X_t = x + int sigma(X) dB)."""
    return VectorFieldSet(1, [diagonal_field(1, 0, sigma, dsigma, d2sigma, bounds)], field_id=field_id)


def _cosine_drift(dim: int, strength: float) -> Optional[VectorField]:
    if strength == 0:
        return None
    c = float(strength)
    return componentwise_field(
        dim,
        lambda x: c * np.cos(x),
        lambda x: -c * np.sin(x),
        lambda x: -c * np.cos(x),
        FieldBounds(abs(c), abs(c), abs(c)),
        (lambda x: c * math.cos(x), lambda x: -c * math.sin(x), lambda x: -c * math.cos(x)),
    )


def const_sigma(dim: int = 1, sigma: float = 1.0, drift: float = 0.0) -> VectorFieldSet:
    s = float(sigma)
    bounds = FieldBounds(abs(s), 0.0, 0.0)
    fields = [
        diagonal_field(
            dim,
            i,
            lambda y: np.full_like(y, s),
            np.zeros_like,
            np.zeros_like,
            bounds,
            (lambda y: s, lambda y: 0.0, lambda y: 0.0),
        )
        for i in range(dim)
    ]
    return VectorFieldSet(dim, fields, _cosine_drift(dim, drift), "const_sigma", {"sigma": s, "drift": drift})


def two_plus_sin(dim: int = 1, drift: float = 0.0) -> VectorFieldSet:
    bounds = FieldBounds(3.0, 1.0, 1.0)
    fields = [
        diagonal_field(
            dim,
            i,
            lambda y: 2.0 + np.sin(y),
            np.cos,
            lambda y: -np.sin(y),
            bounds,
            (lambda y: 2.0 + math.sin(y), math.cos, lambda y: -math.sin(y)),
        )
        for i in range(dim)
    ]
    return VectorFieldSet(dim, fields, _cosine_drift(dim, drift), "two_plus_sin", {"drift": drift})


def _sech2(y):
    return 1.0 / np.cosh(y) ** 2


def tanh_elliptic(dim: int = 1, drift: float = 0.0) -> VectorFieldSet:
    """V_i(x) = (1.5 + tanh x_i) e_i, bounded between 0.5 and 2.5."""
    bounds = FieldBounds(2.5, 1.0, 4.0 / (3.0 * math.sqrt(3.0)))
    fields = [
        diagonal_field(
            dim,
            i,
            lambda y: 1.5 + np.tanh(y),
            _sech2,
            lambda y: -2.0 * np.tanh(y) * _sech2(y),
            bounds,
            (
                lambda y: 1.5 + math.tanh(y),
                lambda y: 1.0 / math.cosh(y) ** 2,
                lambda y: -2.0 * math.tanh(y) / math.cosh(y) ** 2,
            ),
        )
        for i in range(dim)
    ]
    return VectorFieldSet(dim, fields, _cosine_drift(dim, drift), "tanh_elliptic", {"drift": drift})


VECTOR_FIELD_BUILDERS: Dict[str, Callable[..., VectorFieldSet]] = {
    "const_sigma": const_sigma,
    "two_plus_sin": two_plus_sin,
    "tanh_elliptic": tanh_elliptic,
}


def build_vector_fields(field_id: str, dim: int = 1, **params: float) -> VectorFieldSet:
    try:
        builder = VECTOR_FIELD_BUILDERS[field_id]
    except KeyError:
        raise ValueError(f"unknown vector field id {field_id!r}, expected one of {sorted(VECTOR_FIELD_BUILDERS)}")
    return builder(dim, **params)
