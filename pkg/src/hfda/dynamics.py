"""ODE models and the augmented-state construction.

Each model is a ``ModelSpec``: a right-hand side f(t, x, params) with analytic
Jacobians with respect to the state and the parameters, a baseline initial
state, and a reference parameter vector.  ``augment`` folds the parameters
into the initial condition, turning parameter estimation into the problem of
choosing the initial value of an enlarged state vector.

All right-hand sides and Jacobians are vectorized over leading batch
dimensions: ``x`` may have shape ``(d,)`` or ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    """A named ODE model dx/dt = f(t, x, params).

    Attributes:
        name: registry identifier.
        d: state dimension.
        p: parameter dimension.
        rhs: (t, x, params) -> dx/dt, shape (..., d).
        jac_x: (t, x, params) -> df/dx, shape (..., d, d).
        jac_p: (t, x, params) -> df/dparams, shape (..., d, p).
        x0: baseline initial state, shape (d,).
        params_ref: reference ("true") parameter vector, shape (p,).
        t_span: integration interval (t0, t_end).
    """

    name: str
    d: int
    p: int
    rhs: Callable[[float, Array, Array], Array]
    jac_x: Callable[[float, Array, Array], Array]
    jac_p: Callable[[float, Array, Array], Array]
    x0: Array
    params_ref: Array
    t_span: tuple[float, float]

    def __post_init__(self) -> None:
        if self.d < 1 or self.p < 1:
            raise ValueError("model dimensions must satisfy d >= 1 and p >= 1")
        t0, t_end = self.t_span
        if not t_end > t0:
            raise ValueError("t_span must satisfy t_end > t0")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "params_ref", np.asarray(self.params_ref, dtype=float))
        if self.x0.shape != (self.d,):
            raise ValueError(f"x0 must have shape ({self.d},)")
        if self.params_ref.shape != (self.p,):
            raise ValueError(f"params_ref must have shape ({self.p},)")

    @property
    def q(self) -> int:
        """Augmented dimension d + p."""
        return self.d + self.p

    def theta_ref(self) -> Array:
        """Reference augmented initial condition concat(x0, params_ref)."""
        return np.concatenate([self.x0, self.params_ref])


@dataclass(frozen=True)
class AugmentedSystem:
    """Parameter-free system dz/dt = F(t, z) on the augmented state z = (x, params).

    The parameter block of the derivative is identically zero, and the Jacobian
    has block form [[f_x, f_p], [0, 0]].
    """

    model: ModelSpec
    q: int

    def split(self, z: Array) -> tuple[Array, Array]:
        """Split an augmented state into (physical state, parameters)."""
        return z[..., : self.model.d], z[..., self.model.d :]

    def rhs(self, t: float, z: Array) -> Array:
        x, params = self.split(z)
        dz = np.zeros_like(z)
        dz[..., : self.model.d] = self.model.rhs(t, x, params)
        return dz

    def jac(self, t: float, z: Array) -> Array:
        x, params = self.split(z)
        d = self.model.d
        jac = np.zeros(z.shape + (self.q,))
        jac[..., :d, :d] = self.model.jac_x(t, x, params)
        jac[..., :d, d:] = self.model.jac_p(t, x, params)
        return jac

    def initial_state(self, theta: Array) -> Array:
        """The augmented initial condition is the decision vector itself."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.q:
            raise ValueError(f"augmented state must have {self.q} components")
        return theta


def eval_rhs(model: ModelSpec, t: float, x: Array, params: Array) -> Array:
    """Evaluate f(t, x, params) with dimension checks."""
    x = np.asarray(x, dtype=float)
    params = np.asarray(params, dtype=float)
    if x.shape[-1] != model.d:
        raise ValueError(f"state must have {model.d} components, got {x.shape[-1]}")
    if params.shape[-1] != model.p:
        raise ValueError(f"params must have {model.p} components, got {params.shape[-1]}")
    return model.rhs(t, x, params)


def eval_jacobians(model: ModelSpec, t: float, x: Array, params: Array) -> tuple[Array, Array]:
    """Evaluate (df/dx, df/dparams) with dimension checks."""
    x = np.asarray(x, dtype=float)
    params = np.asarray(params, dtype=float)
    if x.shape[-1] != model.d or params.shape[-1] != model.p:
        raise ValueError("state/params dimensions do not match the model")
    return model.jac_x(t, x, params), model.jac_p(t, x, params)


def augment(model: ModelSpec) -> AugmentedSystem:
    """Fold parameters into the state: z = (x, params), dz/dt = (f, 0)."""
    return AugmentedSystem(model=model, q=model.q)


# ---------------------------------------------------------------------------
# Model definitions
# ---------------------------------------------------------------------------


def _fn_rhs(t: float, x: Array, params: Array) -> Array:
    # dv/dt = v - v^3/3 - w + ii
    # dw/dt = (v - a - b*w) / tau
    v, w = x[..., 0], x[..., 1]
    ii, a, b, tau = params[..., 0], params[..., 1], params[..., 2], params[..., 3]
    out = np.empty(np.broadcast(v, ii).shape + (2,))
    out[..., 0] = v - v**3 / 3.0 - w + ii
    out[..., 1] = (v - a - b * w) / tau
    return out


def _fn_jac_x(t: float, x: Array, params: Array) -> Array:
    v = x[..., 0]
    b, tau = params[..., 2], params[..., 3]
    out = np.empty(np.broadcast(v, b).shape + (2, 2))
    out[..., 0, 0] = 1.0 - v**2
    out[..., 0, 1] = -1.0
    out[..., 1, 0] = 1.0 / tau
    out[..., 1, 1] = -b / tau
    return out


def _fn_jac_p(t: float, x: Array, params: Array) -> Array:
    v, w = x[..., 0], x[..., 1]
    a, b, tau = params[..., 1], params[..., 2], params[..., 3]
    out = np.zeros(np.broadcast(v, a).shape + (2, 4))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = -1.0 / tau
    out[..., 1, 2] = -w / tau
    out[..., 1, 3] = -(v - a - b * w) / tau**2
    return out


def _lv_rhs(t: float, x: Array, params: Array) -> Array:
    # du/dt = alpha*u - beta*u*v
    # dv/dt = delta*u*v - gamma*v
    u, v = x[..., 0], x[..., 1]
    alpha, beta, delta, gamma = (params[..., j] for j in range(4))
    out = np.empty(np.broadcast(u, alpha).shape + (2,))
    out[..., 0] = alpha * u - beta * u * v
    out[..., 1] = delta * u * v - gamma * v
    return out


def _lv_jac_x(t: float, x: Array, params: Array) -> Array:
    u, v = x[..., 0], x[..., 1]
    alpha, beta, delta, gamma = (params[..., j] for j in range(4))
    out = np.empty(np.broadcast(u, alpha).shape + (2, 2))
    out[..., 0, 0] = alpha - beta * v
    out[..., 0, 1] = -beta * u
    out[..., 1, 0] = delta * v
    out[..., 1, 1] = delta * u - gamma
    return out


def _lv_jac_p(t: float, x: Array, params: Array) -> Array:
    u, v = x[..., 0], x[..., 1]
    out = np.zeros(np.broadcast(u, params[..., 0]).shape + (2, 4))
    out[..., 0, 0] = u
    out[..., 0, 1] = -u * v
    out[..., 1, 2] = u * v
    out[..., 1, 3] = -v
    return out


def _vdp_rhs(t: float, x: Array, params: Array) -> Array:
    # dx1/dt = x2
    # dx2/dt = mu*(1 - x1^2)*x2 - x1
    x1, x2 = x[..., 0], x[..., 1]
    mu = params[..., 0]
    out = np.empty(np.broadcast(x1, mu).shape + (2,))
    out[..., 0] = x2
    out[..., 1] = mu * (1.0 - x1**2) * x2 - x1
    return out


def _vdp_jac_x(t: float, x: Array, params: Array) -> Array:
    x1, x2 = x[..., 0], x[..., 1]
    mu = params[..., 0]
    out = np.empty(np.broadcast(x1, mu).shape + (2, 2))
    out[..., 0, 0] = 0.0
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = -2.0 * mu * x1 * x2 - 1.0
    out[..., 1, 1] = mu * (1.0 - x1**2)
    return out


def _vdp_jac_p(t: float, x: Array, params: Array) -> Array:
    x1, x2 = x[..., 0], x[..., 1]
    out = np.empty(np.broadcast(x1, params[..., 0]).shape + (2, 1))
    out[..., 0, 0] = 0.0
    out[..., 1, 0] = (1.0 - x1**2) * x2
    return out


def fitzhugh_nagumo() -> ModelSpec:
    """Relaxation oscillator for neuronal excitability; params (ii, a, b, tau)."""
    return ModelSpec(
        name="fitzhugh_nagumo",
        d=2,
        p=4,
        rhs=_fn_rhs,
        jac_x=_fn_jac_x,
        jac_p=_fn_jac_p,
        x0=np.array([-1.0, 1.0]),
        params_ref=np.array([0.5, 0.7, 0.8, 12.5]),
        t_span=(0.0, 50.0),
    )


def lotka_volterra() -> ModelSpec:
    """Predator-prey model; params (alpha, beta, delta, gamma)."""
    return ModelSpec(
        name="lotka_volterra",
        d=2,
        p=4,
        rhs=_lv_rhs,
        jac_x=_lv_jac_x,
        jac_p=_lv_jac_p,
        x0=np.array([1.0, 1.0]),
        params_ref=np.array([0.67, 1.33, 1.0, 1.0]),
        t_span=(0.0, 10.0),
    )


def van_der_pol() -> ModelSpec:
    """Relaxation oscillator in first-order form; scalar damping parameter mu."""
    return ModelSpec(
        name="van_der_pol",
        d=2,
        p=1,
        rhs=_vdp_rhs,
        jac_x=_vdp_jac_x,
        jac_p=_vdp_jac_p,
        x0=np.array([2.0, 0.0]),
        params_ref=np.array([1.0]),
        t_span=(0.0, 10.0),
    )


def linear_system(a: Array, b: Array, x0: Array, t_span: tuple[float, float]) -> ModelSpec:
    """Linear test model dx/dt = A x + B params.

    The flow is affine in the augmented initial condition, so least-squares
    fits against it have closed-form solutions.  Used by verification checks;
    not registered for CLI lookup.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d, p = b.shape
    if a.shape != (d, d):
        raise ValueError("A must be square and compatible with B")

    def rhs(t: float, x: Array, params: Array) -> Array:
        return x @ a.T + params @ b.T

    def jac_x(t: float, x: Array, params: Array) -> Array:
        return np.broadcast_to(a, x.shape[:-1] + (d, d)).copy()

    def jac_p(t: float, x: Array, params: Array) -> Array:
        return np.broadcast_to(b, x.shape[:-1] + (d, p)).copy()

    return ModelSpec(
        name="linear",
        d=d,
        p=p,
        rhs=rhs,
        jac_x=jac_x,
        jac_p=jac_p,
        x0=np.asarray(x0, dtype=float),
        params_ref=np.zeros(p),
        t_span=t_span,
    )


_REGISTRY: dict[str, Callable[[], ModelSpec]] = {
    "fitzhugh_nagumo": fitzhugh_nagumo,
    "lotka_volterra": lotka_volterra,
    "van_der_pol": van_der_pol,
}

MODEL_NAMES = tuple(sorted(_REGISTRY))


def get_model(name: str) -> ModelSpec:
    """Look up a registered model by name."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; available: {', '.join(MODEL_NAMES)}") from None
    return factory()
