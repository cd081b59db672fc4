"""Fixed-step Ralston fourth-order Runge-Kutta integration.

Three entry points:

* ``integrate`` advances an augmented system over a ``TimeGrid``.
* ``integrate_with_sensitivity`` jointly advances the state and the q x q
  derivative of the state with respect to the initial condition.  The
  Jacobian is evaluated at the Runge-Kutta stage states, which makes the
  propagated matrix the exact derivative of the discrete flow map.
* ``integrate_adjoint`` runs the reverse sweep of the same discrete flow:
  it transposes the stage recursion step by step (re-running the forward
  stages to recover intra-step states), adding impulse vectors at
  designated nodes on the earlier side of the node.

Grids are built so that every observation time is exactly one of the nodes;
integration never steps across an observation time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ModelSpec

Array = np.ndarray

# Ralston's minimum-truncation-error fourth-order tableau, in exact sqrt(5)
# form (the commonly tabulated 8-digit decimals round these).
_S5 = math.sqrt(5.0)
C2 = 0.4
C3 = (14.0 - 3.0 * _S5) / 16.0
A21 = 0.4
A31 = (-2889.0 + 1428.0 * _S5) / 1024.0
A32 = (3785.0 - 1620.0 * _S5) / 1024.0
A41 = (-3365.0 + 2094.0 * _S5) / 6040.0
A42 = (-975.0 - 3046.0 * _S5) / 2552.0
A43 = (467040.0 + 203968.0 * _S5) / 240845.0
B1 = (263.0 + 24.0 * _S5) / 1812.0
B2 = (125.0 - 1000.0 * _S5) / 3828.0
B3 = 1024.0 * (3346.0 + 1623.0 * _S5) / 5924787.0
B4 = (30.0 - 4.0 * _S5) / 123.0


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, node_index: int, time: float):
        super().__init__(f"non-finite state at node {node_index} (t = {time:g})")
        self.node_index = node_index
        self.time = time


# Process-global step counter; instrumentation for cost-contract assertions
# only, not part of the numerical contract.
_step_count = 0


def reset_step_count() -> None:
    global _step_count
    _step_count = 0


def step_count() -> int:
    return _step_count


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing integration nodes with an observation-node map.

    Attributes:
        nodes: node times, nodes[0] = t0.
        h: nominal step size used to build the regular part of the grid.
        obs_node: node index of each observation time the grid was built
            from (parallel to the ``obs_times`` argument of the builder).
    """

    nodes: Array
    h: float
    obs_node: Array

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    def node_index(self, times: Array) -> Array:
        """Map times to node indices; raises if a time is not a grid node."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.nodes, times)
        idx = np.clip(idx, 0, len(self.nodes) - 1)
        if not np.array_equal(self.nodes[idx], times):
            bad = times[self.nodes[idx] != times][0]
            raise ValueError(f"time {bad!r} is not a grid node")
        return idx


def build_grid(t_span: tuple[float, float], h: float, obs_times: Array) -> TimeGrid:
    """Union of a regular step-h grid with observation times.

    Observation times within 1e-9 * |t_end| of a regular node are snapped to
    it (the node adopts the observation's float value, so observation times
    always match their node bitwise); all others are inserted, shortening
    a step.
    """
    t0, t_end = float(t_span[0]), float(t_span[1])
    if h <= 0.0:
        raise ValueError("step size h must be positive")
    if t_end <= t0:
        raise ValueError("t_span must satisfy t_end > t0")
    obs_times = np.asarray(obs_times, dtype=float)
    if obs_times.size and (obs_times[0] < t0 or obs_times[-1] > t_end):
        raise ValueError("observation times must lie within t_span")
    if obs_times.size and np.any(np.diff(obs_times) <= 0):
        raise ValueError("observation times must be strictly increasing")

    tol = 1e-9 * max(abs(t_end), t_end - t0)
    n_whole = int(math.floor((t_end - t0) / h + 1e-12))
    reg = t0 + h * np.arange(n_whole + 1)
    if t_end - reg[-1] > tol:
        reg = np.append(reg, t_end)  # final, shorter step
    else:
        reg[-1] = t_end

    nodes = reg.copy()
    snapped = np.zeros(len(nodes), dtype=bool)
    inserts = []
    for t_obs in obs_times:
        j = int(np.clip(np.searchsorted(nodes, t_obs), 1, len(nodes) - 1))
        j = j if abs(nodes[j] - t_obs) <= abs(nodes[j - 1] - t_obs) else j - 1
        if abs(nodes[j] - t_obs) <= tol and not snapped[j]:
            nodes[j] = t_obs  # node adopts the observation's float value
            snapped[j] = True
        else:
            inserts.append(t_obs)
    if inserts:
        nodes = np.sort(np.concatenate([nodes, np.asarray(inserts)]))
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("grid construction produced non-increasing nodes")

    grid = TimeGrid(nodes=nodes, h=h, obs_node=np.empty(0, dtype=int))
    obs_node = grid.node_index(obs_times) if obs_times.size else np.empty(0, dtype=int)
    return TimeGrid(nodes=nodes, h=h, obs_node=obs_node)


def grid_from_times(t0: float, times: Array, h: float = 0.0) -> TimeGrid:
    """Grid whose nodes are t0 followed by the given times (no regular part).

    This is the coarse grid used by sampled gradients: one step per retained
    observation.
    """
    times = np.asarray(times, dtype=float)
    uniq = np.unique(times)
    if uniq.size and uniq[0] < t0:
        raise ValueError("times must not precede t0")
    nodes = uniq if uniq.size and uniq[0] == t0 else np.concatenate([[t0], uniq])
    grid = TimeGrid(nodes=nodes, h=h, obs_node=np.empty(0, dtype=int))
    obs_node = grid.node_index(times) if times.size else np.empty(0, dtype=int)
    return TimeGrid(nodes=nodes, h=h, obs_node=obs_node)


@dataclass(frozen=True)
class Trajectory:
    """States at every grid node; states[j] corresponds to grid.nodes[j]."""

    grid: TimeGrid
    states: Array


@dataclass(frozen=True)
class SensitivityTrajectory:
    """Trajectory plus d(state)/d(initial state) at requested nodes."""

    base: Trajectory
    request: Array  # node indices, sorted
    sens: Array  # (len(request), q, q)

    def sens_at(self, node_index: int) -> Array:
        pos = int(np.searchsorted(self.request, node_index))
        if pos >= len(self.request) or self.request[pos] != node_index:
            raise KeyError(f"no sensitivity recorded at node {node_index}")
        return self.sens[pos]


def _rhs_of(system):
    return system if callable(system) else system.rhs


def integrate(system, z0: Array, grid: TimeGrid, check: bool = True) -> Trajectory:
    """Advance z0 over the grid, one Ralston-RK4 step per node pair.

    ``system`` is either an object exposing ``rhs(t, z)`` or the rhs callable
    itself.  ``z0`` may carry leading batch dimensions.  With ``check`` the
    integration aborts with ``DivergenceError`` at the first non-finite
    state; without it, non-finite values propagate (batched evaluation of
    many initial conditions masks failures afterwards).
    """
    global _step_count
    rhs = _rhs_of(system)
    z = np.asarray(z0, dtype=float)
    if check and not np.all(np.isfinite(z)):
        raise DivergenceError(0, grid.t0)
    nodes = grid.nodes
    states = np.empty((len(nodes),) + z.shape)
    states[0] = z
    with np.errstate(all="ignore"):
        for j in range(len(nodes) - 1):
            t, h = nodes[j], nodes[j + 1] - nodes[j]
            k1 = rhs(t, z)
            k2 = rhs(t + C2 * h, z + (h * A21) * k1)
            k3 = rhs(t + C3 * h, z + h * (A31 * k1 + A32 * k2))
            k4 = rhs(t + h, z + h * (A41 * k1 + A42 * k2 + A43 * k3))
            z = z + h * (B1 * k1 + B2 * k2 + B3 * k3 + B4 * k4)
            _step_count += 1
            if check and not np.all(np.isfinite(z)):
                raise DivergenceError(j + 1, float(nodes[j + 1]))
            states[j + 1] = z
    return Trajectory(grid=grid, states=states)


def integrate_with_sensitivity(
    system, z0: Array, grid: TimeGrid, request_nodes: Array
) -> SensitivityTrajectory:
    """Advance the state and its derivative with respect to z0 together.

    The q x q matrix starts at the identity and is propagated through the
    same stages as the state, with the Jacobian evaluated at each stage
    state; the recorded matrices are therefore the exact derivatives of the
    discrete flow.
    """
    global _step_count
    rhs, jac = system.rhs, system.jac
    z = np.asarray(z0, dtype=float)
    q = z.shape[-1]
    request = np.unique(np.asarray(request_nodes, dtype=int))
    if request.size and (request[0] < 0 or request[-1] > grid.n_steps):
        raise ValueError("requested nodes outside the grid")

    nodes = grid.nodes
    states = np.empty((len(nodes), q))
    states[0] = z
    sens = np.empty((len(request), q, q))
    x = np.eye(q)
    pos = 0
    if request.size and request[0] == 0:
        sens[0] = x
        pos = 1
    with np.errstate(all="ignore"):
        for j in range(len(nodes) - 1):
            t, h = nodes[j], nodes[j + 1] - nodes[j]
            z1 = z
            k1 = rhs(t, z1)
            kk1 = jac(t, z1) @ x
            z2 = z + (h * A21) * k1
            k2 = rhs(t + C2 * h, z2)
            kk2 = jac(t + C2 * h, z2) @ (x + (h * A21) * kk1)
            z3 = z + h * (A31 * k1 + A32 * k2)
            k3 = rhs(t + C3 * h, z3)
            kk3 = jac(t + C3 * h, z3) @ (x + h * (A31 * kk1 + A32 * kk2))
            z4 = z + h * (A41 * k1 + A42 * k2 + A43 * k3)
            k4 = rhs(t + h, z4)
            kk4 = jac(t + h, z4) @ (x + h * (A41 * kk1 + A42 * kk2 + A43 * kk3))
            z = z + h * (B1 * k1 + B2 * k2 + B3 * k3 + B4 * k4)
            x = x + h * (B1 * kk1 + B2 * kk2 + B3 * kk3 + B4 * kk4)
            _step_count += 1
            if not np.all(np.isfinite(z)):
                raise DivergenceError(j + 1, float(nodes[j + 1]))
            states[j + 1] = z
            if pos < len(request) and request[pos] == j + 1:
                sens[pos] = x
                pos += 1
    traj = Trajectory(grid=grid, states=states)
    return SensitivityTrajectory(base=traj, request=request, sens=sens)


def integrate_augmented(model: ModelSpec, theta: Array, grid: TimeGrid, check: bool = True) -> Array:
    """Physical-state trajectory of the augmented system started at theta.

    The parameter block of the augmented state never changes, so only the
    physical block is stepped (bitwise identical to the corresponding rows
    of ``integrate`` on the full augmented system).  ``theta`` may carry
    leading batch dimensions; returns states of shape (n_nodes, ..., d).
    """
    global _step_count
    theta = np.asarray(theta, dtype=float)
    d = model.d
    x = theta[..., :d].copy()
    params = theta[..., d:]
    if check and not np.all(np.isfinite(theta)):
        raise DivergenceError(0, grid.t0)
    rhs = model.rhs
    nodes = grid.nodes
    states = np.empty((len(nodes),) + x.shape)
    states[0] = x
    with np.errstate(all="ignore"):
        for j in range(len(nodes) - 1):
            t, h = nodes[j], nodes[j + 1] - nodes[j]
            k1 = rhs(t, x, params)
            k2 = rhs(t + C2 * h, x + (h * A21) * k1, params)
            k3 = rhs(t + C3 * h, x + h * (A31 * k1 + A32 * k2), params)
            k4 = rhs(t + h, x + h * (A41 * k1 + A42 * k2 + A43 * k3), params)
            x = x + h * (B1 * k1 + B2 * k2 + B3 * k3 + B4 * k4)
            _step_count += 1
            if check and not np.all(np.isfinite(x)):
                raise DivergenceError(j + 1, float(nodes[j + 1]))
            states[j + 1] = x
    return states


def integrate_augmented_sensitivity(
    model: ModelSpec, theta: Array, grid: TimeGrid, request_nodes: Array
) -> tuple[Array, Array, Array]:
    """Physical states plus the physical rows of the flow derivative.

    The lower (parameter) rows of the augmented sensitivity stay [0 I]
    forever, so only the top d x q block is propagated; its stage slopes are
    f_x S + [0 | f_p] evaluated at the state stages.  Returns
    (states (n_nodes, d), request, sens_top (len(request), d, q)), where
    sens_top rows match ``integrate_with_sensitivity`` on the augmented
    system.
    """
    global _step_count
    theta = np.asarray(theta, dtype=float)
    d, q = model.d, model.q
    x = theta[:d].copy()
    params = theta[d:]
    rhs, jac_x, jac_p = model.rhs, model.jac_x, model.jac_p
    request = np.unique(np.asarray(request_nodes, dtype=int))
    if request.size and (request[0] < 0 or request[-1] > grid.n_steps):
        raise ValueError("requested nodes outside the grid")

    def slope(t_s: float, x_s: Array, s_s: Array) -> Array:
        kk = jac_x(t_s, x_s, params) @ s_s
        kk[:, d:] += jac_p(t_s, x_s, params)
        return kk

    nodes = grid.nodes
    states = np.empty((len(nodes), d))
    states[0] = x
    s = np.zeros((d, q))
    s[:, :d] = np.eye(d)
    sens = np.empty((len(request), d, q))
    pos = 0
    if request.size and request[0] == 0:
        sens[0] = s
        pos = 1
    with np.errstate(all="ignore"):
        for j in range(len(nodes) - 1):
            t, h = nodes[j], nodes[j + 1] - nodes[j]
            k1 = rhs(t, x, params)
            kk1 = slope(t, x, s)
            x2 = x + (h * A21) * k1
            k2 = rhs(t + C2 * h, x2, params)
            kk2 = slope(t + C2 * h, x2, s + (h * A21) * kk1)
            x3 = x + h * (A31 * k1 + A32 * k2)
            k3 = rhs(t + C3 * h, x3, params)
            kk3 = slope(t + C3 * h, x3, s + h * (A31 * kk1 + A32 * kk2))
            x4 = x + h * (A41 * k1 + A42 * k2 + A43 * k3)
            k4 = rhs(t + h, x4, params)
            kk4 = slope(t + h, x4, s + h * (A41 * kk1 + A42 * kk2 + A43 * kk3))
            x = x + h * (B1 * k1 + B2 * k2 + B3 * k3 + B4 * k4)
            s = s + h * (B1 * kk1 + B2 * kk2 + B3 * kk3 + B4 * kk4)
            _step_count += 1
            if not np.all(np.isfinite(x)):
                raise DivergenceError(j + 1, float(nodes[j + 1]))
            states[j + 1] = x
            if pos < len(request) and request[pos] == j + 1:
                sens[pos] = s
                pos += 1
    return states, request, sens


def integrate_adjoint(system, traj: Trajectory, impulses: dict[int, Array]) -> Array:
    """Backward sweep of the adjoint variable from t_end to t0.

    Starts from zero at the final node and, at each node carrying an impulse
    (keyed by node index), adds the impulse after arriving at the node and
    before departing toward the previous one.  Each backward step transposes
    the forward stage recursion, re-running the forward stages of that step
    to recover the intra-step states.  Returns the adjoint at t0.
    """
    global _step_count
    rhs, jac = system.rhs, system.jac
    nodes = traj.grid.nodes
    n_nodes = len(nodes)
    q = traj.states.shape[-1]
    for key in impulses:
        if not 0 <= key < n_nodes:
            raise ValueError(f"impulse node {key} is not a grid node index")

    chi = np.zeros(q)
    last = n_nodes - 1
    if last in impulses:
        chi = chi + impulses[last]
    with np.errstate(all="ignore"):
        for j in range(n_nodes - 2, -1, -1):
            t, h = nodes[j], nodes[j + 1] - nodes[j]
            z1 = traj.states[j]
            k1 = rhs(t, z1)
            z2 = z1 + (h * A21) * k1
            k2 = rhs(t + C2 * h, z2)
            z3 = z1 + h * (A31 * k1 + A32 * k2)
            k3 = rhs(t + C3 * h, z3)
            z4 = z1 + h * (A41 * k1 + A42 * k2 + A43 * k3)

            j4t = jac(t + h, z4).T
            j3t = jac(t + C3 * h, z3).T
            j2t = jac(t + C2 * h, z2).T
            j1t = jac(t, z1).T
            v4 = j4t @ ((h * B4) * chi)
            v3 = j3t @ ((h * B3) * chi + (h * A43) * v4)
            v2 = j2t @ ((h * B2) * chi + h * (A32 * v3 + A42 * v4))
            v1 = j1t @ ((h * B1) * chi + h * (A21 * v2 + A31 * v3 + A41 * v4))
            chi = chi + v1 + v2 + v3 + v4
            _step_count += 1
            if j in impulses:
                chi = chi + impulses[j]
    return chi
