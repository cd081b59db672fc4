"""Solvers: gradient descent, Gauss-Newton, SGD, and Kalman-based SGD.

A ``Problem`` binds a model, an observation set, the preferred integration
step, and the derivative mode, and exposes the objective, gradient, sampled
gradient, and residual-system evaluations the solvers consume.  ``free``
selects which components of the augmented initial condition are estimated
(all of them by default; restricting it pins the physical initial state).

All solvers produce a ``RunTrace``: per-iterate records of accumulated
solver time, iteration number, the iterate, and an objective proxy.  Only
solver work (integration, linear algebra, sampling) is timed; recording is
excluded, so budgeted runs can be replayed and measured afterwards without
polluting the budget.

The Kalman-based update maintains a positive definite matrix C alongside
the iterate.  Each step solves a sampled Gauss-Newton model regularized by
the current precision C^-1 and then adds the sampled information into the
precision.  The step has two algebraically equivalent forms: the
information form solves a system in the number of estimated components,
the covariance form (via the Woodbury identity) solves one in the stacked
residual dimension.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import ModelSpec
from .integrate import DivergenceError, TimeGrid, build_grid, grid_from_times
from .observe import GradientEvaluation, ObservationSet
from . import observe
from .stochastic import ResidualSystem, SampleSet, Sampler, full_sample
from . import stochastic

Array = np.ndarray


class SolverError(RuntimeError):
    """A linear solve inside an optimizer failed."""


def _sym(m: Array) -> Array:
    return 0.5 * (m + m.T)


def _spd_factor(m: Array, what: str):
    try:
        return cho_factor(m, lower=True)
    except LinAlgError:
        cond = float(np.linalg.cond(m))
        raise SolverError(
            f"{what}: matrix is not positive definite through roundoff "
            f"(condition estimate {cond:.3e}); increase damping"
        ) from None


@dataclass(frozen=True)
class StepSchedule:
    """Constant or polynomially decaying step sizes.

    The polynomial kind yields eta_k = eta0 / (1 + k/k0)^alpha with
    alpha in (0.5, 1], which diverges in sum and converges in sum of
    squares.
    """

    kind: str
    eta0: float
    k0: float = 1.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.eta0 <= 0 or self.k0 <= 0:
            raise ValueError("eta0 and k0 must be positive")
        if self.kind == "polynomial" and not 0.5 < self.alpha <= 1.0:
            raise ValueError("polynomial exponent must lie in (0.5, 1]")

    def eta(self, k: int) -> float:
        if self.kind == "constant":
            return self.eta0
        return self.eta0 / (1.0 + k / self.k0) ** self.alpha


@dataclass(frozen=True)
class RunTrace:
    """Per-iteration records of a solver run.

    ``wall_clock`` holds accumulated solver seconds at each record;
    ``objective_proxy`` is whatever objective estimate the solver had
    available when producing the iterate (evaluated at the pre-update
    iterate; NaN when none).
    """

    wall_clock: Array
    iteration: Array
    thetas: Array
    objective_proxy: Array
    budget: float
    terminated_by: str
    n_iterations: int

    def __len__(self) -> int:
        return len(self.wall_clock)

    @property
    def final_theta(self) -> Array:
        return self.thetas[-1]


class Problem:
    """A model/data pair ready for optimization over the augmented state."""

    def __init__(
        self,
        model: ModelSpec,
        data: ObservationSet,
        h: float,
        mode: str = "forward",
        free: Array | None = None,
    ):
        if mode not in ("forward", "adjoint"):
            raise ValueError(f"unknown derivative mode {mode!r}")
        self.model = model
        self.data = data
        self.h = float(h)
        self.mode = mode
        self.grid = build_grid(model.t_span, self.h, data.distinct_times())
        self.free = np.arange(model.q) if free is None else np.asarray(free, dtype=int)
        if self.free.size == 0 or self.free.min() < 0 or self.free.max() >= model.q:
            raise ValueError("free component indices out of range")

    @property
    def n_obs(self) -> int:
        return len(self.data)

    def objective(self, theta: Array) -> float:
        return observe.objective(self.model, theta, self.data, self.grid)

    def objective_many(self, thetas: Array) -> Array:
        return observe.objective_many(self.model, thetas, self.data, self.grid)

    def gradient(self, theta: Array) -> GradientEvaluation:
        return observe.gradient(self.model, theta, self.data, self.grid, mode=self.mode)

    def sample_grid(self, sample: SampleSet, coarse: bool = True) -> TimeGrid:
        """Grid for a sampled evaluation: the sampled times alone (coarse)
        or their union with the regular step grid."""
        times = self.data.times[sample.indices]
        if coarse:
            return grid_from_times(self.model.t_span[0], times, h=self.h)
        return build_grid(self.model.t_span, self.h, np.unique(times))

    def stochastic_gradient(
        self, theta: Array, sample: SampleSet, grid: TimeGrid
    ) -> GradientEvaluation:
        return stochastic.stochastic_gradient(
            self.model, theta, self.data, sample, grid, mode=self.mode
        )

    def residual_system(
        self, theta: Array, sample: SampleSet | None = None, grid: TimeGrid | None = None
    ) -> ResidualSystem:
        if sample is None:
            sample = full_sample(self.n_obs)
        if grid is None:
            grid = self.grid
        return stochastic.residual_system(self.model, theta, self.data, sample, grid)


# ---------------------------------------------------------------------------
# Shared run loop
# ---------------------------------------------------------------------------


def _run_loop(theta0, step, budget, max_iter, record_every, gtol=0.0):
    """Drive a solver step function under budget/iteration/convergence caps.

    ``step(k, theta) -> (theta_new, proxy, grad_norm)`` performs all timed
    work; grad_norm may be None for solvers without a convergence test.
    """
    if budget <= 0 and max_iter <= 0:
        raise ValueError("either budget or max_iter must be positive")
    theta = np.asarray(theta0, dtype=float).copy()
    wall, iters, thetas, proxies = [0.0], [0], [theta.copy()], [np.nan]
    solver_time = 0.0
    k = 0
    proxy = np.nan
    while True:
        if max_iter > 0 and k >= max_iter:
            terminated = "max_iter"
            break
        if budget > 0 and solver_time >= budget:
            terminated = "budget"
            break
        t_start = time.perf_counter()
        try:
            theta_new, proxy, grad_norm = step(k, theta)
        except DivergenceError:
            terminated = "divergence"
            break
        except SolverError:
            if k == 0:
                raise  # configuration problem, nothing useful to return
            terminated = "divergence"
            break
        solver_time += time.perf_counter() - t_start
        k += 1
        if not np.all(np.isfinite(theta_new)):
            terminated = "divergence"
            break
        theta = theta_new
        if k % record_every == 0:
            wall.append(solver_time)
            iters.append(k)
            thetas.append(theta.copy())
            proxies.append(proxy)
        if gtol > 0 and grad_norm is not None and grad_norm <= gtol:
            terminated = "converged"
            break
    if iters[-1] != k:
        wall.append(solver_time)
        iters.append(k)
        thetas.append(theta.copy())
        proxies.append(proxy)
    return RunTrace(
        wall_clock=np.asarray(wall),
        iteration=np.asarray(iters, dtype=int),
        thetas=np.asarray(thetas),
        objective_proxy=np.asarray(proxies),
        budget=budget,
        terminated_by=terminated,
        n_iterations=k,
    )


def run_gd(
    problem: Problem,
    theta0: Array,
    schedule: StepSchedule,
    budget: float = 0.0,
    max_iter: int = 0,
    gtol: float = 0.0,
    record_every: int = 1,
) -> RunTrace:
    """Steepest descent on the full (or modified) data objective."""
    free = problem.free

    def step(k, theta):
        ev = problem.gradient(theta)
        g = ev.grad[free]
        theta_new = theta.copy()
        theta_new[free] -= schedule.eta(k) * g
        return theta_new, ev.value, float(np.max(np.abs(g)))

    return _run_loop(theta0, step, budget, max_iter, record_every, gtol)


def run_sgd(
    problem: Problem,
    theta0: Array,
    schedule: StepSchedule,
    sampler: Sampler,
    budget: float = 0.0,
    max_iter: int = 0,
    seed: int = 0,
    record_every: int = 1,
) -> RunTrace:
    """Stochastic gradient descent on independently drawn subsets.

    Each iteration draws a fresh sample, integrates on the grid the sample
    admits (one coarse step per retained observation for systematic or
    stratified draws), and takes an inverse-probability-weighted step.
    """
    free = problem.free
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    def step(k, theta):
        sample = sampler.draw(problem.n_obs, rng)
        grid = problem.sample_grid(sample, coarse=sampler.coarse_grid)
        ev = problem.stochastic_gradient(theta, sample, grid)
        theta_new = theta.copy()
        theta_new[free] -= schedule.eta(k) * ev.grad[free]
        return theta_new, ev.value, None

    return _run_loop(theta0, step, budget, max_iter, record_every)


def run_gauss_newton(
    problem: Problem,
    theta0: Array,
    damping: float | None = None,
    budget: float = 0.0,
    max_iter: int = 0,
    gtol: float = 0.0,
    record_every: int = 1,
    damping_rel: float = 1e-8,
) -> RunTrace:
    """Damped Gauss-Newton on the full residual system.

    With ``damping`` None, each step uses damping_rel * trace(D'W^-1 D) / q,
    which keeps heavily thinned (rank-deficient) problems solvable; pass
    damping 0.0 for the undamped step.  Larger ``damping_rel`` tempers the
    step on badly inconsistent (heavily modified) data.
    """
    free = problem.free

    def step(k, theta):
        rs = problem.residual_system(theta)
        d = rs.d_matrix[:, free]
        wr = rs.w_inv_apply(rs.r)
        rhs = d.T @ wr
        normal = _sym(d.T @ rs.w_inv_apply(d))
        lam = damping if damping is not None else damping_rel * np.trace(normal) / len(free)
        cf = _spd_factor(normal + lam * np.eye(len(free)), "Gauss-Newton normal equations")
        delta = cho_solve(cf, rhs)
        theta_new = theta.copy()
        theta_new[free] += delta
        proxy = float(0.5 * rs.r @ wr)
        return theta_new, proxy, float(np.max(np.abs(rhs)))

    return _run_loop(theta0, step, budget, max_iter, record_every, gtol)


# ---------------------------------------------------------------------------
# Kalman-based SGD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KsgdState:
    """Iterate plus the precision (c_inv) and/or covariance (c) matrix.

    Whichever matrices are present are updated by their own recursion, so a
    state carrying both keeps them mutual inverses up to roundoff.
    """

    theta: Array
    c_inv: Array | None
    c: Array | None
    k: int = 0

    @classmethod
    def initial(cls, theta0: Array, n_free: int) -> "KsgdState":
        return cls(
            theta=np.asarray(theta0, dtype=float).copy(),
            c_inv=np.eye(n_free),
            c=np.eye(n_free),
            k=0,
        )


def ksgd_step(
    state: KsgdState,
    rs: ResidualSystem,
    form: str = "information",
    free: Array | None = None,
) -> KsgdState:
    """One Kalman-based update from a residual system built at state.theta.

    information form:  theta += (D'W^-1 D + C^-1)^-1 D'W^-1 r
    covariance form:   theta += C D' (W + D C D')^-1 r
    and in both cases the new precision is C^-1 + D'W^-1 D (the covariance
    recursion is its Woodbury image).  Matrices are symmetrized after each
    update to suppress roundoff drift.
    """
    if form not in ("information", "covariance"):
        raise ValueError(f"unknown kSGD form {form!r}")
    free = np.arange(len(state.theta)) if free is None else np.asarray(free, dtype=int)
    d = rs.d_matrix[:, free]
    c_inv_new = c_new = None

    if form == "information":
        if state.c_inv is None:
            raise SolverError("information form requires the precision matrix")
        c_inv_new = _sym(state.c_inv + d.T @ rs.w_inv_apply(d))
        cf = _spd_factor(c_inv_new, "kSGD precision solve")
        delta = cho_solve(cf, d.T @ rs.w_inv_apply(rs.r))
        if state.c is not None:
            c_new = _sym(cho_solve(cf, np.eye(len(free))))
    else:
        if state.c is None:
            raise SolverError("covariance form requires the covariance matrix")
        cd = state.c @ d.T
        cf = _spd_factor(_sym(rs.w + d @ cd), "kSGD innovation solve")
        delta = cd @ cho_solve(cf, rs.r)
        c_new = _sym(state.c - cd @ cho_solve(cf, cd.T))
        if state.c_inv is not None:
            c_inv_new = _sym(state.c_inv + d.T @ rs.w_inv_apply(d))

    theta_new = state.theta.copy()
    theta_new[free] += delta
    return KsgdState(theta=theta_new, c_inv=c_inv_new, c=c_new, k=state.k + 1)


def run_ksgd(
    problem: Problem,
    theta0: Array,
    sampler: Sampler,
    form: str = "auto",
    budget: float = 0.0,
    max_iter: int = 0,
    seed: int = 0,
    record_every: int = 1,
) -> RunTrace:
    """Kalman-based SGD: fresh sample, residual system, update, repeat.

    ``form`` "auto" picks the information form whenever the number of
    estimated components is at most the stacked residual dimension (the
    smaller implicit linear system), else the covariance form.
    """
    if form not in ("auto", "information", "covariance"):
        raise ValueError(f"unknown kSGD form {form!r}")
    free = problem.free
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    box = {"state": KsgdState.initial(theta0, len(free))}

    def step(k, theta):
        state = box["state"]
        sample = sampler.draw(problem.n_obs, rng)
        grid = problem.sample_grid(sample, coarse=sampler.coarse_grid)
        rs = problem.residual_system(state.theta, sample, grid)
        use = form
        if use == "auto":
            use = "information" if len(free) <= rs.n_rows else "covariance"
        new_state = ksgd_step(state, rs, form=use, free=free)
        box["state"] = new_state
        proxy = float(0.5 * rs.r @ rs.w_inv_apply(rs.r))
        return new_state.theta, proxy, None

    return _run_loop(theta0, step, budget, max_iter, record_every)
