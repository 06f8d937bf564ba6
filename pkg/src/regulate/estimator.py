"""Parameter identification from recorded closed-loop data.

The estimator looks for a parameter vector inside the admissible box whose
predicted trajectory matches the observed one to a requested tolerance, and
the identifiability margin quantifies how strongly the first data segment
separates nearby parameter hypotheses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .gauss_newton import box_gauss_newton
from .plant import (
    InputSequence,
    PlantModel,
    StateSequence,
    _vector,
    jacobian_theta,
    param_grid,
    smallest_singular_value,
    stacked_map,
)


@dataclass(frozen=True)
class ObservationHistory:
    """Known initial state, the inputs applied from t=0, and the states observed
    at t=1, ..., T in response. Histories grow append-only across control blocks."""

    x0: np.ndarray
    applied_inputs: InputSequence
    observed_states: StateSequence

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        if len(self.applied_inputs) and self.applied_inputs.start_time != 0:
            raise ValueError("applied inputs must start at time 0")
        if len(self.observed_states) and self.observed_states.start_time != 1:
            raise ValueError("observed states must start at time 1")
        if len(self.applied_inputs) != len(self.observed_states):
            raise ValueError(
                f"history needs one observed state per applied input, got "
                f"{len(self.applied_inputs)} inputs and {len(self.observed_states)} states"
            )

    @property
    def horizon(self) -> int:
        return len(self.applied_inputs)

    @property
    def observed_flat(self) -> np.ndarray:
        return self.observed_states.flat

    @classmethod
    def initial(cls, x0, input_dim: int, state_dim: int) -> "ObservationHistory":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls(
            x0,
            InputSequence.empty(input_dim, start_time=0),
            StateSequence(1, np.zeros((0, state_dim))),
        )

    def extended(self, block: InputSequence, new_states: StateSequence) -> "ObservationHistory":
        if block.start_time != self.horizon:
            raise ValueError(f"block must start at time {self.horizon}")
        if len(block) != len(new_states):
            raise ValueError("one observed state per new input required")
        inputs = self.applied_inputs.followed_by(block)
        if len(self.observed_states) == 0:
            states = StateSequence(1, new_states.states)
        else:
            states = StateSequence(1, np.vstack([self.observed_states.states, new_states.states]))
        return ObservationHistory(self.x0, inputs, states)


@dataclass(frozen=True)
class EstimateResult:
    theta: np.ndarray
    residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class IdentifiabilityReport:
    """Sampled injectivity margin of the first data segment.

    ``margin`` is the smallest singular value of the segment's parameter
    Jacobian over a grid on the parameter box; ``radius`` is the locality
    radius on which the margin was validated (half the smallest grid spacing,
    a heuristic)."""

    margin: float
    radius: float
    samples_used: int


class NotConverged(RuntimeError):
    """No start reached the requested residual tolerance; carries the best attempt."""

    def __init__(self, message: str, best: EstimateResult):
        super().__init__(message)
        self.best = best


def residual_vector(model: PlantModel, history: ObservationHistory, theta) -> np.ndarray:
    """Predicted-minus-observed stacked states under theta."""
    return stacked_map(model, history.x0, history.applied_inputs, theta) - history.observed_flat


def residual_norm(model: PlantModel, history: ObservationHistory, theta) -> float:
    return float(np.linalg.norm(residual_vector(model, history, theta)))


def _lex_key(x: np.ndarray) -> tuple:
    return tuple(float(v) for v in x)


def estimate(
    model: PlantModel,
    history: ObservationHistory,
    theta_init,
    tol: float,
    max_iters: int = 60,
    multistart_grid: int = 3,
    fd_step: float = 1e-6,
) -> EstimateResult:
    """Fit a parameter vector in the box to the observed trajectory.

    Runs projected damped Gauss-Newton from theta_init; if that run stalls
    above tol, restarts from a uniform grid over the box (multistart_grid
    points per axis) and keeps the best residual, breaking ties toward the
    lexicographically smallest parameter vector. Raises NotConverged when no
    start reaches tol; the returned parameters always lie inside the box.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    theta_init = _vector(theta_init, model.param_dim, "theta_init")
    if not model.contains_params(theta_init, atol=1e-12):
        raise ValueError("theta_init must lie inside the parameter box")

    def res(th):
        return residual_vector(model, history, th)

    def jac(th):
        return jacobian_theta(model, history.x0, history.applied_inputs, th, fd_step)

    lower, upper = model.param_lower, model.param_upper
    best = box_gauss_newton(res, jac, theta_init, lower, upper, tol, max_iters)
    total_iters = best.iterations
    if best.residual_norm > tol:
        for start in param_grid(model, multistart_grid):
            run = box_gauss_newton(res, jac, start, lower, upper, tol, max_iters)
            total_iters += run.iterations
            if run.residual_norm < best.residual_norm or (
                run.residual_norm == best.residual_norm and _lex_key(run.x) < _lex_key(best.x)
            ):
                best = run
    if best.residual_norm <= tol:
        return EstimateResult(best.x, best.residual_norm, total_iters, True)
    raise NotConverged(
        f"best residual {best.residual_norm:.3e} above tolerance {tol:.3e} "
        f"after {total_iters} iterations over all starts",
        EstimateResult(best.x, best.residual_norm, total_iters, False),
    )


def identifiability_margin(
    model: PlantModel,
    x0,
    u_exc: InputSequence,
    grid: int = 5,
    fd_step: float = 1e-6,
) -> IdentifiabilityReport:
    """Smallest singular value of the first-segment parameter Jacobian over a
    grid on the parameter box. Positive iff every sampled Jacobian has full
    column rank."""
    if grid < 2:
        raise ValueError("grid must be at least 2 points per axis")
    margin = np.inf
    count = 0
    for theta in param_grid(model, grid):
        jac = jacobian_theta(model, x0, u_exc, theta, fd_step)
        margin = min(margin, smallest_singular_value(jac, model.param_dim))
        count += 1
    spacings = (model.param_upper - model.param_lower) / (grid - 1)
    return IdentifiabilityReport(float(margin), float(0.5 * np.min(spacings)), count)
