"""Parametric discrete-time plants.

Simulation of x(t+1) = f(x(t), u(t), theta), the stacked prediction map over a
recorded input history, terminal-state maps for candidate control blocks, and
finite-difference sensitivity / numeric-rank diagnostics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Transition = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class DimensionMismatch(ValueError):
    """An argument does not match the plant's declared dimensions."""


def _vector(value, dim: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (dim,):
        raise DimensionMismatch(f"{what} must have shape ({dim},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class PlantModel:
    """A plant f(x, u, theta) with an admissible parameter box and a target state.

    ``param_box`` has one [lo, hi] row per parameter coordinate; the box is the
    set of admissible parameter hypotheses. ``transition`` must be a pure,
    deterministic function of its arguments.
    """

    state_dim: int
    input_dim: int
    param_dim: int
    transition: Transition
    param_box: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        for name in ("state_dim", "input_dim", "param_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        box = np.asarray(self.param_box, dtype=float).reshape(self.param_dim, 2)
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError("param_box rows must satisfy lo <= hi")
        object.__setattr__(self, "param_box", box)
        object.__setattr__(self, "target", _vector(self.target, self.state_dim, "target"))

    @property
    def param_lower(self) -> np.ndarray:
        return self.param_box[:, 0]

    @property
    def param_upper(self) -> np.ndarray:
        return self.param_box[:, 1]

    def clip_params(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.param_lower, self.param_upper)

    def contains_params(self, theta, atol: float = 0.0) -> bool:
        theta = _vector(theta, self.param_dim, "theta")
        return bool(
            np.all(theta >= self.param_lower - atol) and np.all(theta <= self.param_upper + atol)
        )


@dataclass(frozen=True)
class InputSequence:
    """Inputs u(t0), ..., u(t0+len-1) stored as one row per time step."""

    start_time: int
    inputs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.inputs, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatch(f"inputs must be 2-D (length, input_dim), got shape {arr.shape}")
        object.__setattr__(self, "inputs", arr)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.inputs.ravel()

    @classmethod
    def empty(cls, input_dim: int, start_time: int = 0) -> "InputSequence":
        return cls(start_time, np.zeros((0, input_dim)))

    def followed_by(self, other: "InputSequence") -> "InputSequence":
        if other.start_time != self.start_time + len(self):
            raise ValueError(
                f"cannot concatenate: expected start {self.start_time + len(self)}, "
                f"got {other.start_time}"
            )
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return InputSequence(self.start_time, np.vstack([self.inputs, other.inputs]))


@dataclass(frozen=True)
class StateSequence:
    """States x(t0), ..., x(t0+len-1) stored as one row per time step."""

    start_time: int
    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatch(f"states must be 2-D (length, state_dim), got shape {arr.shape}")
        object.__setattr__(self, "states", arr)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.states.ravel()


def as_inputs(values, input_dim: int, start_time: int = 0) -> InputSequence:
    """Coerce an array-like into an InputSequence.

    1-D input is read as a sequence of scalar inputs when input_dim == 1, and
    as a single input vector otherwise.
    """
    if isinstance(values, InputSequence):
        if values.input_dim != input_dim:
            raise DimensionMismatch(
                f"input sequence has dimension {values.input_dim}, expected {input_dim}"
            )
        return values
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if input_dim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.shape == (input_dim,):
            arr = arr.reshape(1, input_dim)
        else:
            raise DimensionMismatch(f"cannot read shape {arr.shape} as inputs of dimension {input_dim}")
    if arr.ndim != 2 or arr.shape[1] != input_dim:
        raise DimensionMismatch(f"cannot read shape {arr.shape} as inputs of dimension {input_dim}")
    return InputSequence(start_time, arr)


def step(model: PlantModel, x, u, theta) -> np.ndarray:
    """One transition x(t+1) = f(x(t), u(t), theta)."""
    x = _vector(x, model.state_dim, "state")
    u = _vector(u, model.input_dim, "input")
    theta = _vector(theta, model.param_dim, "theta")
    nxt = np.asarray(model.transition(x, u, theta), dtype=float)
    return _vector(nxt, model.state_dim, "transition output")


def simulate(model: PlantModel, x0, u_seq: InputSequence, theta) -> StateSequence:
    """Iterate the plant from x0 under u_seq; returns len(u_seq)+1 states."""
    x0 = _vector(x0, model.state_dim, "initial state")
    out = np.empty((len(u_seq) + 1, model.state_dim))
    out[0] = x0
    x = x0
    for i in range(len(u_seq)):
        x = step(model, x, u_seq.inputs[i], theta)
        out[i + 1] = x
    return StateSequence(u_seq.start_time, out)


def stacked_map(model: PlantModel, x0, u_hist: InputSequence, theta) -> np.ndarray:
    """Flattened predicted states x(1), ..., x(T) under theta and the recorded inputs."""
    if len(u_hist) and u_hist.start_time != 0:
        raise ValueError("input history must start at time 0")
    return simulate(model, x0, u_hist, theta).states[1:].ravel()


def terminal_map(model: PlantModel, x0, u_hist: InputSequence, block: InputSequence, theta) -> np.ndarray:
    """Terminal state after replaying the full history plus a candidate block.

    The whole trajectory is re-simulated from x(0), so the result depends on
    theta through every step, not only through the block.
    """
    if len(u_hist) and u_hist.start_time != 0:
        raise ValueError("input history must start at time 0")
    if len(block) and block.start_time != len(u_hist):
        raise ValueError(f"block must start at time {len(u_hist)}, got {block.start_time}")
    seq = simulate(model, x0, u_hist, theta)
    if len(block) == 0:
        return seq.states[-1]
    return simulate(model, seq.states[-1], block, theta).states[-1]


def fd_jacobian(func, x, step_size: float = 1e-6, lower=None, upper=None) -> np.ndarray:
    """Central-difference Jacobian of func at x, per-coordinate step scaled by
    max(1, |x_i|). When a bound clips one side of the stencil the difference
    degrades gracefully to a one-sided quotient."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float).ravel()
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        h = step_size * max(1.0, abs(x[i]))
        hi_pt = x[i] + h
        lo_pt = x[i] - h
        if upper is not None:
            hi_pt = min(hi_pt, upper[i])
        if lower is not None:
            lo_pt = max(lo_pt, lower[i])
        denom = hi_pt - lo_pt
        if denom == 0.0:
            continue
        xp = x.copy()
        xp[i] = hi_pt
        xm = x.copy()
        xm[i] = lo_pt
        fp = np.asarray(func(xp), dtype=float).ravel()
        fm = np.asarray(func(xm), dtype=float).ravel()
        jac[:, i] = (fp - fm) / denom
    return jac


def jacobian_theta(model: PlantModel, x0, u_hist: InputSequence, theta, fd_step: float = 1e-6) -> np.ndarray:
    """Finite-difference sensitivity of the stacked map to the parameter,
    shape (state_dim * len(u_hist), param_dim). Stencil points are kept inside
    the parameter box."""
    theta = _vector(theta, model.param_dim, "theta")
    if not model.contains_params(theta, atol=1e-12):
        raise ValueError("theta must lie inside the parameter box")
    return fd_jacobian(
        lambda th: stacked_map(model, x0, u_hist, th),
        theta,
        fd_step,
        model.param_lower,
        model.param_upper,
    )


def jacobian_input(model: PlantModel, x, block: InputSequence, theta, fd_step: float = 1e-6) -> np.ndarray:
    """Finite-difference sensitivity of the block's terminal state to the
    flattened block inputs, shape (state_dim, input_dim * len(block))."""
    if len(block) == 0:
        raise ValueError("block must be nonempty")
    x = _vector(x, model.state_dim, "state")
    horizon = len(block)

    def terminal(u_flat):
        seq = InputSequence(block.start_time, u_flat.reshape(horizon, model.input_dim))
        return simulate(model, x, seq, theta).states[-1]

    return fd_jacobian(terminal, block.flat, fd_step)


def numeric_rank(matrix, rel_tol: float = 1e-8) -> int:
    """Count singular values above rel_tol times the largest one (0 for the zero matrix)."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def smallest_singular_value(matrix, n_cols: int) -> float:
    """The n_cols-th singular value; 0 when the matrix has fewer rows than columns."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0.0
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv.size < n_cols:
        return 0.0
    return float(sv[n_cols - 1])


@dataclass(frozen=True)
class ExcitationReport:
    """Outcome of the identifiability rank check over a set of (state, theta) samples."""

    passed: bool
    worst_sample: tuple
    min_singular_value: float


def excitation_rank_check(
    model: PlantModel,
    u_exc: InputSequence,
    samples: Sequence[tuple],
    rel_tol: float = 1e-8,
    fd_step: float = 1e-6,
) -> ExcitationReport:
    """Check that the excitation makes the stacked map fully parameter-sensitive.

    Passes iff the stacked-map parameter Jacobian has full column rank at every
    (initial state, theta) sample; reports the smallest singular value seen.
    """
    if not samples:
        raise ValueError("samples must be nonempty")
    passed = True
    worst = samples[0]
    worst_sigma = np.inf
    for x0, theta in samples:
        jac = jacobian_theta(model, x0, u_exc, theta, fd_step)
        if numeric_rank(jac, rel_tol) != model.param_dim:
            passed = False
        sigma = smallest_singular_value(jac, model.param_dim)
        if sigma < worst_sigma:
            worst_sigma = sigma
            worst = (x0, theta)
    return ExcitationReport(passed, worst, float(worst_sigma))


def controllability_rank_check(
    model: PlantModel,
    x,
    theta,
    block: InputSequence,
    rel_tol: float = 1e-8,
    fd_step: float = 1e-6,
) -> bool:
    """True iff the terminal state is fully input-sensitive along the block."""
    jac = jacobian_input(model, x, block, theta, fd_step)
    return numeric_rank(jac, rel_tol) == model.state_dim


def param_grid(model: PlantModel, per_axis: int):
    """Uniform grid over the parameter box, per_axis points per coordinate."""
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in model.param_box]
    for combo in itertools.product(*axes):
        yield np.array(combo)
