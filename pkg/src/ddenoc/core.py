"""Core data model: delay systems, control problems, trajectories, histories.

A delay system is described by a right-hand side ``xdot = f(x, z, u, d, p)``
where ``z`` stacks delayed quantities ``r_i = h_i(x(t - tau_i(u)), p)`` for
``m`` delay channels.  All evaluators broadcast over leading axes, so a batch
of ``P`` points is a single call with arrays shaped ``(P, n_x)`` etc.  This
is what makes the transcription and the simulators fast without compiled
extensions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "ModelDomainError",
    "ModelEvaluationError",
    "HistoryUnderflowError",
    "StepFailureError",
    "DelayChannel",
    "DdeModel",
    "HistoryFunction",
    "ZohSchedule",
    "StageCost",
    "OcpSpec",
    "Trajectory",
    "eval_memory_state",
    "validate_jacobians",
    "JacobianReport",
    "tau_max",
]


class ModelDomainError(ValueError):
    """An evaluator was called outside the model's admissible domain."""


class ModelEvaluationError(ValueError):
    """A model evaluator produced non-finite output."""


class HistoryUnderflowError(ValueError):
    """A delayed time fell outside the span of the history function."""

    def __init__(self, delay_index: int, t_requested: float, span: tuple):
        self.delay_index = delay_index
        self.t_requested = t_requested
        self.span = span
        super().__init__(
            f"delay channel {delay_index}: delayed time {t_requested:.6g} outside "
            f"history span [{span[0]:.6g}, {span[1]:.6g}]"
        )


class StepFailureError(RuntimeError):
    """An implicit step's Newton iteration failed to converge."""

    def __init__(self, t: float, message: str):
        self.t = t
        super().__init__(f"step failure at t = {t:.6g} s: {message}")


@dataclass(frozen=True)
class DelayChannel:
    """One input-dependent delay: ``tau(u) > 0`` and its Jacobian wrt u.

    Both callables broadcast: ``tau`` maps ``(..., n_u) -> (...)`` and
    ``dtau_du`` maps ``(..., n_u) -> (..., n_u)``.
    """

    tau: Callable
    dtau_du: Callable


@dataclass
class DdeModel:
    """Right-hand side, delay channels, delayed-quantity maps, and Jacobians.

    Evaluator signatures (all broadcasting over leading axes):

    * ``rhs(x, z, u, d, p) -> (..., n_x)``
    * ``dfdx/dfdz/dfdu(x, z, u, d, p) -> (..., n_x, n_x | n_z | n_u)``
    * ``delayed_maps[i](x, p) -> (..., dim_i)`` with ``dhdx[i] -> (..., dim_i, n_x)``

    ``outputs`` maps a name to ``fn(x, u, p) -> (...)`` for derived
    per-grid-point quantities attached to trajectories.
    """

    n_x: int
    n_u: int
    n_d: int
    delays: Sequence[DelayChannel]
    delayed_maps: Sequence[Callable]
    delayed_dims: Sequence[int]
    rhs: Callable
    dfdx: Callable
    dfdz: Callable
    dfdu: Callable
    dhdx: Sequence[Callable]
    params: Any = None
    state_names: Sequence[str] | None = None
    input_names: Sequence[str] | None = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.delays)
        if not (len(self.delayed_maps) == len(self.delayed_dims) == len(self.dhdx) == m):
            raise ValueError(
                f"inconsistent delay channel counts: {m} delays, "
                f"{len(self.delayed_maps)} maps, {len(self.delayed_dims)} dims, "
                f"{len(self.dhdx)} map Jacobians"
            )
        if self.state_names is not None and len(self.state_names) != self.n_x:
            raise ValueError("state_names length must equal n_x")
        if self.input_names is not None and len(self.input_names) != self.n_u:
            raise ValueError("input_names length must equal n_u")

    @property
    def m(self) -> int:
        return len(self.delays)

    @property
    def n_z(self) -> int:
        return int(sum(self.delayed_dims))

    def z_slices(self) -> list:
        """Slice of z occupied by each delayed quantity r_i."""
        out, start = [], 0
        for d in self.delayed_dims:
            out.append(slice(start, start + d))
            start += d
        return out

    def taus(self, u) -> np.ndarray:
        """All delays at input u, stacked along the last axis."""
        u = np.asarray(u, dtype=float)
        return np.stack([np.asarray(ch.tau(u), dtype=float) for ch in self.delays], axis=-1)


class HistoryFunction:
    """Initial state function x0(t), constant or piecewise-linear in time.

    The constant variant is evaluable everywhere; the sampled variant is
    evaluable on [times[0], times[-1]] and linearly interpolated.
    """

    def __init__(self, constant=None, times=None, states=None):
        if constant is not None:
            self._const = np.atleast_1d(np.asarray(constant, dtype=float))
            self._times = None
            self._states = None
        else:
            times = np.asarray(times, dtype=float)
            states = np.asarray(states, dtype=float)
            if times.ndim != 1 or len(times) < 2:
                raise ValueError("sampled history needs at least two time points")
            if np.any(np.diff(times) <= 0):
                raise ValueError("history times must be strictly increasing")
            if states.shape[0] != times.shape[0]:
                raise ValueError("history states and times must share length")
            self._const = None
            self._times = times
            self._states = np.atleast_2d(states)

    @classmethod
    def constant(cls, x) -> "HistoryFunction":
        return cls(constant=x)

    @classmethod
    def from_samples(cls, times, states) -> "HistoryFunction":
        return cls(times=times, states=states)

    @classmethod
    def from_trajectory(cls, traj: "Trajectory") -> "HistoryFunction":
        return cls(times=traj.times, states=traj.states)

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def span(self) -> tuple:
        if self._const is not None:
            return (-np.inf, np.inf)
        return (float(self._times[0]), float(self._times[-1]))

    def __call__(self, t: float) -> np.ndarray:
        if self._const is not None:
            return self._const.copy()
        lo, hi = self.span
        # Allow round-off slop at the ends.
        eps = 1e-9 * max(1.0, abs(lo), abs(hi))
        if t < lo - eps or t > hi + eps:
            raise ValueError(f"history evaluated at t = {t:.6g} outside span [{lo:.6g}, {hi:.6g}]")
        t = min(max(t, lo), hi)
        j = np.searchsorted(self._times, t, side="right") - 1
        j = min(max(j, 0), len(self._times) - 2)
        t0, t1 = self._times[j], self._times[j + 1]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self._states[j] + w * self._states[j + 1]


@dataclass(frozen=True)
class ZohSchedule:
    """Zero-order-hold signal on N uniform intervals of size dt from t0.

    ``value(t)`` returns the interval value active at time t; the value of
    interval k is held on [t0 + k dt, t0 + (k+1) dt).  Queries at or beyond
    the final boundary return the last value (the signal stays held).
    """

    t0: float
    dt: float
    values: np.ndarray  # (N, dim)

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_2d(np.asarray(self.values, dtype=float)))
        if self.dt <= 0:
            raise ValueError("ZOH interval size must be positive")

    @classmethod
    def constant(cls, value, t0: float, tf: float) -> "ZohSchedule":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(t0=t0, dt=tf - t0, values=value[None, :])

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0]

    @property
    def tf(self) -> float:
        return self.t0 + self.n_intervals * self.dt

    def index(self, t: float) -> int:
        k = int(np.floor((t - self.t0) / self.dt + 1e-9))
        return min(max(k, 0), self.n_intervals - 1)

    def value(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]


@dataclass(frozen=True)
class StageCost:
    """Lagrange-term integrand Phi(x, u, d, p) with analytic gradients.

    ``value -> (...)``, ``grad_x -> (..., n_x)``, ``grad_u -> (..., n_u)``;
    all broadcasting.
    """

    value: Callable
    grad_x: Callable
    grad_u: Callable


@dataclass
class OcpSpec:
    """Finite-horizon control problem: grid, objective weights, bounds, history.

    ``W`` is either one (n_u, n_u) matrix used for every interval or a
    (N, n_u, n_u) stack; ``disturbances`` is a (N, n_d) ZOH table (possibly
    zero columns).  State bounds default to unbounded.
    """

    t0: float
    tf: float
    N: int
    history: HistoryFunction
    u_ref: np.ndarray
    W: np.ndarray
    stage_cost: StageCost | None = None
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    x_min: np.ndarray | None = None
    x_max: np.ndarray | None = None
    disturbances: np.ndarray | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one control interval")
        if self.tf <= self.t0:
            raise ValueError("tf must exceed t0")
        self.u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        n_u = self.u_ref.shape[0]
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 2:
            W = np.broadcast_to(W, (self.N, n_u, n_u)).copy()
        if W.shape != (self.N, n_u, n_u):
            raise ValueError(f"W must be ({n_u},{n_u}) or ({self.N},{n_u},{n_u})")
        self.W = W
        for k in range(self.N):
            Wk = self.W[k]
            if not np.allclose(Wk, Wk.T, rtol=0, atol=1e-12):
                raise ValueError(f"W_{k} is not symmetric")
            if np.min(np.linalg.eigvalsh(Wk)) <= 0:
                raise ValueError(f"W_{k} is not positive definite")
        self.u_min = self._bound(self.u_min, n_u, -np.inf)
        self.u_max = self._bound(self.u_max, n_u, np.inf)
        if np.any(self.u_ref < self.u_min) or np.any(self.u_ref > self.u_max):
            raise ValueError("u_ref violates the input bounds")
        if self.disturbances is not None:
            self.disturbances = np.atleast_2d(np.asarray(self.disturbances, dtype=float))
            if self.disturbances.shape[0] != self.N:
                raise ValueError("disturbances must have one row per control interval")

    @staticmethod
    def _bound(v, n, fill):
        if v is None:
            return np.full(n, fill)
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape != (n,):
            raise ValueError(f"bound vector must have shape ({n},)")
        return v

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.N

    def state_bounds(self, n_x: int) -> tuple:
        lo = self._bound(self.x_min, n_x, -np.inf)
        hi = self._bound(self.x_max, n_x, np.inf)
        if np.any(lo >= hi):
            raise ValueError("x_min must be elementwise below x_max")
        return lo, hi

    def disturbance_table(self, n_min: int = 0) -> np.ndarray:
        if self.disturbances is None:
            return np.zeros((self.N, n_min))
        return self.disturbances


@dataclass
class Trajectory:
    """Time grid with states, ZOH inputs, and named derived output series.

    CSV layout is ``t,<states>,<inputs>,<outputs>`` with a mandatory header
    and full double precision.  Files loaded back with :meth:`from_csv` keep
    every non-time column retrievable by name through :meth:`column`.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    state_names: Sequence[str] | None = None
    input_names: Sequence[str] | None = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        n = len(self.times)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.states.shape[0] != n or self.inputs.shape[0] != n:
            raise ValueError("states/inputs must share the time-grid length")
        for name, series in self.outputs.items():
            if len(series) != n:
                raise ValueError(f"output '{name}' length mismatch")
        if self.state_names is None:
            self.state_names = [f"x{i}" for i in range(self.states.shape[1])]
        if self.input_names is None:
            self.input_names = [f"u{i}" for i in range(self.inputs.shape[1])]

    @property
    def n_points(self) -> int:
        return len(self.times)

    def column_names(self) -> list:
        return list(self.state_names) + list(self.input_names) + list(self.outputs)

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name in self.state_names:
            return self.states[:, list(self.state_names).index(name)]
        if name in self.input_names:
            return self.inputs[:, list(self.input_names).index(name)]
        if name in self.outputs:
            return np.asarray(self.outputs[name], dtype=float)
        raise KeyError(f"unknown column '{name}'; available: {', '.join(self.column_names())}")

    def to_csv(self, path) -> None:
        names = ["t"] + self.column_names()
        cols = [self.column(n) for n in names]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(names) + "\n")
            for row in zip(*cols):
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, "r") as fh:
            header = fh.readline().strip()
            if not header or header.split(",")[0] != "t":
                raise ValueError(f"{path}: expected a header row starting with 't'")
            names = header.split(",")[1:]
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        times = data[:, 0]
        outputs = {name: data[:, j + 1] for j, name in enumerate(names)}
        n = len(times)
        return cls(
            times=times,
            states=np.zeros((n, 0)),
            inputs=np.zeros((n, 0)),
            state_names=[],
            input_names=[],
            outputs=outputs,
        )


def eval_memory_state(model: DdeModel, history: HistoryFunction, t: float, u, p=None) -> np.ndarray:
    """Memory state z(t): delayed quantities looked up in the history.

    Raises :class:`HistoryUnderflowError` naming the delay channel whose
    delayed time precedes the history span.
    """
    p = model.params if p is None else p
    u = np.asarray(u, dtype=float)
    parts = []
    lo, hi = history.span
    eps = 1e-9 * max(1.0, abs(t))
    for i, ch in enumerate(model.delays):
        tau_i = float(ch.tau(u))
        td = t - tau_i
        if td < lo - eps or td > hi + eps:
            raise HistoryUnderflowError(i, td, (lo, hi))
        parts.append(np.atleast_1d(model.delayed_maps[i](history(td), p)))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def _central_diff(fun, w, scale=1e-6):
    """Central finite-difference Jacobian of fun wrt the 1-d vector w."""
    w = np.asarray(w, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(w), dtype=float))
    J = np.zeros(f0.shape + w.shape)
    for j in range(w.size):
        h = scale * max(1.0, abs(w[j]))
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        J[..., j] = (np.atleast_1d(fun(wp)) - np.atleast_1d(fun(wm))) / (2.0 * h)
    return J


@dataclass
class JacobianReport:
    """Max relative finite-difference error per Jacobian block."""

    block_errors: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.block_errors.values())

    @property
    def failed_blocks(self) -> list:
        return sorted(name for name, e in self.block_errors.items() if e > self.tol)

    def __str__(self):
        lines = [f"Jacobian check (tol {self.tol:g}): {'PASS' if self.passed else 'FAIL'}"]
        for name in sorted(self.block_errors):
            err = self.block_errors[name]
            mark = "ok " if err <= self.tol else "BAD"
            lines.append(f"  {mark} {name:12s} max rel err {err:.3e}")
        return "\n".join(lines)


def validate_jacobians(model: DdeModel, sample_points, tol: float = 1e-6) -> JacobianReport:
    """Check every analytic Jacobian block against central finite differences.

    ``sample_points`` is a list of ``(x, z, u, d)`` tuples inside the model's
    domain.  The error of a block is ``max|J_ana - J_fd| / max(1, |J|_max)``
    over all sample points.  Non-finite model output raises
    :class:`ModelEvaluationError` echoing the offending point.
    """
    p = model.params
    errors: dict = {}

    def record(name, ana, fd):
        ana = np.asarray(ana, dtype=float)
        denom = max(1.0, np.max(np.abs(ana)) if ana.size else 0.0,
                    np.max(np.abs(fd)) if fd.size else 0.0)
        err = (np.max(np.abs(ana - fd)) / denom) if ana.size else 0.0
        errors[name] = max(errors.get(name, 0.0), float(err))

    for point in sample_points:
        x, z, u, d = (np.atleast_1d(np.asarray(v, dtype=float)) for v in point)
        f0 = np.asarray(model.rhs(x, z, u, d, p), dtype=float)
        if not np.all(np.isfinite(f0)):
            raise ModelEvaluationError(
                f"non-finite rhs at sample point x={x!r}, z={z!r}, u={u!r}, d={d!r}"
            )
        record("df/dx", model.dfdx(x, z, u, d, p),
               _central_diff(lambda w: model.rhs(w, z, u, d, p), x))
        if model.n_z:
            record("df/dz", model.dfdz(x, z, u, d, p),
                   _central_diff(lambda w: model.rhs(x, w, u, d, p), z))
        if model.n_u:
            record("df/du", model.dfdu(x, z, u, d, p),
                   _central_diff(lambda w: model.rhs(x, z, w, d, p), u))
        for i in range(model.m):
            record(f"dh_{i}/dx", model.dhdx[i](x, p),
                   _central_diff(lambda w: model.delayed_maps[i](w, p), x))
            if model.n_u:
                record(f"dtau_{i}/du", model.delays[i].dtau_du(u),
                       _central_diff(lambda w: model.delays[i].tau(w), u))
    report = JacobianReport(block_errors=errors, tol=tol)
    if not report.passed:
        logger.info("jacobian validation failed for blocks: %s", report.failed_blocks)
    return report


def tau_max(model: DdeModel, u_min, u_max, points_per_axis: int = 101) -> float:
    """Largest delay over the input box, by dense sampling including corners."""
    if model.m == 0:
        return 0.0
    if model.n_u == 0:
        u = np.zeros(0)
        return float(max(float(ch.tau(u)) for ch in model.delays))
    u_min = np.atleast_1d(np.asarray(u_min, dtype=float))
    u_max = np.atleast_1d(np.asarray(u_max, dtype=float))
    if np.any(~np.isfinite(u_min)) or np.any(~np.isfinite(u_max)):
        raise ValueError("tau_max needs a finite input box")
    axes = [np.linspace(u_min[j], u_max[j], points_per_axis) for j in range(model.n_u)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.n_u)
    best = 0.0
    for ch in model.delays:
        best = max(best, float(np.max(ch.tau(grid))))
    return best
