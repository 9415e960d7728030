"""Ground-truth simulation: open-loop data collection and event-triggered runs.

The experiment side integrates the true polynomial dynamics under
piecewise-constant random excitation and records noisy derivative
measurements; the closed-loop side runs a zero-order-hold controller whose
updates are triggered by a comparison-function condition on the measurement
error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .consistency import Dataset, RegressorBases, Sample
from .poly import Polynomial, parse_poly, variables

ControlLaw = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class GroundTruthSystem:
    """True dynamics xdot = A_star Z(x) + B_star W(x) u over known regressors."""

    A_star: np.ndarray  # (n, N)
    B_star: np.ndarray  # (n, M)
    bases: RegressorBases

    def __post_init__(self):
        A = np.asarray(self.A_star, dtype=float)
        B = np.asarray(self.B_star, dtype=float)
        b = self.bases
        if A.shape != (b.n, b.N):
            raise ValueError(f"A_star shape {A.shape}, expected ({b.n}, {b.N})")
        if B.shape != (b.n, b.M):
            raise ValueError(f"B_star shape {B.shape}, expected ({b.n}, {b.M})")
        object.__setattr__(self, "A_star", A)
        object.__setattr__(self, "B_star", B)
        object.__setattr__(self, "AB", np.hstack([A, B]))

    @property
    def n(self) -> int:
        return self.bases.n

    @property
    def m(self) -> int:
        return self.bases.m

    def field_at(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Noiseless state derivative; shares the regressor code path with
        the membership tests so noiseless data reproduce it bitwise."""
        with np.errstate(over="ignore", invalid="ignore"):
            return self.AB @ self.bases.regressor(x, u)


def khalil_system() -> GroundTruthSystem:
    """Two-state benchmark: xdot1 = -x1 + x1^2 x2, xdot2 = u.

    The regressor list deliberately contains more monomials than the true
    drift uses, so the data analysis cannot simply read the system off.
    """
    vs = variables(["x1", "x2"])
    Z = [parse_poly(s, vs) for s in ("x1", "x1^2", "x1^2*x2", "x1*x2^2", "x2^3")]
    W = [[Polynomial.constant(vs, 1.0)]]
    A_star = np.array([[-1.0, 0.0, 1.0, 0.0, 0.0],
                       [0.0, 0.0, 0.0, 0.0, 0.0]])
    B_star = np.array([[0.0], [1.0]])
    return GroundTruthSystem(A_star, B_star, RegressorBases(vs, Z, W))


@dataclass(frozen=True)
class ExperimentConfig:
    """Open-loop experiment: T records at fixed spacing under random input."""

    T: int
    sample_spacing: float
    u_bound: float
    d_radius: float
    x0: np.ndarray
    seed: int
    h: float = 1e-3  # internal integration step between records

    def __post_init__(self):
        if self.sample_spacing <= 0.0:
            raise ValueError("sample_spacing must be positive")
        if self.u_bound < 0.0 or self.d_radius < 0.0:
            raise ValueError("u_bound and d_radius must be nonnegative")
        if self.h <= 0.0:
            raise ValueError("integration step h must be positive")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))


@dataclass
class Trajectory:
    times: np.ndarray   # (K+1,)
    states: np.ndarray  # (K+1, n)
    diverged: bool = False


def _rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _as_control(law: ControlLaw, m: int) -> Callable[[np.ndarray], np.ndarray]:
    if callable(law):
        return lambda x: np.asarray(law(x), dtype=float).reshape(m)
    held = np.asarray(law, dtype=float).reshape(m)
    return lambda x: held


def integrate(
    sys: GroundTruthSystem,
    control_law: ControlLaw,
    x0: Sequence[float],
    horizon: float,
    h: float,
) -> Trajectory:
    """Fixed-step classical Runge-Kutta integration of the closed loop.

    control_law is either a feedback x -> u (evaluated at internal stages)
    or a held constant input.  A non-finite state aborts the run and the
    partial trajectory is returned with the diverged flag set.
    """
    if h <= 0.0:
        raise ValueError("step size h must be positive")
    u_of = _as_control(control_law, sys.m)
    f = lambda s: sys.field_at(s, u_of(s))
    steps = int(round(horizon / h))
    x = np.asarray(x0, dtype=float).reshape(-1)
    times = [0.0]
    states = [x.copy()]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, steps + 1):
            x = _rk4_step(f, x, h)
            if not np.all(np.isfinite(x)):
                diverged = True
                break
            times.append(j * h)
            states.append(x.copy())
    return Trajectory(np.array(times), np.array(states), diverged)


def _ball_sample(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """Uniform draw from the closed Euclidean ball of the given radius."""
    if radius == 0.0:
        return np.zeros(n)
    direction = rng.standard_normal(n)
    norm = np.linalg.norm(direction)
    while norm == 0.0:
        direction = rng.standard_normal(n)
        norm = np.linalg.norm(direction)
    r = radius * rng.random() ** (1.0 / n)
    return (r / norm) * direction


def collect_dataset(sys: GroundTruthSystem, cfg: ExperimentConfig) -> Dataset:
    """Record T noisy samples along one trajectory under random held inputs.

    The input is redrawn (componentwise uniform in [-u_bound, u_bound]) at
    every record and held until the next one; the measured derivative is
    the true field at the record plus a noise draw uniform in the Euclidean
    ball of radius d_radius, so delta = d_radius^2 holds by construction.
    """
    if cfg.T < 1:
        raise ValueError("empty experiment: need at least one sample")
    if cfg.x0.shape != (sys.n,):
        raise ValueError(f"x0 shape {cfg.x0.shape}, expected ({sys.n},)")
    rng = np.random.default_rng(cfg.seed)
    x = cfg.x0.copy()
    substeps = max(1, int(round(cfg.sample_spacing / cfg.h)))
    hs = cfg.sample_spacing / substeps
    samples: list[Sample] = []
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.T):
            u = rng.uniform(-cfg.u_bound, cfg.u_bound, size=sys.m)
            d = _ball_sample(rng, sys.n, cfg.d_radius)
            xdot = sys.field_at(x, u) + d
            samples.append(Sample(i * cfg.sample_spacing, u, x.copy(), xdot))
            for _ in range(substeps):
                x = _rk4_step(lambda s: sys.field_at(s, u), x, hs)
            if not np.all(np.isfinite(x)):
                raise RuntimeError(
                    f"divergence during data collection after sample {i} "
                    f"(t = {i * cfg.sample_spacing:.6g})"
                )
    return Dataset(sys.bases, cfg.d_radius ** 2, samples)


# ---------------------------------------------------------------------------
# event-triggered closed loop


def _check_kinf(alpha: Polynomial, name: str) -> None:
    """Even powers, nonnegative coefficients, positive sum: the gate that
    makes a single-variable polynomial strictly increasing and unbounded."""
    total = 0.0
    for exps, c in alpha.terms.items():
        k = exps[0]
        if k == 0 or k % 2 == 1:
            raise ValueError(f"{name} must use even powers r^2, r^4, ... only")
        if c < 0.0:
            raise ValueError(f"{name} has a negative coefficient {c}")
        total += c
    if total <= 0.0:
        raise ValueError(f"{name} must have a positive coefficient sum")


def _scalar_fn(alpha, name: str) -> Callable[[float], float]:
    if isinstance(alpha, Polynomial):
        if len(alpha.vars) != 1:
            raise ValueError(f"{name} must be a polynomial in a single variable")
        _check_kinf(alpha, name)
        return lambda r: alpha.eval([r])
    if callable(alpha):
        return alpha
    raise TypeError(f"{name} must be a polynomial or a callable")


@dataclass
class EventTrace:
    """Grid-sampled closed-loop run with its triggering bookkeeping."""

    times: np.ndarray        # (K+1,)
    states: np.ndarray       # (K+1, n)
    inputs: np.ndarray       # (K+1, m), held control at each grid point
    errors: np.ndarray       # (K+1, n), last event state minus current state
    alpha3: np.ndarray       # (K+1,), alpha3(|x|)
    alpha4: np.ndarray       # (K+1,), alpha4(|e|)
    event_flags: np.ndarray  # (K+1,), 1 where an event fired
    event_times: list[float]
    sigma: float
    diverged: bool = False
    storm: bool = False

    @property
    def event_count(self) -> int:
        return len(self.event_times)


def event_triggered_run(
    sys: GroundTruthSystem,
    k: Sequence[Polynomial],
    alpha3,
    alpha4,
    sigma: float,
    x0: Sequence[float],
    horizon: float,
    h: float = 1e-3,
) -> EventTrace:
    """Zero-order-hold control with comparison-function triggering.

    The control k(x(t_i)) is held until, at a grid point, alpha4(|e|)
    exceeds sigma * alpha3(|x|); the state is then re-measured there (e
    resets to zero) and the control recomputed.  Events are only possible
    at grid points, so a one-step dwell is structural.  Firing at every
    step for more than 1000 consecutive steps sets the storm flag.
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie strictly between 0 and 1, got {sigma}")
    if h <= 0.0:
        raise ValueError("step size h must be positive")
    a3 = _scalar_fn(alpha3, "alpha3")
    a4 = _scalar_fn(alpha4, "alpha4")
    kf = [ki if ki.vars == sys.bases.vars else ki.extend(sys.bases.vars) for ki in k]
    if len(kf) != sys.m:
        raise ValueError(f"controller has {len(kf)} components, expected {sys.m}")

    def control_at(x: np.ndarray) -> np.ndarray:
        return np.array([ki.eval(x) for ki in kf])

    steps = int(round(horizon / h))
    x = np.asarray(x0, dtype=float).reshape(-1)
    held_x = x.copy()
    u = control_at(held_x)
    times = [0.0]
    states = [x.copy()]
    inputs = [u.copy()]
    errors = [np.zeros(sys.n)]
    a3s = [a3(float(np.linalg.norm(x)))]
    a4s = [a4(0.0)]
    flags = [1]
    event_times = [0.0]
    diverged = False
    storm = False
    consecutive = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, steps + 1):
            x = _rk4_step(lambda s: sys.field_at(s, u), x, h)
            if not np.all(np.isfinite(x)):
                diverged = True
                break
            t = j * h
            e = held_x - x
            v3 = a3(float(np.linalg.norm(x)))
            v4 = a4(float(np.linalg.norm(e)))
            fired = 0
            if v4 > sigma * v3:
                held_x = x.copy()
                u = control_at(held_x)
                e = np.zeros(sys.n)
                v4 = a4(0.0)
                event_times.append(t)
                fired = 1
                consecutive += 1
                if consecutive > 1000:
                    storm = True
            else:
                consecutive = 0
            times.append(t)
            states.append(x.copy())
            inputs.append(u.copy())
            errors.append(e)
            a3s.append(v3)
            a4s.append(v4)
            flags.append(fired)
    return EventTrace(
        times=np.array(times),
        states=np.array(states),
        inputs=np.array(inputs),
        errors=np.array(errors),
        alpha3=np.array(a3s),
        alpha4=np.array(a4s),
        event_flags=np.array(flags, dtype=int),
        event_times=event_times,
        sigma=sigma,
        diverged=diverged,
        storm=storm,
    )


# ---------------------------------------------------------------------------
# CSV export


def event_trace_to_csv(trace: EventTrace, path, var_names: Sequence[str] | None = None) -> None:
    """Columns: t, states, held inputs, errors, alpha3, alpha4, event_flag."""
    n = trace.states.shape[1]
    m = trace.inputs.shape[1]
    names = list(var_names) if var_names is not None else [f"x{i+1}" for i in range(n)]
    if len(names) != n:
        raise ValueError(f"{len(names)} variable names for {n} states")
    header = (["t"] + names + [f"u{j+1}" for j in range(m)]
              + [f"e{i+1}" for i in range(n)] + ["alpha3", "alpha4", "event_flag"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(len(trace.times)):
            row = ([repr(float(trace.times[j]))]
                   + [repr(float(v)) for v in trace.states[j]]
                   + [repr(float(v)) for v in trace.inputs[j]]
                   + [repr(float(v)) for v in trace.errors[j]]
                   + [repr(float(trace.alpha3[j])), repr(float(trace.alpha4[j])),
                      str(int(trace.event_flags[j]))])
            writer.writerow(row)


def dataset_to_csv(ds: Dataset, path) -> None:
    """Open-loop experiment records: t, states, inputs, measured derivatives."""
    names = [v.name for v in ds.bases.vars]
    header = (["t"] + names + [f"u{j+1}" for j in range(ds.bases.m)]
              + [f"{nm}dot" for nm in names])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in ds.samples:
            row = ([repr(float(s.t))] + [repr(float(v)) for v in s.x]
                   + [repr(float(v)) for v in s.u] + [repr(float(v)) for v in s.xdot])
            writer.writerow(row)
