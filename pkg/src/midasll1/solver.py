"""Multi-step inertial doubly stochastic solver plus deterministic baselines.

One iteration picks a mode (uniformly at random or cyclically), samples a
fiber batch, forms two extrapolated points from the mode's recent iterates
(one for the gradient evaluation, one as the proximal anchor), takes a
stochastic proximal gradient step on that mode and leaves the others
untouched.  An epoch is sum_n ceil(J_n / B_n) iterations, i.e. one expected
pass over each mode's fibers.

The deterministic baselines share the same gradient and prox kernels: a
cyclic full-gradient proximal scheme with per-mode 1/L steps, and a
multiplicative-update scheme for nonnegative data.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import (
    SagaState,
    SarahState,
    largest_divisor_at_most,
    make_bins,
    sgd_estimate,
)
from .model import (
    LL1Factors,
    RankVector,
    full_gradient,
    lipschitz_bound,
    objective,
)
from .prox import NONNEG, RegularizerSpec, prox
from .tensor import DenseTensor3, FiberBatch, row_count, unfold


class SolverAbort(RuntimeError):
    """Raised when an update produces non-finite entries."""

    def __init__(self, iteration: int, mode: int):
        super().__init__(
            f"non-finite factor entries at iteration {iteration}, mode {mode}; "
            "the (eta, alpha, beta) configuration is likely infeasible"
        )
        self.iteration = iteration
        self.mode = mode


class InertialSchedule:
    """k -> scale * (k-1)/(k+2); converges to `scale` as k grows."""

    def __init__(self, scale: float):
        self.scale = float(scale)
        self.limit = float(scale)

    def __call__(self, k: int) -> float:
        # differences this deep in the history are still zero-padded copies
        # of the start point, so the value before step 1 is irrelevant
        if k < 1:
            return 0.0
        return self.scale * (k - 1) / (k + 2)

    def __eq__(self, other):
        return isinstance(other, InertialSchedule) and self.scale == other.scale


class ConstantSchedule:
    def __init__(self, value: float):
        self.value = float(value)
        self.limit = float(value)

    def __call__(self, k: int) -> float:
        return self.value

    def __eq__(self, other):
        return isinstance(other, ConstantSchedule) and self.value == other.value


@dataclass
class SolverConfig:
    ranks: RankVector
    estimator: str = "saga"
    t: int = 3
    alpha_schedule: object = field(default_factory=lambda: InertialSchedule(0.3))
    beta_schedule: object = field(default_factory=lambda: InertialSchedule(0.8))
    eta_schedule: object = field(default_factory=lambda: ConstantSchedule(0.1))
    step_rule: str = "schedule"  # or "inverse_lipschitz"
    B: int = 0  # 0 -> 2 * max L_r
    epochs: int = 200
    seed: int = 0
    mode_policy: str = "uniform"  # or "cyclic"
    reg: RegularizerSpec = NONNEG
    init: object = "uniform"  # "uniform" or an LL1Factors
    gamma_diag: float | None = None
    sarah_q: int = 0  # 0 -> one epoch's worth of mode-n updates
    abs_tol: float = 1e-12

    def __post_init__(self):
        if self.estimator not in ("sgd", "saga", "sarah"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.t < 0:
            raise ValueError("inertial depth t must be >= 0")
        if self.mode_policy not in ("uniform", "cyclic"):
            raise ValueError(f"unknown mode policy {self.mode_policy!r}")
        if self.step_rule not in ("schedule", "inverse_lipschitz"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def batch_size(self) -> int:
        return self.B if self.B > 0 else 2 * max(self.ranks.L)


@dataclass
class RunTrace:
    epoch: list[int] = field(default_factory=list)
    iteration: list[int] = field(default_factory=list)
    phi: list[float] = field(default_factory=list)
    f: list[float] = field(default_factory=list)
    elapsed_s: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    lyapunov: list[float | None] = field(default_factory=list)
    mode_counts: list[tuple[int, int, int]] = field(default_factory=list)

    def append(self, epoch, iteration, phi, f, elapsed, step_norm, lyapunov, counts):
        self.epoch.append(epoch)
        self.iteration.append(iteration)
        self.phi.append(phi)
        self.f.append(f)
        self.elapsed_s.append(elapsed)
        self.step_norm.append(step_norm)
        self.lyapunov.append(lyapunov)
        self.mode_counts.append(tuple(counts))

    def __len__(self):
        return len(self.epoch)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Counter-based (Philox) streams split by purpose, so one consumer's
    draws never shift another's."""
    names = ("init", "mode", "fiber", "noise")
    return {
        name: np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        )
        for i, name in enumerate(names)
    }


def init_factors(config: SolverConfig, dims, rng: np.random.Generator) -> LL1Factors:
    if isinstance(config.init, LL1Factors):
        return config.init.copy()
    rk = config.ranks
    return LL1Factors(
        rng.random((dims[0], rk.total)),
        rng.random((dims[1], rk.total)),
        rng.random((dims[2], rk.R)),
        rk,
    )


def extrapolate(history, coeffs) -> np.ndarray:
    """A^k + sum_i coeffs[i-1] * (A^{k+1-i} - A^{k-i}) over the mode's history.

    `history` is oldest-to-newest; missing entries count as equal to the
    oldest one (zero differences).
    """
    base = history[-1]
    out = None
    n = len(history)
    for i, c in enumerate(coeffs, start=1):
        if i + 1 > n or c == 0.0:
            continue
        if out is None:
            out = base.copy()
        out += c * (history[-i] - history[-i - 1])
    return base if out is None else out


def effective_batches(config: SolverConfig, dims) -> dict[int, int]:
    """Per-mode batch size: clamped to J_n, and for SAGA reduced to the
    largest divisor of J_n so that fixed disjoint bins tile the fibers."""
    b = config.batch_size()
    out = {}
    for n in (1, 2, 3):
        jn = row_count(dims, n)
        bn = min(b, jn)
        if config.estimator == "saga":
            bn = largest_divisor_at_most(jn, bn)
        out[n] = bn
    return out


def _abar(t: int, alpha: float, beta: float, eta: float, lip: float, gamma: float) -> float:
    return 1.5 * lip * t * beta * beta + 0.5 * gamma + alpha / (2.0 * eta)


@dataclass(frozen=True)
class FeasibilityReport:
    delta: float
    tail_margin: float
    feasible: bool
    eta_max: float
    b_lower: float
    abar: float


def feasibility_check(
    t: int,
    eta_bar: float,
    lip: float,
    gamma: float,
    alpha_limit: float,
    beta_limit: float,
) -> FeasibilityReport:
    """Step-size feasibility for the solver's descent diagnostic.

    Uses the limiting values of the inertial schedules:
        b = (1 - t*alpha - 2*L*eta - gamma*eta) / (2*eta)
        a_i = 3*L*t*beta^2/2 + gamma/2 + alpha/(2*eta)     (i = 1..t+1)
        delta = b - sum_{j=1}^{t+1} (j+1) a_j
        tail  = (t+2) a_{t+1} - gamma/2
    Both must be positive (the tail condition is vacuous when gamma = 0).
    With alpha = beta = 0 the delta condition reduces to
    eta < 2 / (4L + gamma*(t+2)*(t+3)).
    """
    if eta_bar <= 0:
        raise ValueError("eta must be positive")
    a = _abar(t, alpha_limit, beta_limit, eta_bar, lip, gamma)
    s = (t + 2) * (t + 3) // 2 - 1  # sum_{j=1}^{t+1} (j+1)
    b_lower = (1.0 - t * alpha_limit - 2.0 * lip * eta_bar - gamma * eta_bar) / (
        2.0 * eta_bar
    )
    delta = b_lower - s * a
    tail = (t + 2) * a - 0.5 * gamma
    feasible = delta > 0 and (gamma == 0.0 or tail > 0)
    num = 1.0 - t * alpha_limit - s * alpha_limit
    den = 2.0 * lip + gamma + s * (3.0 * lip * t * beta_limit * beta_limit + gamma)
    eta_max = num / den if num > 0 and den > 0 else 0.0
    return FeasibilityReport(delta, tail, feasible, eta_max, b_lower, a)


def lyapunov_surrogate(phi: float, step_sq_norms, abars) -> float:
    """phi + sum_{i=1}^{t+1} sum_{j=i}^{t+1} (j+1) a_j ||A^{k+1-i} - A^{k-i}||^2.

    `step_sq_norms[i-1]` is the squared step norm i steps back (most recent
    first); `abars[j-1]` the per-depth coefficients.  Diagnostic only: the
    underlying descent holds in expectation, not per realization.
    """
    t1 = len(abars)
    out = phi
    for i in range(1, t1 + 1):
        if i - 1 >= len(step_sq_norms):
            break
        w = sum((j + 1) * abars[j - 1] for j in range(i, t1 + 1))
        out += w * step_sq_norms[i - 1]
    return out


def _diag_abars(config: SolverConfig, factors, eta: float) -> list[float]:
    gamma = config.gamma_diag or 0.0
    lip = max(lipschitz_bound(factors, n) for n in (1, 2, 3))
    alpha = getattr(config.alpha_schedule, "limit", config.alpha_schedule(10**9))
    beta = getattr(config.beta_schedule, "limit", config.beta_schedule(10**9))
    a = _abar(config.t, alpha, beta, eta, lip, gamma)
    return [a] * (config.t + 1)


def run(
    config: SolverConfig,
    tensor: DenseTensor3,
    callback=None,
    clock=None,
) -> tuple[LL1Factors, RunTrace]:
    """Run the inertial doubly stochastic solver for the configured epochs.

    Stops early once phi drops below `abs_tol`.  `callback(epoch, factors,
    estimator_state)` is invoked after each epoch, mainly for probing.
    Identical (config, tensor) inputs give bitwise-identical results.
    """
    clock = clock or time.perf_counter
    dims = tensor.dims
    streams = rng_streams(config.seed)
    factors = init_factors(config, dims, streams["init"])
    if factors.dims != dims:
        raise ValueError(f"init factor dims {factors.dims} do not match tensor {dims}")
    batches = effective_batches(config, dims)
    jn = {n: row_count(dims, n) for n in (1, 2, 3)}
    iters_per_epoch = sum(math.ceil(jn[n] / batches[n]) for n in (1, 2, 3))

    state = None
    if config.estimator == "saga":
        bins = {n: make_bins(jn[n], batches[n]) for n in (1, 2, 3)}
        state = SagaState.warm_start(factors, tensor, bins)
    elif config.estimator == "sarah":
        q = {
            n: config.sarah_q if config.sarah_q > 0 else math.ceil(jn[n] / batches[n])
            for n in (1, 2, 3)
        }
        state = SarahState(q=q)

    depth = config.t + 2
    history = {n: deque([factors.factor(n)], maxlen=depth) for n in (1, 2, 3)}
    step_sq = deque([0.0] * (config.t + 1), maxlen=config.t + 1)

    trace = RunTrace()
    rng_mode, rng_fiber = streams["mode"], streams["fiber"]
    k = 0
    eta = float("nan")
    last_step_norm = 0.0
    start = clock()
    for epoch in range(config.epochs):
        counts = [0, 0, 0]
        for _ in range(iters_per_epoch):
            if config.mode_policy == "cyclic":
                n = 1 + (k % 3)
            else:
                n = 1 + int(rng_mode.integers(3))
            counts[n - 1] += 1

            coeffs_a = [config.alpha_schedule(k + 1 - i) for i in range(1, config.t + 1)]
            coeffs_b = [config.beta_schedule(k + 1 - i) for i in range(1, config.t + 1)]
            y_anchor = extrapolate(history[n], coeffs_a)
            u_eval = extrapolate(history[n], coeffs_b)
            factors_u = factors.with_factor(n, u_eval)

            if config.step_rule == "inverse_lipschitz":
                eta = 1.0 / lipschitz_bound(factors_u, n)
            else:
                eta = float(config.eta_schedule(k))

            if config.estimator == "saga":
                nb = state.n_bins(n)
                bin_id = 0 if nb == 1 else int(rng_fiber.integers(nb))
                g = state.estimate(factors_u, tensor, n, bin_id)
            else:
                bn = batches[n]
                if bn == jn[n]:
                    idx = np.arange(jn[n])
                else:
                    idx = rng_fiber.choice(jn[n], size=bn, replace=False)
                batch = FiberBatch(n, idx)
                if config.estimator == "sarah":
                    g = state.estimate(factors_u, tensor, n, batch)
                else:
                    g = sgd_estimate(factors_u, tensor, batch)

            a_new = prox(config.reg, n, y_anchor - eta * g, eta)
            if not np.isfinite(a_new).all():
                raise SolverAbort(k, n)
            d = a_new - factors.factor(n)
            sq = float(np.sum(d * d))
            last_step_norm = math.sqrt(sq)
            factors = factors.with_factor(n, a_new)
            history[n].append(a_new)
            step_sq.appendleft(sq)
            k += 1

        obj = objective(factors, tensor, config.reg)
        ly = None
        if config.gamma_diag is not None:
            ly = lyapunov_surrogate(obj.phi, list(step_sq), _diag_abars(config, factors, eta))
        trace.append(epoch + 1, k, obj.phi, obj.f, clock() - start, last_step_norm, ly, counts)
        if callback is not None:
            callback(epoch + 1, factors, state)
        if obj.phi < config.abs_tol:
            break
    return factors, trace


def palm_baseline(
    config: SolverConfig,
    tensor: DenseTensor3,
    sweeps: int | None = None,
    clock=None,
) -> tuple[LL1Factors, RunTrace]:
    """Cyclic full-gradient proximal scheme with per-mode 1/L step sizes.

    The objective is monotonically nonincreasing; a violation beyond 1e-10
    raises, since it indicates a broken gradient or Lipschitz bound.
    """
    clock = clock or time.perf_counter
    sweeps = config.epochs if sweeps is None else sweeps
    streams = rng_streams(config.seed)
    factors = init_factors(config, tensor.dims, streams["init"])
    trace = RunTrace()
    prev_phi = objective(factors, tensor, config.reg).phi
    start = clock()
    k = 0
    for sweep in range(sweeps):
        last_step_norm = 0.0
        for n in (1, 2, 3):
            eta = 1.0 / lipschitz_bound(factors, n)
            g = full_gradient(factors, tensor, n)
            a_new = prox(config.reg, n, factors.factor(n) - eta * g, eta)
            if not np.isfinite(a_new).all():
                raise SolverAbort(k, n)
            d = a_new - factors.factor(n)
            last_step_norm = math.sqrt(float(np.sum(d * d)))
            factors = factors.with_factor(n, a_new)
            k += 1
        obj = objective(factors, tensor, config.reg)
        if obj.phi > prev_phi + 1e-10:
            raise RuntimeError(
                f"objective increased at sweep {sweep}: {prev_phi} -> {obj.phi}"
            )
        prev_phi = obj.phi
        trace.append(sweep + 1, k, obj.phi, obj.f, clock() - start, last_step_norm, None, (1, 1, 1))
        if obj.phi < config.abs_tol:
            break
    return factors, trace


def als_mu_baseline(
    config: SolverConfig,
    tensor: DenseTensor3,
    iterations: int | None = None,
    eps: float = 1e-12,
    clock=None,
) -> tuple[LL1Factors, RunTrace]:
    """Cyclic multiplicative updates A_n <- A_n * (X_(n)^T H_n) / (A_n H^T H + eps).

    Requires elementwise nonnegative data; factors stay nonnegative, and a
    strictly positive start stays strictly positive.
    """
    clock = clock or time.perf_counter
    if tensor.array.min() < 0:
        raise ValueError("multiplicative updates require a nonnegative tensor")
    iterations = config.epochs if iterations is None else iterations
    streams = rng_streams(config.seed)
    factors = init_factors(config, tensor.dims, streams["init"])
    for n in (1, 2, 3):
        if factors.factor(n).min() < 0:
            raise ValueError("multiplicative updates require a nonnegative init")
    unfolds = {n: unfold(tensor, n).array for n in (1, 2, 3)}
    trace = RunTrace()
    start = clock()
    k = 0
    from .model import build_H  # local to keep module top imports tidy

    for it in range(iterations):
        last_step_norm = 0.0
        for n in (1, 2, 3):
            h = build_H(factors, n)
            a = factors.factor(n)
            num = unfolds[n].T @ h
            den = a @ (h.T @ h) + eps
            a_new = a * (num / den)
            last_step_norm = float(np.linalg.norm(a_new - a))
            factors = factors.with_factor(n, a_new)
            k += 1
        obj = objective(factors, tensor, config.reg)
        trace.append(it + 1, k, obj.phi, obj.f, clock() - start, last_step_norm, None, (1, 1, 1))
        if obj.phi < config.abs_tol:
            break
    return factors, trace
