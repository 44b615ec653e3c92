"""Convergence checks: reference minimizers, safe stepsizes, Lyapunov tracking.

Strongly convex case
--------------------
The potential ``V(x, H) = ||x - x*||^2 + gamma * sigma * mean(H)`` with
``gamma = eta n / L`` must contract by ``(1 - eta mu)^ell`` per outer loop in
expectation. ``H_i`` bounds ``||alpha_i - grad f_i(x*)||^2``: it starts at
``||grad f_i(x*)||^2`` and, whenever index ``i`` moves to a new snapshot
``x_tilde``, becomes ``2 L h_i(x_tilde)`` where ``h_i`` is the Bregman gap of
``f_i`` at ``x*``.

Non-convex case
---------------
``c^m`` runs backwards from ``c^M = 0``; ``Gamma^m`` must stay positive and
``sum_m E||grad F^m||_F^2 <= (f(x_0) - f*) / min_m Gamma^m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objective import FiniteSumObjective, Loss, loss_derivs, loss_second_derivs, loss_values
from .optim import Method, OptimizerConfig, run
from .snapshots import SnapshotStore


class ReferenceSolveError(RuntimeError):
    pass


class TheoryPreconditionError(ValueError):
    """Parameters outside the range where a stated guarantee applies."""


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    f_star: float
    grad_norm: float
    per_component_grads: np.ndarray
    iterations: int = 0


def solve_reference(obj: FiniteSumObjective, tol: float = 1e-12, max_iter: int = 200) -> ReferenceSolution:
    """Minimize a strongly convex objective to ``||grad f|| <= tol``.

    Damped Newton with an Armijo backtracking search; when the search stalls
    at float resolution a plain ``1/(L + mu)`` gradient step is taken.
    Run counters are never touched.
    """
    if obj.mu <= 0:
        raise TheoryPreconditionError("reference solve needs a strongly convex objective (mu > 0)")
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.zeros(obj.dim)
    fx = obj.value(x)
    g = obj.full_gradient(x)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > tol:
        if it >= max_iter:
            raise ReferenceSolveError(f"no convergence after {max_iter} iterations; ||grad f|| = {gn:.3e}")
        it += 1
        try:
            p = np.linalg.solve(obj.hessian(x), g)
        except np.linalg.LinAlgError:
            p = g / (obj.smoothness + obj.mu)
        step = 1.0
        slope = float(g @ p)
        while True:
            x_new = x - step * p
            f_new = obj.value(x_new)
            if f_new <= fx - 1e-4 * step * slope:
                break
            g_new = obj.full_gradient(x_new)
            if step == 1.0 and np.linalg.norm(g_new) < 0.5 * gn:
                # Newton region: objective differences are below float resolution
                break
            step *= 0.5
            if step < 1e-12:
                x_new = x - g / (obj.smoothness + obj.mu)
                f_new = obj.value(x_new)
                break
        x, fx = x_new, f_new
        g = obj.full_gradient(x)
        gn = float(np.linalg.norm(g))
    return ReferenceSolution(x, fx, gn, obj.component_gradients(x), it)


# --- closed forms -------------------------------------------------------


def s_ell(eta: float, mu: float, ell: int) -> float:
    """``sum_{t<ell} (1 - eta mu)^t`` in closed form."""
    return _geom(eta * mu, ell)


def q_ell(n: int, ell: int) -> float:
    """``sum_{t<ell} (1 - 1/n)^t`` in closed form."""
    return _geom(1.0 / n, ell)


def _geom(c: float, ell: int) -> float:
    # (1 - (1-c)^ell) / c, stable for tiny c
    if c == 0.0:
        return float(ell)
    if c >= 1.0:
        return (1.0 - (1.0 - c) ** ell) / c
    return -math.expm1(ell * math.log1p(-c)) / c


def theoretical_stepsize(method: Method | str, mu: float, L: float, n: int, ell: int, q: int | None = None) -> float:
    """Largest stepsize covered by the linear-convergence guarantees.

    ``ksvrg-v1`` gets ``2(1 - (ell-1)/(2n)) / (5(mu n + 2L))``; every other
    method gets ``1 / (3(mu n + 2L))``, the V2 bound, which for V2 itself
    additionally needs ``q >= ell/3``.
    """
    method = Method.parse(method)
    if not (mu > 0 and L > 0):
        raise TheoryPreconditionError("theoretical stepsizes need mu > 0 and L > 0")
    if method is Method.KSVRG_V1:
        return 2.0 * (1.0 - (ell - 1) / (2.0 * n)) / (5.0 * (mu * n + 2.0 * L))
    if method is Method.KSVRG_V2:
        q = ell if q is None else q
        if 3 * q < ell:
            raise TheoryPreconditionError(f"k-SVRG-V2 guarantee needs q >= ell/3 (q={q}, ell={ell})")
    return 1.0 / (3.0 * (mu * n + 2.0 * L))


def sigma_constant(method: Method | str, mu: float, L: float, n: int, ell: int, q: int | None = None) -> float:
    """Weight of the ``H`` term in the convex potential, as set in the proofs."""
    method = Method.parse(method)
    if not (mu > 0 and L > 0):
        raise TheoryPreconditionError("sigma needs mu > 0 and L > 0")
    kap = L / mu
    if method is Method.KSVRG_V2:
        q = ell if q is None else q
        sigma = (ell / (2.0 * q)) / (2 * L / (2 * L + mu * n) + (2 * n + 2 * kap) / (2 * n - q + 4 * kap))
    elif method is Method.KSVRG_V1:
        shrink = 1.0 - (ell - 1) / (2.0 * n)
        sigma = 1.0 / (2 * L * shrink / (L + mu * n) + (n + 2 * kap) / (2 * n - ell * shrink + 4 * kap))
    else:
        raise TheoryPreconditionError(f"no sigma constant for method {method.value}")
    if not 0.0 < sigma <= 1.0:
        raise TheoryPreconditionError(f"sigma = {sigma:.6g} outside (0, 1]")
    return sigma


# --- Bregman gaps -------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def _scalar_bregman(loss: Loss, z_star: np.ndarray, delta: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``phi(z*+delta) - phi(z*) - phi'(z*) delta`` without catastrophic cancellation."""
    direct = loss_values(loss, z_star + delta, b) - loss_values(loss, z_star, b) - loss_derivs(loss, z_star, b) * delta
    small = np.abs(delta) < 1e-2
    if np.any(small):
        zs, ds, bs = z_star[small], delta[small], b[small]
        s = _GL_NODES[:, None]
        integrand = (1.0 - s) * loss_second_derivs(loss, zs[None, :] + s * ds[None, :], bs[None, :])
        direct[small] = ds * ds * (_GL_WEIGHTS @ integrand)
    return direct


def bregman_gaps(obj: FiniteSumObjective, ref: ReferenceSolution, points: np.ndarray, slots: np.ndarray | None = None) -> np.ndarray:
    """``h_i(p_i)`` for every ``i``; ``p_i = points`` or ``points[slots[i]]``."""
    idx = np.arange(obj.n)
    if slots is None:
        diff = points - ref.x_star
        delta = obj.margins(idx, diff)
        ridge = 0.5 * obj.lam * float(diff @ diff) * np.ones(obj.n)
    else:
        diff = points - ref.x_star
        delta = obj.margins(idx, diff, slots)
        ridge = 0.5 * obj.lam * np.einsum("ij,ij->i", diff, diff)[slots]
    z_star = obj.margins(idx, ref.x_star)
    return _scalar_bregman(obj.loss, z_star, delta, obj.dataset.labels) + ridge


def anchor_gaps(obj: FiniteSumObjective, ref: ReferenceSolution, points: np.ndarray, slots: np.ndarray | None = None) -> np.ndarray:
    """``||grad f_i(p_i) - grad f_i(x*)||^2`` for every ``i``."""
    idx = np.arange(obj.n)
    b = obj.dataset.labels
    z_star = obj.margins(idx, ref.x_star)
    diff = points - ref.x_star
    delta = obj.margins(idx, diff, slots)
    c = loss_derivs(obj.loss, z_star + delta, b) - loss_derivs(obj.loss, z_star, b)
    sq = np.einsum("ij,ij->i", diff, diff) if diff.ndim == 2 else np.full(1, float(diff @ diff))
    vsq = sq[slots] if slots is not None else np.full(obj.n, sq[0])
    lam = obj.lam
    return c * c * obj.dataset.row_sq_norms() + 2.0 * lam * c * delta + lam * lam * vsq


# --- convex Lyapunov tracking -------------------------------------------


@dataclass
class ConvexLyapunovTracker:
    obj: FiniteSumObjective
    ref: ReferenceSolution
    eta: float
    sigma: float
    H: np.ndarray = field(init=False)
    refreshed: np.ndarray = field(init=False)
    history: list = field(default_factory=list)
    violations: int = 0
    h0_mismatch: int = 0
    initialized: bool = False

    def __post_init__(self):
        self.gamma = self.eta * self.obj.n / self.obj.smoothness
        self.H = np.einsum("ij,ij->i", self.ref.per_component_grads, self.ref.per_component_grads)
        self.refreshed = np.zeros(self.obj.n, dtype=bool)
        self.initialized = True

    def value(self, x: np.ndarray) -> float:
        d = x - self.ref.x_star
        return float(d @ d) + self.gamma * self.sigma * float(self.H.mean())

    def check_domination(self, store: SnapshotStore, rtol: float = 1e-10) -> int:
        """Count refreshed indices whose bound fails; tally warm-start mismatches."""
        gaps = anchor_gaps(self.obj, self.ref, store.vectors, store.assignment)
        ok = self.H >= gaps * (1.0 - rtol) - 1e-300
        bad = int(np.count_nonzero(~ok & self.refreshed))
        self.violations += bad
        self.h0_mismatch = int(np.count_nonzero(~ok & ~self.refreshed))
        return bad


def lyapunov_step(tracker, ref, store_before, x_before, x_after, x_tilde, phi, eta, mu, ell):
    """Advance the tracker over one outer loop.

    Returns ``(V_before, V_after, (1 - eta mu)^ell)``. ``store_before`` must
    still map ``phi`` to the old snapshots.
    """
    if tracker is None or not getattr(tracker, "initialized", False):
        raise RuntimeError("tracker not initialized")
    tracker.check_domination(store_before)
    v_before = tracker.value(x_before)
    phi = np.asarray(phi, dtype=np.int64)
    if phi.size:
        obj = tracker.obj
        h = bregman_gaps(obj, ref, x_tilde)[phi]
        tracker.H[phi] = 2.0 * obj.smoothness * h
        tracker.refreshed[phi] = True
        new_gaps = anchor_gaps(obj, ref, x_tilde)[phi]
        bad = int(np.count_nonzero(tracker.H[phi] < new_gaps * (1.0 - 1e-10) - 1e-300))
        tracker.violations += bad
    v_after = tracker.value(x_after)
    factor = (1.0 - eta * mu) ** ell
    tracker.history.append((v_before, v_after))
    return v_before, v_after, factor


@dataclass
class ConvexVerification:
    method: str
    eta: float
    sigma: float
    factor: float
    slack: float
    mean_ratios: np.ndarray
    mean_values: np.ndarray
    ratios: np.ndarray
    violations: int
    h0_mismatch: int

    @property
    def bound(self) -> float:
        return self.factor * (1.0 + self.slack)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.mean_ratios <= self.bound)) and self.violations == 0

    def report(self) -> str:
        lines = [
            f"method = {self.method}",
            f"eta = {self.eta!r}",
            f"sigma = {self.sigma!r}",
            f"contraction_factor = {self.factor!r}",
            f"bound_with_slack = {self.bound!r}",
            f"max_mean_ratio = {float(self.mean_ratios.max()) if self.mean_ratios.size else float('nan')!r}",
            f"domination_violations = {self.violations}",
            f"warm_start_h0_mismatch = {self.h0_mismatch}",
            f"result = {'pass' if self.passed else 'fail'}",
        ]
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        out = ["outer_loop,mean_lyapunov,mean_ratio,bound"]
        for m, (v, r) in enumerate(zip(self.mean_values, self.mean_ratios)):
            out.append(f"{m},{v!r},{r!r},{self.bound!r}")
        return "\n".join(out) + "\n"


def verify_convex(
    obj: FiniteSumObjective,
    method: Method | str,
    k: int,
    seeds,
    outer_loops: int,
    *,
    q: int | None = None,
    eta: float | None = None,
    ref: ReferenceSolution | None = None,
    slack: float = 0.05,
) -> ConvexVerification:
    """Run ``method`` over ``seeds`` and average the per-loop Lyapunov ratios."""
    method = Method.parse(method)
    if method not in (Method.KSVRG_V1, Method.KSVRG_V2):
        raise TheoryPreconditionError("convex guarantees cover ksvrg-v1 and ksvrg-v2 only")
    ref = ref if ref is not None else solve_reference(obj)
    cfg0 = OptimizerConfig(method, eta=1.0, k=k, q=q)
    ell = cfg0.inner_length(obj.n)
    q_eff = cfg0.subset_size(obj.n) if method is Method.KSVRG_V2 else None
    step = theoretical_stepsize(method, obj.mu, obj.smoothness, obj.n, ell, q_eff) if eta is None else eta
    sigma = sigma_constant(method, obj.mu, obj.smoothness, obj.n, ell, q_eff)
    ratios, values = [], []
    violations = mismatch = 0
    for seed in seeds:
        tracker = ConvexLyapunovTracker(obj, ref, step, sigma)
        seq: list = []

        def hook(ev, tracker=tracker, seq=seq):
            seq.append(lyapunov_step(tracker, ref, ev.store, ev.x_start, ev.x_end, ev.x_tilde, ev.phi, step, obj.mu, ell))

        res = run(OptimizerConfig(method, eta=step, k=k, q=q, outer_loops=outer_loops, seed=seed), obj, on_refresh=hook, record_wall=False)
        tracker.check_domination(res.store)
        violations += tracker.violations
        mismatch = max(mismatch, tracker.h0_mismatch)
        ratios.append([a2 / a1 for a1, a2, _ in seq])
        values.append([a1 for a1, _, _ in seq] + [seq[-1][1]] if seq else [tracker.value(res.x)])
    ratios = np.array(ratios)
    return ConvexVerification(
        method.value, step, sigma, (1.0 - step * obj.mu) ** ell, slack,
        ratios.mean(axis=0) if ratios.size else np.zeros(0), np.array(values).mean(axis=0), ratios, violations, mismatch,
    )


# --- non-convex schedule ------------------------------------------------


@dataclass
class NonconvexSchedule:
    L: float
    n: int
    M: int
    eta: float
    ell: int
    gamma_nc: float
    b1: float
    c_seq: np.ndarray
    Gamma_seq: np.ndarray
    Gamma_min: float
    defaults_used: bool

    @property
    def rho(self) -> float:
        return 1.0 - self.ell / self.n + self.gamma_nc * self.eta * self.ell + 4 * self.b1 * self.eta**2 * self.L**2 * self.ell**2

    @property
    def c_increment(self) -> float:
        return 2.0 * self.b1 * self.eta**2 * self.L**3 * self.ell

    @property
    def default_lower_bound(self) -> float:
        return 1.0 / (15.0 * self.L * np.cbrt(self.n) ** 2)

    def forward_c(self) -> np.ndarray:
        """Rebuild the c sequence forwards from ``c^0``; ends near 0 if consistent."""
        c = np.empty(self.M + 1)
        c[0] = self.c_seq[0]
        for m in range(self.M):
            c[m + 1] = (c[m] - self.c_increment) / self.rho
        return c


def nonconvex_schedule(L: float, n: int, M: int, eta: float | None = None, ell: int | None = None, gamma: float | None = None) -> NonconvexSchedule:
    """Parameter schedule for the non-convex guarantee.

    Defaults: ``eta = 1/(5 L n^(2/3))``, ``ell = ceil(1.5 n^(1/3))`` and
    ``gamma = L / n^(1/3)``; they require ``n > 15``.
    """
    if L <= 0 or M < 0 or n < 1:
        raise ValueError("need L > 0, n >= 1, M >= 0")
    defaults = eta is None and ell is None and gamma is None
    if (eta is None or ell is None or gamma is None) and n <= 15:
        raise TheoryPreconditionError(f"default non-convex parameters need n > 15 (n={n})")
    cr = float(np.cbrt(n))
    eta = 1.0 / (5.0 * L * cr * cr) if eta is None else float(eta)
    ell = int(math.ceil(1.5 * cr)) if ell is None else int(ell)
    gamma = L / cr if gamma is None else float(gamma)
    if gamma <= 0:
        raise TheoryPreconditionError("gamma must be positive")
    denom = 1.0 - 2.0 * L * L * eta * eta * ell * ell
    if denom <= 0:
        raise TheoryPreconditionError(f"b1 undefined: 2 L^2 eta^2 ell^2 = {1 - denom:.6g} >= 1")
    b1 = 1.0 / denom
    rho = 1.0 - ell / n + gamma * eta * ell + 4.0 * b1 * eta**2 * L**2 * ell**2
    inc = 2.0 * b1 * eta**2 * L**3 * ell
    c = np.zeros(M + 1)
    for m in range(M - 1, -1, -1):
        c[m] = c[m + 1] * rho + inc
    Gam = eta - c[1:] * eta / gamma - b1 * eta**2 * L - 2.0 * b1 * c[1:] * eta**2 * ell
    for m, g in enumerate(Gam):
        if g <= 0:
            raise TheoryPreconditionError(f"Gamma^{m} = {g:.6g} <= 0")
    gmin = float(Gam.min()) if M else math.inf
    return NonconvexSchedule(L, n, M, eta, ell, gamma, b1, c, Gam, gmin, defaults)


@dataclass
class Certificate:
    passed: bool
    margin: float
    mean_sum: float
    bound: float


def nonconvex_certificate(traces, schedule: NonconvexSchedule, f0: float, f_lb: float = 0.0) -> Certificate:
    """Compare the seed-averaged ``sum ||grad f(x_t)||^2`` with ``(f0 - f_lb) / Gamma``.

    ``traces`` holds one entry per seed, each a list (per outer loop) of
    per-step squared gradient norms.
    """
    if traces is None or any(t is None for t in traces) or len(traces) == 0:
        raise ValueError("gradient-norm trace missing")
    sums = [float(sum(sum(loop) for loop in t)) for t in traces]
    mean = float(np.mean(sums))
    bound = (f0 - f_lb) / schedule.Gamma_min if schedule.M else math.inf
    return Certificate(mean <= bound, bound - mean, mean, bound)


def verify_nonconvex(obj: FiniteSumObjective, seeds, outer_loops: int, schedule: NonconvexSchedule | None = None, f_lb: float = 0.0):
    """k-SVRG-V2 with ``q = ell`` under the schedule; returns ``(schedule, certificate)``."""
    if schedule is None:
        schedule = nonconvex_schedule(obj.smoothness, obj.n, outer_loops)
    x0 = np.zeros(obj.dim)
    traces = []
    for seed in seeds:
        cfg = OptimizerConfig(Method.KSVRG_V2, eta=schedule.eta, inner_len=schedule.ell, q=schedule.ell,
                              outer_loops=schedule.M, seed=seed, x0=x0)
        traces.append(run(cfg, obj, trace_grad_norms=True, record_wall=False).grad_sq)
    return schedule, nonconvex_certificate(traces, schedule, obj.value(x0), f_lb)
