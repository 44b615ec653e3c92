"""SGD, SVRG, SAGA and the k-SVRG family on a :class:`FiniteSumObjective`.

All variance-reduced methods share the step

    x <- x - eta * (grad f_i(x) - alpha_i + alpha_bar),   alpha_i = grad f_i(theta_i)

and differ in how snapshot points ``theta_i`` and the mean anchor
``alpha_bar`` are refreshed at the end of an inner loop of length ``ell``:

* ``ksvrg-v1``: indices drawn in the inner loop are moved to the new
  snapshot; their old anchors were already computed during the loop.
* ``ksvrg-v2``: ``q`` indices sampled without replacement are moved.
* ``k2svrg``: indices are moved block by block along a random permutation,
  which caps the number of live snapshots at ``2k``.

Cost accounting (the single source of truth for #GC / #ER):

=====================  ======  ======
operation              gc      er
=====================  ======  ======
variance-reduced step  2       1
SAGA step              1       2
SGD step               1       1
gradient at a snapshot 1       1
=====================  ======  ======

Random streams: ``SeedSequence(seed).spawn(2)`` feeds two Philox
generators; stream 0 draws inner-loop indices (one batch of ``ell`` per
outer loop), stream 1 draws snapshot sets (V2 subsets, k2 permutations).
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .objective import FULL_GRADIENT, SETUP, SNAPSHOT_REFRESH, CostCounters, FiniteSumObjective
from .records import StallSpan, TraceRow
from .snapshots import SnapshotStore


class Method(str, enum.Enum):
    SGD = "sgd"
    SVRG = "svrg"
    SAGA = "saga"
    KSVRG_V1 = "ksvrg-v1"
    KSVRG_V2 = "ksvrg-v2"
    K2SVRG = "k2svrg"

    @classmethod
    def parse(cls, name: "Method | str") -> "Method":
        if isinstance(name, cls):
            return name
        return cls(str(name).lower().replace("_", "-"))

    @property
    def is_k_variant(self) -> bool:
        return self in (Method.KSVRG_V1, Method.KSVRG_V2, Method.K2SVRG)


@dataclass
class OptimizerConfig:
    method: Method | str
    eta: float
    k: int = 1
    q: int | None = None
    mu: float | None = None
    inner_len: int | None = None
    outer_loops: int = 10
    seed: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.method = Method.parse(self.method)
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError("stepsize eta must be positive and finite")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.outer_loops < 0:
            raise ValueError("outer_loops must be >= 0")

    def inner_length(self, n: int) -> int:
        if self.inner_len is not None:
            if self.inner_len < 1:
                raise ValueError("inner loop length must be >= 1")
            return int(self.inner_len)
        return -(-n // self.k) if self.method.is_k_variant else n

    def subset_size(self, n: int) -> int:
        q = self.inner_length(n) if self.q is None else int(self.q)
        if not 1 <= q <= n:
            raise ValueError(f"q={q} outside [1, n={n}]")
        return q


def make_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Index-sampling and snapshot-sampling streams for one run."""
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.Philox(a)), np.random.Generator(np.random.Philox(b))


def geometric_sum(ratio: float, terms: int) -> float:
    """``sum_{t<terms} ratio**t`` by direct accumulation."""
    s, p = 0.0, 1.0
    for _ in range(terms):
        s += p
        p *= ratio
    return s


@dataclass
class InnerLoopState:
    method: Method
    x: np.ndarray
    alpha_bar: np.ndarray
    avg_accum: np.ndarray
    phi_alpha_sum: np.ndarray
    seen: np.ndarray
    phi_list: np.ndarray
    eta: float
    mu: float
    ell: int
    q: int
    decay: float
    s_ell: float
    rng: np.random.Generator
    snap_rng: np.random.Generator
    n_phi: int = 0
    t: int = 0
    m: int = 0
    samples: np.ndarray | None = None
    x_start: np.ndarray | None = None
    perm: np.ndarray | None = None
    block: int = 0

    @property
    def phi(self) -> np.ndarray:
        return self.phi_list[: self.n_phi]


@dataclass
class SagaTable:
    grads: np.ndarray
    alpha_bar: np.ndarray
    work: np.ndarray = field(init=False)

    def __post_init__(self):
        self.work = np.zeros(self.grads.shape[1])


@dataclass
class OuterLoopEvent:
    """Handed to callbacks just before snapshot points are reassigned."""

    m: int
    x_start: np.ndarray
    x_end: np.ndarray
    x_tilde: np.ndarray
    phi: np.ndarray
    store: SnapshotStore


@dataclass
class RunResult:
    x: np.ndarray
    rows: list[TraceRow]
    counters: CostCounters
    store: SnapshotStore | None
    state: InnerLoopState | None
    phi_sizes: list[int] = field(default_factory=list)
    grad_sq: list[list[float]] | None = None

    @property
    def stall_spans(self) -> list[StallSpan]:
        return stall_spans(self.counters)


def stall_spans(counters: CostCounters) -> list[StallSpan]:
    return [StallSpan(a, b, c) for a, b, c in counters.stalls if c != SETUP]


# --- state construction -------------------------------------------------


def init_state(config: OptimizerConfig, obj: FiniteSumObjective, counters: CostCounters, *, warm_start: bool = True):
    """Build the loop state and snapshot store at ``x0`` (default 0).

    With ``warm_start`` the mean anchor is ``grad f(x0)``, charged (n, n) as
    setup. Returns ``(state, store)``.
    """
    n, d = obj.n, obj.dim
    x0 = np.zeros(d) if config.x0 is None else np.array(config.x0, dtype=np.float64)
    if x0.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    method = config.method
    mu = obj.mu if config.mu is None else float(config.mu)
    ell = config.inner_length(n)
    q = config.subset_size(n) if method is Method.KSVRG_V2 else ell
    decay = 1.0 if method is Method.SVRG else 1.0 - config.eta * mu
    rng, snap_rng = make_rngs(config.seed)
    alpha_bar = np.zeros(d)
    if warm_start and method not in (Method.SGD, Method.SAGA):
        with counters.phase(SETUP):
            alpha_bar = obj.full_gradient(x0, counters)
    state = InnerLoopState(
        method=method,
        x=x0.copy(),
        alpha_bar=alpha_bar,
        avg_accum=np.zeros(d),
        phi_alpha_sum=np.zeros(d),
        seen=np.zeros(n, dtype=np.uint8),
        phi_list=np.zeros(ell, dtype=np.int64),
        eta=float(config.eta),
        mu=mu,
        ell=ell,
        q=q,
        decay=decay,
        s_ell=geometric_sum(decay, ell),
        rng=rng,
        snap_rng=snap_rng,
    )
    return state, SnapshotStore.init_uniform(n, x0)


def _begin(state: InnerLoopState, n: int) -> None:
    if state.t == 0 and state.samples is None:
        state.samples = state.rng.integers(0, n, size=state.ell, dtype=np.int64)
        state.x_start = state.x.copy()


def _kernel_args(obj: FiniteSumObjective):
    ds = obj.dataset
    return ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam


# --- variance-reduced inner loop ----------------------------------------


def _steps(state, obj, store, counters, count):
    if state.t + count > state.ell:
        raise RuntimeError("inner loop already complete")
    _begin(state, obj.n)
    chunk = state.samples[state.t : state.t + count]
    state.n_phi = kernels.inner_loop(
        *_kernel_args(obj), state.eta, state.decay,
        state.x, state.alpha_bar, store.vectors, store.assignment, chunk, state.avg_accum,
        state.method is Method.KSVRG_V1, state.phi_alpha_sum, state.seen, state.phi_list, state.n_phi,
    )
    state.t += count
    counters.charge(2 * count, count)


def inner_step(state: InnerLoopState, obj: FiniteSumObjective, store: SnapshotStore, counters: CostCounters) -> None:
    """One step ``x <- x - eta (grad f_i(x) - grad f_i(theta_i) + alpha_bar)``."""
    _steps(state, obj, store, counters, 1)


def run_inner(state: InnerLoopState, obj: FiniteSumObjective, store: SnapshotStore, counters: CostCounters) -> None:
    """Run the remaining steps of the current inner loop in one kernel call."""
    _steps(state, obj, store, counters, state.ell - state.t)


def update_direction(state: InnerLoopState, obj: FiniteSumObjective, store: SnapshotStore, i: int) -> np.ndarray:
    """The step direction the method would take with index ``i``. Free."""
    x = state.x
    return obj.component_gradient(i, x) - obj.component_gradient(i, store.lookup(i)) + state.alpha_bar


def _snapshot_average(state: InnerLoopState) -> np.ndarray:
    return state.avg_accum / state.s_ell


def _close_loop(state, store, phi, x_tilde, delta_sum, n, on_refresh):
    state.alpha_bar += delta_sum / n
    if on_refresh is not None:
        on_refresh(OuterLoopEvent(state.m, state.x_start, state.x.copy(), x_tilde, phi, store))
    store.reassign(phi, x_tilde)
    state.avg_accum[:] = 0.0
    state.t = 0
    state.samples = None
    state.m += 1


def _require_complete(state):
    if state.t != state.ell:
        raise RuntimeError(f"inner loop incomplete: t={state.t}, ell={state.ell}")


def finish_outer_v1(state, obj, store, counters, on_refresh: Callable | None = None) -> np.ndarray:
    """Close a k-SVRG-V1 outer loop; returns the new snapshot point.

    Only ``grad f_i(x_tilde)`` for ``i`` in Phi is computed: the old
    anchors were accumulated during the inner loop.
    """
    _require_complete(state)
    x_tilde = _snapshot_average(state)
    phi = state.phi.copy()
    with counters.phase(SNAPSHOT_REFRESH):
        new_sum = obj.gradient_sum(phi, x_tilde, counters)
    delta = new_sum - state.phi_alpha_sum
    state.seen[phi] = 0
    state.n_phi = 0
    state.phi_alpha_sum[:] = 0.0
    _close_loop(state, store, phi, x_tilde, delta, obj.n, on_refresh)
    return x_tilde


def _refresh_subset(state, obj, store, counters, phi, on_refresh):
    x_tilde = _snapshot_average(state)
    with counters.phase(SNAPSHOT_REFRESH):
        old_sum = obj.gradient_sum(phi, store.vectors, counters, slots=store.assignment[phi])
        new_sum = obj.gradient_sum(phi, x_tilde, counters)
    _close_loop(state, store, phi, x_tilde, new_sum - old_sum, obj.n, on_refresh)
    return x_tilde


def finish_outer_v2(state, obj, store, counters, q: int | None = None, on_refresh: Callable | None = None) -> np.ndarray:
    """Close a k-SVRG-V2(q) outer loop with ``q`` fresh indices (2q gradients)."""
    _require_complete(state)
    q = state.q if q is None else int(q)
    if not 1 <= q <= obj.n:
        raise ValueError(f"q={q} outside [1, n={obj.n}]")
    phi = np.sort(state.snap_rng.choice(obj.n, size=q, replace=False))
    return _refresh_subset(state, obj, store, counters, phi, on_refresh)


def next_block(state: InnerLoopState, n: int) -> np.ndarray:
    """Next slice of the current random permutation, reshuffling when used up."""
    if state.perm is None or state.block * state.ell >= n:
        state.perm = state.snap_rng.permutation(n)
        state.block = 0
    lo = state.block * state.ell
    state.block += 1
    return np.sort(state.perm[lo : lo + state.ell])


def finish_outer_k2(state, obj, store, counters, block=None, on_refresh: Callable | None = None) -> np.ndarray:
    """Close a k2-SVRG outer loop by moving one permutation block."""
    _require_complete(state)
    if block is None:
        block = next_block(state, obj.n)
    return _refresh_subset(state, obj, store, counters, np.asarray(block, dtype=np.int64), on_refresh)


# --- baselines ------------------------------------------------------------


def svrg_epoch(state, obj, store, counters, on_refresh: Callable | None = None) -> np.ndarray:
    """n steps against one anchor, then a full gradient at the averaged point.

    The iterate restarts from the new snapshot (the practical SVRG variant).
    """
    run_inner(state, obj, store, counters)
    x_tilde = _snapshot_average(state)
    with counters.phase(FULL_GRADIENT):
        state.alpha_bar = obj.full_gradient(x_tilde, counters)
    if on_refresh is not None:
        on_refresh(OuterLoopEvent(state.m, state.x_start, state.x.copy(), x_tilde, np.arange(obj.n), store))
    store.reassign(np.arange(obj.n), x_tilde)
    state.x[:] = x_tilde
    state.avg_accum[:] = 0.0
    state.t = 0
    state.samples = None
    state.m += 1
    return x_tilde


def init_saga_table(obj: FiniteSumObjective, x0: np.ndarray, counters: CostCounters) -> SagaTable:
    with counters.phase(SETUP):
        grads = obj.component_gradients(x0)
        counters.charge(obj.n, obj.n)
    return SagaTable(grads, grads.mean(axis=0))


def _saga_steps(state, table, obj, counters, samples):
    kernels.saga_loop(*_kernel_args(obj), state.eta, state.x, table.grads, table.alpha_bar, samples, table.work)
    counters.charge(len(samples), 2 * len(samples))


def saga_step(state: InnerLoopState, table: SagaTable, obj: FiniteSumObjective, counters: CostCounters) -> None:
    """One SAGA step: fresh gradient, then overwrite the table entry."""
    i = state.rng.integers(0, obj.n, size=1, dtype=np.int64)
    _saga_steps(state, table, obj, counters, i)


def saga_epoch(state, table, obj, counters) -> None:
    _saga_steps(state, table, obj, counters, state.rng.integers(0, obj.n, size=state.ell, dtype=np.int64))
    state.m += 1


def sgd_epoch(state, obj, counters) -> None:
    samples = state.rng.integers(0, obj.n, size=state.ell, dtype=np.int64)
    kernels.sgd_loop(*_kernel_args(obj), state.eta, state.x, samples)
    counters.charge(len(samples), len(samples))
    state.m += 1


# --- orchestration ------------------------------------------------------


def _trace_row(config, state, obj, counters, store, reference, t0, record_wall, q_col):
    x = state.x
    fval = obj.value(x)
    residual = fval - reference.f_star if reference is not None else math.nan
    return TraceRow(
        method=config.method.value,
        k=config.k,
        q=q_col,
        seed=config.seed,
        eta=float(config.eta),
        outer_loop=state.m,
        gc_total=counters.gc,
        er_total=counters.er,
        wall_ms=(time.perf_counter() - t0) * 1e3 if record_wall else math.nan,
        fval=fval,
        residual=residual,
        grad_norm=float(np.linalg.norm(obj.full_gradient(x))),
        live_snapshots=store.live_count if store is not None else 0,
    )


def run(
    config: OptimizerConfig,
    obj: FiniteSumObjective,
    *,
    reference=None,
    on_refresh: Callable | None = None,
    record_wall: bool = True,
    trace_grad_norms: bool = False,
) -> RunResult:
    """Warm-start at ``x0`` and run ``config.outer_loops`` outer loops.

    One :class:`TraceRow` is recorded after setup (outer loop 0) and after
    every outer loop. Baselines count one epoch of ``n`` steps as an outer
    loop. ``trace_grad_norms`` records ``||grad f(x_t)||^2`` before every
    inner step (free, but steps one at a time).
    """
    t0 = time.perf_counter()
    method = config.method
    counters = CostCounters()
    state, store = init_state(config, obj, counters)
    table = init_saga_table(obj, state.x, counters) if method is Method.SAGA else None
    if method in (Method.SGD, Method.SAGA):
        store = None
    q_col = state.q if method in (Method.KSVRG_V2, Method.K2SVRG) else 0
    rows = [_trace_row(config, state, obj, counters, store, reference, t0, record_wall, q_col)]
    phi_sizes: list[int] = []
    grad_sq: list[list[float]] | None = [] if trace_grad_norms else None

    for _ in range(config.outer_loops):
        if method is Method.SGD:
            sgd_epoch(state, obj, counters)
        elif method is Method.SAGA:
            saga_epoch(state, table, obj, counters)
        elif method is Method.SVRG:
            svrg_epoch(state, obj, store, counters, on_refresh)
        else:
            if trace_grad_norms:
                norms = []
                while state.t < state.ell:
                    g = obj.full_gradient(state.x)
                    norms.append(float(g @ g))
                    inner_step(state, obj, store, counters)
                grad_sq.append(norms)
            else:
                run_inner(state, obj, store, counters)
            if method is Method.KSVRG_V1:
                phi_sizes.append(state.n_phi)
                finish_outer_v1(state, obj, store, counters, on_refresh)
            elif method is Method.KSVRG_V2:
                phi_sizes.append(state.q)
                finish_outer_v2(state, obj, store, counters, on_refresh=on_refresh)
            else:
                block = next_block(state, obj.n)
                phi_sizes.append(len(block))
                finish_outer_k2(state, obj, store, counters, block, on_refresh=on_refresh)
        rows.append(_trace_row(config, state, obj, counters, store, reference, t0, record_wall, q_col))

    return RunResult(state.x, rows, counters, store, state, phi_sizes, grad_sq)


def predicted_gc(method: Method | str, n: int, ell: int, outer_loops: int, phi_sizes=None, q: int | None = None) -> int:
    """Closed-form #GC after setup plus ``outer_loops`` outer loops."""
    method = Method.parse(method)
    if method is Method.SGD:
        return outer_loops * n
    if method is Method.SAGA:
        return n + outer_loops * n
    if method is Method.SVRG:
        return n + outer_loops * (2 * n + n)
    if method is Method.KSVRG_V1:
        return n + sum(2 * ell + p for p in phi_sizes)
    if method is Method.KSVRG_V2:
        return n + outer_loops * (2 * ell + 2 * q)
    return n + sum(2 * ell + 2 * p for p in phi_sizes)


def predicted_er(method: Method | str, n: int, ell: int, outer_loops: int, phi_sizes=None, q: int | None = None) -> int:
    """Closed-form #ER matching :func:`predicted_gc`."""
    method = Method.parse(method)
    if method is Method.SGD:
        return outer_loops * n
    if method is Method.SAGA:
        return n + outer_loops * 2 * n
    if method is Method.SVRG:
        return n + outer_loops * (n + n)
    if method is Method.KSVRG_V1:
        return n + sum(ell + p for p in phi_sizes)
    if method is Method.KSVRG_V2:
        return n + outer_loops * (ell + 2 * q)
    return n + sum(ell + 2 * p for p in phi_sizes)
