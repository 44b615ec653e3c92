import numpy as np
import pytest

from ksvrg import kernels
from ksvrg.data import synth_logistic
from ksvrg.objective import FiniteSumObjective, Loss

BACKENDS = kernels.available_backends()


def _problem(loss, n=40, d=7, seed=0):
    ds = synth_logistic(n, d, seed)
    return FiniteSumObjective(ds, loss, 0.05)


def _inner(mod, obj, track):
    ds = obj.dataset
    rng = np.random.default_rng(1)
    d = obj.dim
    x = rng.standard_normal(d)
    ab = rng.standard_normal(d) * 0.1
    snaps = rng.standard_normal((3, d))
    assign = rng.integers(0, 3, size=obj.n).astype(np.int32)
    samples = rng.integers(0, obj.n, size=60).astype(np.int64)
    acc = np.zeros(d)
    phi_sum = np.zeros(d)
    seen = np.zeros(obj.n, dtype=np.uint8)
    phi_list = np.zeros(60, dtype=np.int64)
    n_phi = mod.inner_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.1, 0.99,
                           x, ab, snaps, assign, samples, acc, track, phi_sum, seen, phi_list, 0)
    return x, acc, phi_sum, phi_list[:n_phi], samples, snaps, assign


def test_backend_selected():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@pytest.mark.parametrize("loss", list(Loss))
def test_backends_agree_inner(loss):
    obj = _problem(loss)
    outs = [_inner(mod, obj, True) for mod in BACKENDS.values()]
    for o in outs[1:]:
        for a, b in zip(outs[0][:4], o[:4]):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_inner_phi_tracking(name):
    obj = _problem(Loss.LOGISTIC)
    x, acc, phi_sum, phi, samples, snaps, assign = _inner(BACKENDS[name], obj, True)
    # first-occurrence order of the samples
    _, first = np.unique(samples, return_index=True)
    assert np.array_equal(phi, samples[np.sort(first)])
    expect = sum(obj.component_gradient(int(i), snaps[assign[i]]) for i in phi)
    np.testing.assert_allclose(phi_sum, expect, rtol=1e-12, atol=1e-13)
    _, _, untracked, none, *_ = _inner(BACKENDS[name], obj, False)
    assert none.size == 0 and not untracked.any()


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_inner_deterministic(name):
    obj = _problem(Loss.LEAST_SQUARES)
    a = _inner(BACKENDS[name], obj, True)
    b = _inner(BACKENDS[name], obj, True)
    for u, v in zip(a[:4], b[:4]):
        assert np.array_equal(u, v)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_inner_matches_direct_update(name):
    obj = _problem(Loss.LOGISTIC, n=10, d=3)
    ds = obj.dataset
    d = obj.dim
    x = np.array([0.3, -0.2, 0.1])
    ab = np.array([0.01, 0.02, -0.03])
    snaps = np.array([[0.5, 0.5, 0.5]])
    assign = np.zeros(obj.n, dtype=np.int32)
    samples = np.array([4], dtype=np.int64)
    expect = x - 0.1 * (obj.component_gradient(4, x) - obj.component_gradient(4, snaps[0]) + ab)
    acc = np.ones(d)
    BACKENDS[name].inner_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.1, 0.5,
                              x0 := x.copy(), ab, snaps, assign, samples, acc, False,
                              np.zeros(d), np.zeros(obj.n, dtype=np.uint8), np.zeros(1, dtype=np.int64), 0)
    np.testing.assert_allclose(x0, expect, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(acc, 0.5 + x, rtol=1e-15)


def _saga(mod, obj):
    ds = obj.dataset
    x = np.zeros(obj.dim)
    table = obj.component_gradients(x)
    ab = table.mean(axis=0)
    samples = np.random.default_rng(2).integers(0, obj.n, size=80).astype(np.int64)
    mod.saga_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.2, x, table, ab, samples, np.zeros(obj.dim))
    return x, table, ab


def _sgd(mod, obj):
    ds = obj.dataset
    x = np.zeros(obj.dim)
    samples = np.random.default_rng(3).integers(0, obj.n, size=80).astype(np.int64)
    mod.sgd_loop(ds.indptr, ds.indices, ds.data, ds.labels, obj.loss.code, obj.lam, 0.2, x, samples)
    return (x,)


@pytest.mark.parametrize("fn", [_saga, _sgd])
@pytest.mark.parametrize("loss", list(Loss))
def test_backends_agree_baselines(fn, loss):
    obj = _problem(loss)
    outs = [fn(mod, obj) for mod in BACKENDS.values()]
    for o in outs[1:]:
        for a, b in zip(outs[0], o):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_saga_table_mean(name):
    obj = _problem(Loss.LOGISTIC)
    x, table, ab = _saga(BACKENDS[name], obj)
    np.testing.assert_allclose(ab, table.mean(axis=0), rtol=1e-10, atol=1e-14)


def test_forced_python_backend(monkeypatch):
    import importlib

    monkeypatch.setenv("KSVRG_BACKEND", "python")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("KSVRG_BACKEND")
        importlib.reload(kernels)


def test_unknown_backend_rejected(monkeypatch):
    import importlib

    monkeypatch.setenv("KSVRG_BACKEND", "fortran")
    with pytest.raises(ImportError):
        importlib.reload(kernels)
    monkeypatch.delenv("KSVRG_BACKEND")
    importlib.reload(kernels)


def test_fallback_end_to_end():
    import os
    import subprocess
    import sys

    code = (
        "import numpy as np, ksvrg.kernels as k\n"
        "from ksvrg.data import synth_logistic\n"
        "from ksvrg.objective import FiniteSumObjective\n"
        "from ksvrg.optim import OptimizerConfig, run\n"
        "obj = FiniteSumObjective(synth_logistic(60, 4, 1))\n"
        "r = run(OptimizerConfig('ksvrg-v1', eta=0.2, k=3, outer_loops=5, seed=2), obj, record_wall=False)\n"
        "print(k.BACKEND, *(repr(float(v)) for v in r.x))\n"
    )
    outs = {}
    for name in BACKENDS:
        env = dict(os.environ, KSVRG_BACKEND=name)
        proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
        tag, *vals = proc.stdout.split()
        assert tag == name
        outs[name] = np.array([float(v) for v in vals])
    ref = outs["python"]
    for v in outs.values():
        np.testing.assert_allclose(v, ref, rtol=1e-12, atol=1e-14)
