"""The compiled kernels must agree with their numpy twins."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddcmix import _pykernels as py
from ddcmix import kernels

ck = pytest.importorskip("ddcmix._ckernels")

finite = st.floats(-50, 50, allow_nan=False)
matrices = st.integers(1, 6).flatmap(
    lambda k: arrays(np.float64, st.tuples(st.integers(1, 12), st.just(k)), elements=finite))


@given(matrices, st.sampled_from([0.0, 1e-12, 1e-3]))
def test_softmax_rows_match(v, floor):
    np.testing.assert_allclose(ck.softmax_rows(v, floor), py.softmax_rows(v, floor), rtol=1e-12, atol=1e-300)


@given(matrices)
def test_logsumexp_rows_match(v):
    np.testing.assert_allclose(ck.logsumexp_rows(v), py.logsumexp_rows(v), rtol=1e-13, atol=1e-13)


def test_softmax_extreme_values():
    v = np.array([[1000.0, 0.0], [-1000.0, -1000.0], [700.0, 710.0]])
    np.testing.assert_allclose(ck.softmax_rows(v, 1e-12), py.softmax_rows(v, 1e-12), rtol=1e-14)
    np.testing.assert_allclose(ck.logsumexp_rows(v), py.logsumexp_rows(v), rtol=1e-14)


@given(st.integers(0, 2**63 - 1), st.integers(0, 1000), st.integers(0, 3))
def test_counter_uniforms_bitwise(seed, period, stream):
    markets = np.arange(0, 257, 3)
    a = ck.counter_uniforms(seed, markets, period, stream)
    b = py.counter_uniforms(seed, markets, period, stream)
    assert np.array_equal(a, b)
    assert np.all((a >= 0.0) & (a < 1.0))


@settings(max_examples=50)
@given(st.integers(2, 6), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_draw_categorical_match(k, n, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(k), size=n)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(n)
    u[: n // 3] = cdf[: n // 3, 0]  # ties at the boundary
    assert np.array_equal(ck.draw_categorical(cdf, u), py.draw_categorical(cdf, u))


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_givens_step_match(k, m, seed):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(k, m + 1, m))
    g = np.zeros((k, m + 1))
    g[:, 0] = rng.random(k) + 0.5
    states = [(H.copy(), np.zeros((k, m)), np.zeros((k, m)), g.copy()) for _ in range(2)]
    cols = np.arange(k)[::2] if k > 1 else np.arange(1)
    for j in range(m):
        outs = [mod.givens_step(*s, j, cols) for mod, s in zip((ck, py), states)]
        np.testing.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-14)
    for a, b in zip(*states):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_givens_step_triangularizes():
    rng = np.random.default_rng(0)
    m = 4
    H0 = np.triu(rng.normal(size=(1, m + 1, m)), -1)  # upper Hessenberg
    H = H0.copy()
    cs, sn, g = np.zeros((1, m)), np.zeros((1, m)), np.zeros((1, m + 1))
    g[0, 0] = 1.0
    for j in range(m):
        res = kernels.givens_step(H, cs, sn, g, j, np.array([0]))
    assert np.allclose(np.tril(H[0, :m], -1), 0.0)
    assert np.allclose(H[0, m], 0.0)
    # residual of the least-squares problem min |e1 - H0 y|
    y = np.linalg.lstsq(H0[0], np.eye(m + 1)[0], rcond=None)[0]
    assert res[0] == pytest.approx(np.linalg.norm(np.eye(m + 1)[0] - H0[0] @ y), rel=1e-10)


def test_pure_python_switch():
    env = {**os.environ, "DDCMIX_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import ddcmix.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND == "compiled"


def test_simulation_identical_across_backends():
    code = ("import hashlib, sys\n"
            "from ddcmix.dgp import EntryExitSpec, build_entry_exit_model, solve_true_ccps, simulate_panel\n"
            "m = build_entry_exit_model(EntryExitSpec(dependence='FD', n_grid=2))\n"
            "d = simulate_panel(m, solve_true_ccps(m), m.type_weights, 50, 4, 9, 5)\n"
            "sys.stdout.write(hashlib.sha256(d.actions.tobytes() + d.states.tobytes()).hexdigest())\n")
    runs = []
    for flag in ("0", "1"):
        env = {**os.environ, "DDCMIX_PURE_PYTHON": flag}
        runs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                   check=True).stdout)
    assert runs[0] == runs[1]


def test_read_only_inputs_accepted():
    cdf = np.broadcast_to(np.cumsum([0.2, 0.8]), (1, 2))
    u = np.array([0.5])
    u.setflags(write=False)
    v = np.zeros((1, 3))
    v.setflags(write=False)
    markets = np.arange(3)
    markets.setflags(write=False)
    for mod in (ck, py):
        assert mod.draw_categorical(cdf, u).tolist() == [1]
        np.testing.assert_allclose(mod.softmax_rows(v, 0.0), 1 / 3)
        np.testing.assert_allclose(mod.logsumexp_rows(v), np.log(3))
        assert mod.counter_uniforms(1, markets, 0, 0).shape == (3,)
