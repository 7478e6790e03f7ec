"""The compiled kernels and the pure-Python fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from obslab import _backend, _pykernels

compiled_only = pytest.mark.skipif(not _backend.COMPILED, reason="extension not built")


def backends():
    out = [_pykernels]
    if _backend.COMPILED:
        out.append(_backend.get_kernels(compiled=True))
    return out


def csr(A):
    A = sp.csr_matrix(A)
    return (A.indptr.astype(np.intc), A.indices.astype(np.intc), A.data.astype(float))


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


@pytest.mark.parametrize("k", backends(), ids=lambda k: k.__name__)
def test_matvec(k, rng):
    A = sp.random(30, 20, density=0.3, random_state=3, format="csr")
    x = rng.standard_normal(20)
    assert np.allclose(k.csr_matvec(*csr(A), x), A @ x, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("k", backends(), ids=lambda k: k.__name__)
def test_cg_shifted(k, rng):
    A = laplacian_1d(60)
    mass = rng.uniform(0.5, 2.0, 60)
    b = rng.standard_normal(60)
    x = np.zeros(60)
    iters, relres = k.cg_shifted(*csr(A), mass, 0.5, b, x, 1e-12, 1000)
    assert relres <= 1e-12
    assert np.allclose((A + 0.5 * sp.diags(mass)) @ x, b, atol=1e-10)
    z = np.ones(60)
    assert k.cg_shifted(*csr(A), mass, 0.5, np.zeros(60), z, 1e-12, 10) == (0, 0.0)
    assert np.all(z == 0)


@pytest.mark.parametrize("k", backends(), ids=lambda k: k.__name__)
def test_radial_shoot_sine(k):
    # m=1 reduces to u'' = -lam u: zero of sin(sqrt(lam)(r - r0)) after pi/sqrt(lam)
    lam = (np.pi / 2) ** 2
    u, w, zeros = k.radial_shoot(lam, 1, 1.0, 2.0, 4000)
    assert zeros == 0
    assert w == pytest.approx(0.0, abs=1e-6)


@compiled_only
def test_backends_agree_bitwise_close(rng):
    ck = _backend.get_kernels(compiled=True)
    A = laplacian_1d(80)
    mass = np.ones(80)
    b = rng.standard_normal(80)
    x1, x2 = np.zeros(80), np.zeros(80)
    r1 = ck.cg_shifted(*csr(A), mass, 1.0, b, x1, 1e-13, 500)
    r2 = _pykernels.cg_shifted(*csr(A), mass, 1.0, b, x2, 1e-13, 500)
    assert r1[0] == r2[0]
    assert np.allclose(x1, x2, rtol=1e-12, atol=1e-14)
    s1 = ck.radial_shoot(30.0, 3, 0.01, 0.1, 2000)
    s2 = _pykernels.radial_shoot(30.0, 3, 0.01, 0.1, 2000)
    assert np.allclose(s1[:2], s2[:2], rtol=1e-12) and s1[2] == s2[2]


def test_environment_forces_fallback():
    code = "from obslab import _backend; print(_backend.COMPILED, _backend.kernels.__name__)"
    env = dict(os.environ, OBSLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    assert out == ["False", "obslab._pykernels"]


def test_benchmark_runs(capsys):
    import importlib.util
    import pathlib

    path = pathlib.Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"
    loader = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(loader)
    loader.loader.exec_module(bench)
    bench.main(["--n", "16", "--repeat", "1"])
    out = capsys.readouterr().out
    assert all(name in out for name in ("csr_matvec", "cg_shifted", "radial_shoot"))
