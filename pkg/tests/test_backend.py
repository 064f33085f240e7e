import os
import subprocess
import sys

import numpy as np
import pytest

from otmatch import _backend, _fallback

compiled = pytest.importorskip("otmatch._kernels")


def _problem(seed, n=40, m=60, scale=1.0):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(size=(n, 2)), rng.uniform(size=(m, 2))
    C = np.ascontiguousarray(scale * ((x[:, None] - y[None]) ** 2).sum(-1))
    return C, np.full(n, -np.log(n)), np.full(m, -np.log(m))


@pytest.mark.parametrize("eps, damp, bal", [(0.1, 1.0, True), (0.01, 1.0, True),
                                            (0.05, 1 / 1.05, False), (1e-3, 1 / 1.001, False)])
def test_compiled_matches_fallback(eps, damp, bal):
    for seed in range(3):
        C, la, lb = _problem(seed)
        out = []
        for fn in (compiled.ipfp2, _fallback.ipfp2):
            f, g = np.zeros(C.shape[0]), np.zeros(C.shape[1])
            it, change, status = fn(C, la, lb, f, g, eps, damp, damp, bal, 1e-11, 50000)
            out.append((f, g, it, status))
        (f1, g1, i1, s1), (f2, g2, i2, s2) = out
        assert s1 == s2 == 0
        assert abs(i1 - i2) <= 1
        np.testing.assert_allclose(f1, f2, atol=1e-9)
        np.testing.assert_allclose(g1, g2, atol=1e-9)


def test_truncation_far_entries():
    C, la, lb = _problem(5, 30, 30, scale=500.0)
    res = []
    for fn in (compiled.ipfp2, _fallback.ipfp2):
        f, g = np.zeros(30), np.zeros(30)
        fn(C, la, lb, f, g, 1.0, 0.5, 0.5, False, 1e-12, 10000)
        res.append(np.r_[f, g])
    np.testing.assert_allclose(res[0], res[1], atol=1e-9)


def test_bad_arguments():
    C, la, lb = _problem(0, 3, 3)
    for fn in (compiled.ipfp2, _fallback.ipfp2):
        with pytest.raises(ValueError):
            fn(C, la, lb, np.zeros(3), np.zeros(3), 0.1, 1.0, 1.0, True, 1e-9, 0)


def test_env_selects_fallback():
    env = dict(os.environ, OTMATCH_BACKEND="python")
    res = subprocess.run([sys.executable, "-c", "import otmatch; print(otmatch.BACKEND)"],
                         capture_output=True, text=True, env=env)
    assert res.stdout.strip() == "python"
    assert _backend.BACKEND == "compiled"
