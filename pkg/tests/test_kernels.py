"""Parity between the compiled kernels and the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from warmflow._kernels import _pure, backend_name

try:
    from warmflow._kernels import _native
except ImportError:
    _native = None

needs_native = pytest.mark.skipif(_native is None,
                                  reason="compiled extension not built")


def random_csr_pattern(rng, n_blocks):
    """Random symmetric block pattern as CSR indptr/indices over 2n rows."""
    import scipy.sparse as sp
    density = min(1.0, 4.0 / n_blocks)
    mask = rng.random((n_blocks, n_blocks)) < density
    mask |= mask.T
    np.fill_diagonal(mask, True)
    block = np.ones((2, 2), dtype=bool)
    dense = np.kron(mask, block)
    csr = sp.csr_matrix(dense.astype(np.float64))
    return csr.indptr.astype(np.int32), csr.indices.astype(np.int32)


@needs_native
class TestScatterParity:
    def test_random_systems(self):
        from warmflow.cgrf import AssemblyPlan
        rng = np.random.default_rng(0)
        for trial in range(10):
            n = int(rng.integers(2, 15))
            m = int(rng.integers(1, 3 * n))
            pairs = np.stack([rng.integers(0, n, size=m),
                              rng.integers(0, n, size=m)], axis=1)
            pairs = pairs[pairs[:, 0] != pairs[:, 1]]
            if len(pairs) == 0:
                pairs = np.array([[0, 1]])
            plan = AssemblyPlan(n, pairs.astype(np.int64))
            node_out = rng.normal(size=(n, 5))
            edge_out = rng.normal(size=(len(pairs), 4))
            zi = (rng.random(n) < 0.3).astype(np.uint8)

            outs = []
            for impl in (_pure, _native):
                data = np.zeros(plan.nnz)
                eta = np.zeros(2 * n)
                impl.scatter_system(node_out, edge_out, plan.node_pos,
                                    plan.edge_pos_st, plan.edge_pos_ts, zi,
                                    plan.diag_pos, 1e-6, data, eta)
                outs.append((data, eta))
            np.testing.assert_array_equal(outs[0][0], outs[1][0])
            np.testing.assert_array_equal(outs[0][1], outs[1][1])


@needs_native
class TestGatherParity:
    def test_random_adjoints(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            n = int(rng.integers(2, 12))
            m = int(rng.integers(1, 2 * n))
            lam = rng.normal(size=2 * n)
            mu = rng.normal(size=2 * n)
            e_src = rng.integers(0, n, size=m).astype(np.int32)
            e_dst = rng.integers(0, n, size=m).astype(np.int32)
            zi = (rng.random(n) < 0.3).astype(np.uint8)
            outs = []
            for impl in (_pure, _native):
                dnode = np.zeros((n, 5))
                dedge = np.zeros((m, 4))
                impl.gather_grads(lam, mu, np.ascontiguousarray(e_src),
                                  np.ascontiguousarray(e_dst), zi, dnode,
                                  dedge)
                outs.append((dnode, dedge))
            np.testing.assert_array_equal(outs[0][0], outs[1][0])
            np.testing.assert_array_equal(outs[0][1], outs[1][1])


@needs_native
class TestNewtonFillParity:
    def test_full_solver_path(self, case14):
        # drive both backends through the public solver and compare states
        env = dict(os.environ, WARMFLOW_PURE="1")
        code = (
            "from warmflow import parse_matpower, solve_nr, flat_start, "
            "SolveOptions\n"
            "import numpy as np, sys\n"
            "case = parse_matpower(open('data/case14.m').read())\n"
            "sol, rep = solve_nr(case, flat_start(case), SolveOptions())\n"
            "np.save(sys.argv[1], np.stack([sol.v_real, sol.v_imag]))\n"
            "print(rep.iterations)\n"
        )
        import tempfile
        with tempfile.TemporaryDirectory() as td:
            out_pure = os.path.join(td, "pure.npy")
            out_native = os.path.join(td, "native.npy")
            r1 = subprocess.run([sys.executable, "-c", code, out_pure],
                                env=env, capture_output=True, text=True,
                                cwd=os.path.dirname(os.path.dirname(
                                    os.path.abspath(__file__))))
            r2 = subprocess.run([sys.executable, "-c", code, out_native],
                                capture_output=True, text=True,
                                cwd=os.path.dirname(os.path.dirname(
                                    os.path.abspath(__file__))))
            assert r1.returncode == 0, r1.stderr
            assert r2.returncode == 0, r2.stderr
            assert r1.stdout == r2.stdout  # same iteration count
            a, b = np.load(out_pure), np.load(out_native)
            np.testing.assert_allclose(a, b, atol=1e-13, rtol=0)


class TestBackendSelection:
    def test_default_backend_reported(self):
        assert backend_name() in ("native", "pure")

    def test_env_override_forces_pure(self):
        code = ("import warmflow._kernels as k\n"
                "print(k.backend_name())\n")
        out = subprocess.run([sys.executable, "-c", code],
                             env=dict(os.environ, WARMFLOW_PURE="1"),
                             capture_output=True, text=True)
        assert out.stdout.strip() == "pure"

    @needs_native
    def test_native_preferred_when_available(self):
        out = subprocess.run([sys.executable, "-c",
                              "import warmflow._kernels as k\n"
                              "print(k.backend_name())\n"],
                             env={k: v for k, v in os.environ.items()
                                  if k != "WARMFLOW_PURE"},
                             capture_output=True, text=True)
        assert out.stdout.strip() == "native"
