from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from pdecontrol.fem import Grid2D, WindField, space_operators
from pdecontrol.precond import CNPreconditioner, PrecondConfig, probe
from pdecontrol.problems import cd_problem, heat_problem
from pdecontrol.sparse import materialize
from pdecontrol.timesys import TimeGrid, build_cn_system
from pdecontrol.verify import (build_S_int, check_corollary_bounds, check_lemma_11,
                               check_schur_bounds, emit_eig_scatter, proof_matrix, schur_pair,
                               time_factor)


def scalar_ops(ell):
    return SimpleNamespace(M=sp.csr_matrix([[1.0]]), L=sp.csr_matrix([[ell]]), n_x=1)


@given(ell=st.floats(0.0, 50.0))
def test_scalar_surrogate(ell):
    S, St = build_S_int(scalar_ops(ell), TimeGrid(2.0, 1), 1.0)
    assert np.isclose(S[0, 0], 1 + (ell + 1) ** 2, rtol=1e-14)
    assert np.isclose(St[0, 0], (ell + 2) ** 2, rtol=1e-14)
    chk = check_schur_bounds(scalar_ops(ell), TimeGrid(2.0, 1), 1.0)
    assert chk.passed
    assert np.isclose(chk.lam_min, (1 + (ell + 1) ** 2) / (ell + 2) ** 2, rtol=1e-13)


def test_mass_ratio_is_scaled_identity():
    M = space_operators(Grid2D(2)).M.toarray()
    tau, beta, nt = 0.25, 1e-3, 3
    M_D = tau / (2 * np.sqrt(beta)) * np.kron(np.eye(nt), M)
    A_D = tau / 2 * np.kron(np.eye(nt), M)
    assert np.allclose(M_D @ np.linalg.inv(A_D), np.eye(nt * M.shape[0]) / np.sqrt(beta),
                       rtol=0, atol=1e-12 / np.sqrt(beta))


def test_heat_matrices_spd_and_bounds():
    ops = space_operators(Grid2D(3))
    tg = TimeGrid.from_step(2.0, ops.grid.h)
    S, St = build_S_int(ops, tg, 1e-2)
    assert np.linalg.eigvalsh(S).min() > 0 and np.linalg.eigvalsh(St).min() > 0
    chk = check_schur_bounds(ops, tg, 1e-3)
    assert chk.passed and 0.5 - 1e-10 <= chk.lam_min and chk.lam_max <= 1 + 1e-10
    # independent eigensolver on the same pencil
    ref = sla.eigh(*build_S_int(ops, tg, 1e-3), eigvals_only=True)
    assert np.allclose(chk.eigenvalues, ref, atol=1e-10)


def test_size_guard():
    ops = space_operators(Grid2D(5))
    with pytest.raises(MemoryError):
        build_S_int(ops, TimeGrid(2.0, 16), 1e-2)


@pytest.mark.parametrize("eps,beta", [(None, 1e-2), (None, 1e-4), (1 / 20, 1e-2), (1 / 20, 1e-4)])
def test_corollary_transfer(eps, beta):
    if eps is None:
        ops, data = space_operators(Grid2D(3)), heat_problem(beta)
    else:
        ops = space_operators(Grid2D(3), eps, WindField.recirculating())
        data = cd_problem(beta, eps)
    s = build_cn_system(ops, TimeGrid.from_step(2.0, ops.grid.h), beta, data)
    chk = check_corollary_bounds(s)
    assert chk.passed
    assert chk.detail["gap"] <= 1e-9


def test_corollary_single_step_equality():
    ops = space_operators(Grid2D(2))
    s = build_cn_system(ops, TimeGrid(2.0, 1), 1e-2, heat_problem(1e-2))
    S, Shat = schur_pair(s)
    S_int, S_tilde = build_S_int(ops, s.time, 1e-2)
    assert np.allclose(S, S_int, rtol=0, atol=1e-12 * np.abs(S).max())
    assert np.allclose(Shat, S_tilde, rtol=0, atol=1e-12 * np.abs(Shat).max())


def test_exact_mass_solves_make_Ahat_exact():
    ops = space_operators(Grid2D(3))
    s = build_cn_system(ops, TimeGrid(2.0, 4), 1.0, heat_problem(1.0))
    pre = CNPreconditioner(s, PrecondConfig(exact_blocks=True))
    lu = spla.splu(ops.M.tocsc())
    pre.mass = lambda B: lu.solve(np.asarray(B))
    lam = np.linalg.eigvals(probe(pre.apply_Ahat_inv, s.half) @ materialize(s.A))
    assert np.allclose(lam, 1.0, atol=1e-10)


@pytest.mark.parametrize("steps", [20, 1])
def test_lemma_containment(steps):
    ops = space_operators(Grid2D(3))
    chk = check_lemma_11(ops, TimeGrid(2.0, 4), steps=steps)
    assert chk.passed
    m = chk.detail["mass_eigs"]
    if steps == 1:
        assert m.max() - m.min() > 0.5
    else:
        assert m.max() - m.min() < 1e-5


def test_rayleigh_quotient_lower_bound(rng):
    ops = space_operators(Grid2D(3), 1 / 100, WindField.recirculating())
    S, St = build_S_int(ops, TimeGrid(2.0, 4), 1e-3)
    for _ in range(200):
        x = rng.standard_normal(S.shape[0])
        assert (x @ S @ x) / (x @ St @ x) >= 0.5 - 1e-12


@pytest.mark.parametrize("eps", [None, 1 / 100])
def test_proof_matrix_psd(eps):
    ops = (space_operators(Grid2D(3)) if eps is None
           else space_operators(Grid2D(3), eps, WindField.recirculating()))
    Bm = proof_matrix(ops, TimeGrid.from_step(2.0, ops.grid.h), 1e-2)
    assert np.abs(Bm - Bm.T).max() <= 1e-14 * np.abs(Bm).max()
    assert np.linalg.eigvalsh(Bm).min() >= -1e-10


@pytest.mark.parametrize("n_t", range(2, 9))
def test_time_factor(n_t):
    T, T1 = time_factor(n_t)
    assert np.array_equal(T1, np.tril(T1))
    assert np.array_equal(T, T.T)
    assert np.linalg.eigvalsh(T).min() > 0


def test_scatter_output(tmp_path):
    p = tmp_path / "e.csv"
    emit_eig_scatter([], p)
    assert p.read_text() == "beta,index,eigenvalue\n"
    ops = space_operators(Grid2D(3), 1 / 100, WindField.recirculating())
    tg = TimeGrid(2.0, 4)
    res = [(b, check_schur_bounds(ops, tg, b).eigenvalues) for b in (1e-2, 1e-3)]
    emit_eig_scatter(res, p)
    first = p.read_bytes()
    emit_eig_scatter(res, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_bytes() == first
    rows = [l.split(",") for l in first.decode().splitlines()[1:]]
    assert len(rows) == 2 * ops.n_x * tg.n_t
    vals = np.array([float(r[2]) for r in rows])
    assert vals.min() >= 0.5 - 1e-10 and vals.max() <= 1 + 1e-10
