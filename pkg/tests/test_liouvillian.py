import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from dqlm.lattice import SparseOperator, build_layout, single_spin_operator
from dqlm.liouvillian import (
    AssemblyError,
    assemble,
    assemble_twisted,
    conjugate_pair_vector,
    devectorize,
    devectorize_from,
    diagonal_expectation,
    lindblad_apply,
    matrix_free,
    sector_trace,
    trace_vector,
    vectorize,
    vectorize_into,
    weak_symmetry_generator,
)
from dqlm.models import JumpSpec, ModelSpec
from dqlm.symmetry import (
    DoubleSectorBasis,
    SectorLeakageError,
    SectorSpec,
    enumerate_sector,
    gauss_generator,
    weak_sector,
)


def single_link_spec(gu, gd):
    # L=2 chain has one link; drop the Hamiltonian to isolate the link
    lay = build_layout("chain-obc", 2)
    return ModelSpec(lay, "none", jumps=(JumpSpec("biased", gamma_up=gu, gamma_down=gd),))


def hand_built_link_superop(gu, gd):
    """Independent 4x4 construction on pair order (00,01,10,11), 0 = down:
    d rho_00 = -2 gu rho_00 + 2 gd rho_11 ; coherences decay at gu+gd."""
    s = gu + gd
    return np.array([
        [-2 * gu, 0, 0, 2 * gd],
        [0, -s, 0, 0],
        [0, 0, -s, 0],
        [2 * gu, 0, 0, -2 * gd],
    ], dtype=complex)


def test_vectorize_conventions():
    eye = SparseOperator(sp.identity(2, format="csr"), "spins:1")
    assert np.array_equal(vectorize(eye).vector, [1, 0, 0, 1])
    rng = np.random.default_rng(2)
    dim = 4
    a, b, r = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
               for _ in range(3))
    lhs = (a @ r @ b).reshape(-1)
    rhs = np.kron(a, b.T) @ r.reshape(-1)
    assert np.linalg.norm(lhs - rhs) < 1e-13
    # gain-term orientation: vec(s+ rho s-) = (s+ (x) s+) vec(rho)
    sp_ = single_spin_operator(1, 0, "+").toarray()
    sm = single_spin_operator(1, 0, "-").toarray()
    lhs = (sp_ @ r[:2, :2] @ sm).reshape(-1)
    rhs = np.kron(sp_, sp_) @ r[:2, :2].reshape(-1)
    assert np.linalg.norm(lhs - rhs) < 1e-14
    state = vectorize(SparseOperator(np.array([[0.5, 0.2], [0.1, 0.5]]), "spins:1"))
    assert state.trace == pytest.approx(1.0)
    assert state.herm_defect == pytest.approx(np.sqrt(2) * 0.1)
    back = devectorize(state.vector, 2, "spins:1")
    assert back.toarray()[0, 1] == pytest.approx(0.2)


def test_single_link_superoperator_matches_hand_oracle():
    gu, gd = 2.4, 1.6
    lv = assemble(single_link_spec(gu, gd))
    # the register has 3 spins; restrict to the link by tracing structure:
    # instead compare on the full register against the hand kron
    hand_link = hand_built_link_superop(gu, gd)
    ev_hand = np.sort_complex(np.linalg.eigvals(hand_link))
    # analytic eigenvalues of the link generator
    s = gu + gd
    assert np.allclose(np.sort(ev_hand.real), [-2 * s, -s, -s, 0], atol=1e-12)
    # full-register spectrum is the link spectrum fattened by the idle sites:
    # each idle ket/bra pair contributes a zero mode factor, so the distinct
    # eigenvalues must coincide
    ev_full = np.linalg.eigvals(lv.matrix.toarray())
    distinct = np.unique(np.round(np.sort(ev_full.real), 10))
    assert np.allclose(distinct, [-2 * s, -s, 0], atol=1e-9)
    # exact entrywise check on a genuine single-spin model via the pair basis
    lay = lv.sector  # none
    assert lay is None


def test_single_link_entrywise_via_sector():
    gu, gd = 3.0, 1.0
    spec = single_link_spec(gu, gd)
    layout = spec.layout
    # pairs over the link bit only, sites pinned down: states 0 and 2**1
    link_states = np.array([0, 1 << layout.link_slot(1)])
    kets, bras = np.meshgrid(link_states, link_states, indexing="ij")
    dsec = DoubleSectorBasis(layout, kets.ravel(), bras.ravel(), "link-only")
    lv = assemble(spec, sector=dsec)
    hand = hand_built_link_superop(gu, gd)
    assert np.linalg.norm(lv.matrix.toarray() - hand) < 1e-13


def test_relaxation_rate_pins_convention():
    gu, gd = 2.4, 1.6
    hand = hand_built_link_superop(gu, gd)
    v0 = np.array([1.0, 0, 0, 0], dtype=complex)  # spin down
    seq = (gu - gd) / (2 * (gu + gd))
    for t in (0.23, 0.77):
        v = scipy.linalg.expm(hand * t) @ v0
        sz = -0.5 * v[0] + 0.5 * v[3]
        expected = seq + (-0.5 - seq) * np.exp(-2 * (gu + gd) * t)
        assert sz == pytest.approx(expected, abs=1e-12)


def full_specs():
    l3 = build_layout("chain-obc", 3)
    p3 = build_layout("chain-pbc", 3)
    return [
        ModelSpec(l3, "qlm", J=1.0, jumps=(JumpSpec("biased", gamma_up=2.4, gamma_down=1.6),)),
        ModelSpec(p3, "qlm", J=0.7, jumps=(
            JumpSpec("x-like", gamma_up=1.0, gamma_down=0.5),
            JumpSpec("gauge-fix", strength=0.8))),
        ModelSpec(l3, "qlm", J=1.0, jumps=(JumpSpec("dephasing", gamma=1.3),)),
    ]


def test_trace_functional_is_left_null():
    for spec in full_specs():
        lv = assemble(spec)
        tvec = trace_vector(lv.dim)
        assert np.linalg.norm(lv.matrix.transpose() @ tvec) < 1e-12


def test_assembled_matches_operator_form_full_and_sector():
    rng = np.random.default_rng(7)
    spec = full_specs()[0]
    lv = assemble(spec)
    n = spec.layout.nstates
    rho = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho_op = SparseOperator(rho, spec.layout.basis_tag)
    direct = lindblad_apply(lv.hamiltonian, lv.jumps, rho_op).toarray()
    via_matrix = (lv.matrix @ rho.reshape(-1)).reshape(n, n)
    assert np.linalg.norm(direct - via_matrix) < 1e-10
    # matrix-free wrapper agrees and refuses vector application
    mf = matrix_free(spec)
    assert (mf.apply_operator(rho_op) - lindblad_apply(lv.hamiltonian, lv.jumps, rho_op)).frobenius_norm() < 1e-12
    with pytest.raises(AssemblyError):
        mf.apply(np.zeros(4))
    # sector path
    dsec = weak_sector(spec.layout, n_particles=2)
    lv_sec = assemble(spec, sector=dsec)
    v = rng.standard_normal(dsec.dim) + 1j * rng.standard_normal(dsec.dim)
    rho_sec = devectorize_from(v, dsec)
    direct = lindblad_apply(lv.hamiltonian, lv.jumps, rho_sec)
    expected = vectorize_into(direct, dsec).vector
    assert np.linalg.norm(lv_sec.apply(v) - expected) < 1e-10


def test_sector_leakage_detected():
    spec = full_specs()[0]
    layout = spec.layout
    g_states = enumerate_sector(
        layout, SectorSpec(gauge=(0, 1, 0))).states
    if g_states.size == 0:
        g_states = enumerate_sector(layout, SectorSpec(gauge=(0, -1, 0))).states
    kets, bras = np.meshgrid(g_states, g_states, indexing="ij")
    frozen_g = DoubleSectorBasis(layout, kets.ravel(), bras.ravel(), "one-g")
    with pytest.raises(SectorLeakageError):
        assemble(spec, sector=frozen_g)


def test_weak_symmetry_generators_commute():
    spec = full_specs()[0]
    lv = assemble(spec)
    for n in range(1, 4):
        g = weak_symmetry_generator(gauss_generator(spec.layout, n))
        comm = g @ lv.matrix - lv.matrix @ g
        assert (np.abs(comm.data).max() if comm.nnz else 0.0) < 1e-12


def test_detailed_balance_similarity():
    # dissipator-only chain: conjugating by T_s (x) I on the links gives
    # the conjugate transpose of the assembled generator
    gu, gd = 2.4, 1.6
    beta = gu / gd
    lay = build_layout("chain-obc", 3)
    spec = ModelSpec(lay, "none", jumps=(JumpSpec("biased", gamma_up=gu, gamma_down=gd),))
    lv = assemble(spec)
    idx = np.arange(lay.nstates)
    log_t = np.zeros(lay.nstates)
    for m in (1, 2):
        log_t += -np.log(beta) * (((idx >> lay.link_slot(m)) & 1) - 0.5)
    t_diag = np.exp(log_t)
    d = sp.diags(np.kron(t_diag, np.ones(lay.nstates)), format="csr")
    d_inv = sp.diags(np.kron(1.0 / t_diag, np.ones(lay.nstates)), format="csr")
    lhs = (d @ lv.matrix @ d_inv).toarray()
    rhs = lv.matrix.conjugate().transpose().toarray()
    assert np.linalg.norm(lhs - rhs) < 1e-10


def test_twisted_variants():
    lay = build_layout("chain-pbc", 3)
    spec = ModelSpec(lay, "qlm", J=1.0, jumps=(
        JumpSpec("biased", gamma_up=2.4, gamma_down=1.6),))
    plain = assemble(spec)
    double0 = assemble_twisted(spec, 0.0, "double-space")
    diff = double0.matrix - plain.matrix
    assert (np.abs(diff.data).max() if diff.nnz else 0.0) < 1e-14
    # proper Lindblad variant keeps the trace functional at any twist
    lind = assemble_twisted(spec, 1.1, "lindblad")
    tvec = trace_vector(lind.dim)
    assert np.linalg.norm(lind.matrix.transpose() @ tvec) < 1e-12
    # the double-space variant does not (it is not of Lindblad form)
    dbl = assemble_twisted(spec, np.pi / 2, "double-space")
    assert np.linalg.norm(dbl.matrix.transpose() @ tvec) > 1e-2
    with pytest.raises(AssemblyError):
        assemble_twisted(ModelSpec(build_layout("chain-obc", 3), "qlm"), 0.1, "lindblad")
    with pytest.raises(AssemblyError):
        assemble_twisted(spec, 0.1, "bogus")
    with pytest.raises(AssemblyError):
        assemble_twisted(ModelSpec(lay, "qlm", twist=0.3), 0.1, "lindblad")


def test_pair_vector_utilities():
    lay = build_layout("chain-obc", 3)
    dsec = weak_sector(lay, n_particles=1)
    rng = np.random.default_rng(4)
    v = rng.standard_normal(dsec.dim) + 1j * rng.standard_normal(dsec.dim)
    rho = devectorize_from(v, dsec)
    state = vectorize_into(rho, dsec)
    assert np.linalg.norm(state.vector - v) < 1e-14
    assert state.trace == pytest.approx(sector_trace(v, dsec))
    # conjugation is an involution matching the dense conjugate transpose
    w = conjugate_pair_vector(v, dsec)
    assert np.linalg.norm(conjugate_pair_vector(w, dsec) - v) == 0.0
    assert (devectorize_from(w, dsec) - rho.adjoint()).frobenius_norm() < 1e-14
    # diagonal expectation against the dense trace
    diag = np.arange(lay.nstates, dtype=float)
    dense = rho.toarray()
    want = np.trace(dense @ np.diag(diag))
    assert diagonal_expectation(v, dsec, diag) == pytest.approx(want)
    # embedding a state with support outside the sector fails
    outside = SparseOperator(np.identity(lay.nstates), lay.basis_tag)
    with pytest.raises(SectorLeakageError):
        vectorize_into(outside, dsec)


def test_full_assembly_guard():
    lay = build_layout("chain-obc", 6)
    spec = ModelSpec(lay, "qlm", jumps=(JumpSpec("biased", gamma_up=1, gamma_down=1),))
    with pytest.raises(AssemblyError):
        assemble(spec)
    with pytest.raises(AssemblyError):
        trace_vector(5)


def test_spectrum_structure_smoke():
    spec = full_specs()[0]
    lv = assemble(spec)
    ev = np.linalg.eigvals(lv.matrix.toarray())
    assert ev.real.max() < 1e-10
    assert np.min(np.abs(ev)) < 1e-10
    # closed under conjugation
    ev_sorted = np.sort_complex(ev)
    conj_sorted = np.sort_complex(ev.conj())
    assert np.linalg.norm(ev_sorted - conj_sorted) < 1e-8
