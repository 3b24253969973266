import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eptransfer.basis import BasisSpec, FieldPoint, assemble_operator_blocks, build_pencil
from eptransfer.dynamics import FullEngine
from eptransfer.loops import LoopSpec
from eptransfer.spectral import (
    ReducedProblem,
    Resonance,
    ResonanceSet,
    SolverError,
    TrackingError,
    c_normalize,
    find_ep,
    locate_ep,
    solve_resonances,
    track_states,
)
from eptransfer.twolevel import TwoLevelModel
from eptransfer.units import EP_ENERGY, EP_POINT

import oracles


def random_pencil(rng, m):
    a = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    a = a + a.T
    x = rng.normal(size=(m, m))
    b = x @ x.T + m * np.eye(m)
    return a, b


# -- small-instance oracle ------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_small_pencil_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pencil(rng, 8)
    target = complex(rng.normal(), rng.normal())
    rs = solve_resonances((a, b), target, 8)
    ref = oracles.dense_generalized_eigvals(a, b)
    assert oracles.nearest_match(rs.energies, ref) < 1e-10
    assert oracles.nearest_match(ref, rs.energies) < 1e-10
    # sorted by distance to the target
    d = np.abs(rs.energies - target)
    assert np.all(np.diff(d) >= 0)
    # each vector solves the pencil and is c-normalized
    for r in rs:
        np.testing.assert_allclose(a @ r.vector, r.energy * (b @ r.vector), atol=1e-9)
        assert abs(r.vector @ b @ r.vector - 1) < 1e-10


def test_backends_agree():
    rng = np.random.default_rng(7)
    a, b = random_pencil(rng, 120)
    target = 0.3 - 0.2j
    dense = solve_resonances((a, b), target, 6, backend="dense").energies
    arn = solve_resonances((a, b), target, 6, backend="arnoldi").energies
    np.testing.assert_allclose(arn, dense, atol=1e-10)


def test_count_validation():
    a, b = random_pencil(np.random.default_rng(1), 4)
    with pytest.raises(ValueError):
        solve_resonances((a, b), 0.0, 5)
    with pytest.raises(ValueError):
        solve_resonances((a, b), 0.0, 2, backend="magic")


def test_singular_shift_is_perturbed():
    rng = np.random.default_rng(3)
    a, b = random_pencil(rng, 100)
    e = solve_resonances((a, b), 0.0, 1, backend="dense").energies[0]
    # shifting exactly onto an eigenvalue must still work
    rs = solve_resonances((a, b), e, 3, backend="arnoldi")
    assert abs(rs.energies[0] - e) < 1e-9


def test_arnoldi_failure_reports_residuals(monkeypatch):
    from scipy.sparse.linalg import ArpackNoConvergence

    import eptransfer.spectral as sp

    def fail(*args, **kw):
        raise ArpackNoConvergence("no", np.array([1.0 + 0j]), np.ones((100, 1), dtype=complex))

    monkeypatch.setattr(sp, "eigs", fail)
    a, b = random_pencil(np.random.default_rng(4), 100)
    with pytest.raises(SolverError) as info:
        solve_resonances((a, b), 0.0, 3, backend="arnoldi")
    assert info.value.residuals is not None and len(info.value.residuals) == 1


# -- c-normalization ---------------------------------------------------------------


def _set(vectors, overlap, energies=None):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=complex))
    energies = energies if energies is not None else np.arange(vectors.shape[1], dtype=complex)
    res = tuple(Resonance(complex(e), vectors[:, k], k) for k, e in enumerate(energies))
    return ResonanceSet(FieldPoint(0.0, 0.0), 1.0, res, overlap)


def test_c_normalize_idempotent_and_scale_invariant():
    rng = np.random.default_rng(0)
    _, b = random_pencil(rng, 5)
    v = rng.normal(size=(5, 1)) + 1j * rng.normal(size=(5, 1))
    once = c_normalize(_set(v, b))
    twice = c_normalize(once)
    np.testing.assert_allclose(twice[0].vector, once[0].vector, atol=1e-14)
    scaled = c_normalize(_set(3j * v, b))
    np.testing.assert_allclose(scaled[0].vector, once[0].vector, atol=1e-13)
    u = once[0].vector
    assert abs(u @ b @ u - 1) < 1e-13
    k = np.argmax(np.abs(u))
    assert u[k].real >= 0


def test_self_orthogonal_vector_flagged():
    v = np.array([[1.0], [1j]])
    with pytest.warns(RuntimeWarning, match="self-orthogonal"):
        out = c_normalize(_set(v, np.eye(2)))
    assert out[0].self_orthogonal
    assert np.isclose(np.vdot(out[0].vector, out[0].vector).real, 1.0)


def test_flag_raised_approaching_model_ep():
    """Eigenvectors of a model Hamiltonian become self-orthogonal as eta -> 0.

    With c = 1 the ratio |v.T v| / |v|^2 scales like sqrt(|eta|)."""
    center = FieldPoint(0.01, 3e-4)
    model = TwoLevelModel(center, [-0.05, 1.0, 2.0], [0.0, 1e-3 + 1e-3j, 2e-2 - 1e-2j, 0, 0, 0], c=1.0)
    loc = locate_ep(model)
    assert loc.found
    flags = []
    etas = []
    for s in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10):
        p = FieldPoint(loc.point.gamma + s * 1e-6, loc.point.f)
        m = model.matrix(p)
        w, v = np.linalg.eig(m)
        etas.append(abs(model.eta(p)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = c_normalize(_set(v, np.eye(2), w))
        flags.append(all(r.self_orthogonal for r in out))
    for eta, flag in zip(etas, flags):
        if eta < 1e-12:
            assert flag
        if eta > 1e-6:
            assert not flag


# -- tracking ----------------------------------------------------------------------


def test_tracking_identity():
    rng = np.random.default_rng(5)
    a, b = random_pencil(rng, 10)
    rs = solve_resonances((a, b), 0.0, 4)
    out = track_states(rs, rs)
    assert out.labels == rs.labels
    np.testing.assert_allclose(out.vectors, rs.vectors)


def test_tracking_follows_permutation_and_sign():
    rng = np.random.default_rng(6)
    a, b = random_pencil(rng, 10)
    rs = solve_resonances((a, b), 0.0, 4)
    perm = [2, 0, 3, 1]
    shuffled = ResonanceSet(
        rs.point, rs.b,
        tuple(Resonance(rs[k].energy, -rs[k].vector, 10 + i) for i, k in enumerate(perm)),
        rs.overlap,
    )
    out = track_states(rs, shuffled)
    assert [r.label for r in out] == [rs[k].label for k in perm]
    for r in out:
        assert (rs.by_label(r.label).vector @ b @ r.vector).real > 0


def test_tracking_refuses_ambiguous_match():
    b = np.eye(2)
    prev = _set(np.eye(2)[:, :1], b)
    # equal overlap with both candidates
    nxt = _set(np.array([[1, 1], [1, -1]]) / np.sqrt(2), b)
    with pytest.raises(TrackingError):
        track_states(prev, nxt)


def test_untracked_states_get_fresh_labels():
    rng = np.random.default_rng(8)
    a, b = random_pencil(rng, 10)
    rs = solve_resonances((a, b), 0.0, 5)
    out = track_states(rs.select([0, 1]), rs, labels=[0, 1])
    assert out.labels[:2] == [0, 1]
    assert sorted(out.labels[2:]) == [2, 3, 4]


# -- locate_ep --------------------------------------------------------------------


def test_locate_ep_constructed_root():
    # eta = (x - 0.3)^2 + i (y + 0.2) in octagon units has a single real root
    center = FieldPoint(0.02, 4e-4)
    model0 = TwoLevelModel(center, [0.0, 0.0, 0.0], [0, 0, 0, 0, 0, 0])
    sg, sf = model0.scales
    x0, y0 = 0.3, -0.2
    d = x0**2 - 1j * y0
    e = -2 * x0 / sg
    f = 1j / sf
    g = 1 / sg**2
    model = TwoLevelModel(center, [-0.05, 0, 0], [d, e, f, g, 0, 0])
    loc = locate_ep(model)
    assert loc.found
    assert loc.point.gamma == pytest.approx(center.gamma + x0 * sg, abs=1e-14)
    assert loc.point.f == pytest.approx(center.f + y0 * sf, abs=1e-16)
    assert abs(loc.energy - (-0.025)) < 1e-14


def test_locate_ep_reports_missing_root():
    center = FieldPoint(0.02, 4e-4)
    # eta = 1 + x^2 has no zero at real field offsets
    sg, _ = TwoLevelModel(center, [0, 0, 0], [0] * 6).scales
    model = TwoLevelModel(center, [0, 0, 0], [1.0, 0, 0, 1 / sg**2, 0, 0])
    assert not locate_ep(model).found


# -- hydrogen ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def ep_problem(ep_reduced):
    return ep_reduced


def test_ep_pair_at_reference_point(ep_problem):
    rs = ep_problem.solve(EP_POINT, EP_ENERGY, 6)
    pair = rs.energies[:2]
    assert abs(pair.mean().real - EP_ENERGY.real) < 1e-4
    assert abs(pair.mean().imag - EP_ENERGY.imag) < 1e-4
    assert abs(pair[0] - pair[1]) < 5e-5
    # the other four are clearly separated from the pair
    assert np.min(np.abs(rs.energies[2:] - pair.mean())) > 10 * abs(pair[0] - pair[1])


def test_ground_state():
    rs = ReducedProblem(assemble_operator_blocks(BasisSpec(15, 1.0))).solve(FieldPoint(0, 0), -0.5, 1)
    assert abs(rs.energies[0] + 0.5) < 1e-10


def test_pencil_route_matches_reduced_route(ep_problem):
    a, b = build_pencil(ep_problem.blocks, EP_POINT, ep_problem.b)
    e1 = solve_resonances((a, b), EP_ENERGY, 4, b=ep_problem.b).energies
    e2 = ep_problem.solve(EP_POINT, EP_ENERGY, 4).energies
    np.testing.assert_allclose(e1, e2, atol=1e-10)


def test_converged_set_is_c_orthonormal(ep_problem):
    eng = FullEngine(ep_problem.blocks)
    rs = eng.initial_set(LoopSpec(EP_POINT, 1e-3, 1.0))
    g = rs.gram()
    assert np.max(np.abs(g - np.eye(len(rs)))) < 1e-8
    assert rs.labels == [1, 2, 3, 4, 5, 6]


def test_stationary_under_rotation(ep_problem):
    """Converged eigenvalues hardly move under +-20% of the rotation angle."""
    base = ep_problem.solve(EP_POINT, EP_ENERGY, 12)
    theta = np.angle(ep_problem.b)
    side = [-0.023200 - 8.6e-6j, -0.034328 + 0j]
    pick = [int(np.argmin(np.abs(base.energies - s))) for s in side]
    for fac in (0.8, 1.2):
        other = ReducedProblem(ep_problem.blocks, np.exp(1j * fac * theta)).solve(EP_POINT, EP_ENERGY, 12)
        for k in pick:
            assert np.min(np.abs(other.energies - base.energies[k])) < 1e-7


def test_find_ep_reproduces_reference(ep_problem):
    loc, model = find_ep(ep_problem, EP_POINT, EP_ENERGY, radius=1e-3, tol=5e-5)
    assert loc.found
    assert abs(loc.point.gamma - 1.445263e-2) < 1e-5
    assert abs(loc.point.f - 3.176736e-4) < 1e-6
    assert abs(loc.energy - EP_ENERGY) < 1e-4
    assert abs(loc.splitting) < 5e-5
