import itertools

import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings, strategies as st

from oracles import brute_forms, brute_jumps
from ctrlmac_cosim.stability import (
    FAMILIES, StabilityCertificate, build_augmented, build_jump_maps, build_quadratic_forms,
    compute_c_bounds, empirical_ges_check, lmi_blocks, max_allowable_delay, propagate_p,
    sampled_data_spectral_radius, search_certificate, simulate_closed_loop, subset_index, subsets,
    verify_certificate, zero_multipliers,
)


@pytest.fixture(scope="module")
def benchmark():
    sys_ = build_augmented([[1.0]], [[1.0]], [[-2.0]], sigma=0.0, rho=0.001, h=0.1, tau_d=0.0)
    return sys_, search_certificate(sys_)


def test_augmented_scalar():
    s = build_augmented([[0.3]], [[2.0]], [[-1.5]])
    assert np.array_equal(s.abar, [[0.3, -3.0, 0.0], [0, 0, 0], [0, 0, 0]])
    assert not build_augmented([[0.0]], [[1.0]], [[0.0]]).abar.any()


def test_augmented_block_placement():
    rng = np.random.default_rng(0)
    A, B, K = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    ab = build_augmented(A, B, K).abar
    BK = B @ K
    for r, c in itertools.product(range(6), range(6)):
        want = A[r, c] if r < 2 and c < 2 else BK[r, c - 2] if r < 2 and 2 <= c < 4 else 0.0
        assert ab[r, c] == want


def test_augmented_errors():
    with pytest.raises(ValueError):
        build_augmented(np.eye(2), np.eye(3), np.eye(2))
    with pytest.raises(ValueError):
        build_augmented([[1.0]], [[1.0]], [[1.0]], h=1.0, tau_d=1.0)
    with pytest.raises(ValueError):
        build_augmented(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)))


def test_quadratic_form_example():
    qa, _, _ = build_quadratic_forms(0.1, 1, 1)
    assert np.allclose(qa, [[0.99, 0, -1], [0, 0, 0], [-1, 0, 1]])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_builders_match_brute_force(n):
    for sigma in (0.0, 0.1, 0.3):
        for j in range(1, n + 1):
            got = build_quadratic_forms(sigma, j, n)
            for g, b in zip(got, brute_forms(sigma, j, n)):
                assert np.array_equal(g, b)
            # idempotent: rebuilding yields the same arrays
            assert all(np.array_equal(a, b) for a, b in zip(got, build_quadratic_forms(sigma, j, n)))
    for J in subsets(n):
        for g, b in zip(build_jump_maps(J, n), brute_jumps(J, n)):
            assert np.array_equal(g, b)


def test_jump_map_extremes():
    ja, _ = build_jump_maps(frozenset(), 2)
    assert np.array_equal(ja, np.eye(6))
    ja, _ = build_jump_maps({1, 2}, 2)
    assert np.array_equal(ja[4:, :2], np.eye(2)) and not ja[4:, 4:].any()


def test_subset_enumeration():
    all_sets = list(subsets(3))
    assert len(all_sets) == 8
    assert sorted(subset_index(J, 3) for J in all_sets) == list(range(8))


def test_propagate_examples():
    P = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(propagate_p(P, np.zeros((3, 3)), 0.01, 2.0), np.exp(0.04) * P)
    rng = np.random.default_rng(1)
    ab = rng.normal(size=(3, 3))
    assert np.allclose(propagate_p(P, ab, 0.0, 0.0), P)


@given(st.floats(-2, 2), st.floats(0, 0.1), st.floats(0, 5))
def test_propagate_scalar_closed_form(a, rho, tau):
    ab = np.zeros((3, 3))
    ab[0, 0] = a
    p = np.diag([1.0, 1.0, 1.0])
    got = propagate_p(p, ab, rho, tau)[0, 0]
    want = np.exp(2 * rho * tau) * np.exp(2 * a * tau)
    assert abs(got - want) <= 1e-10 * want


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.floats(0, 0.05), st.floats(0, 3))
def test_propagate_preserves_symmetry_and_definiteness(seed, rho, tau):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(6, 6))
    P = M @ M.T + 0.1 * np.eye(6)
    ab = 0.3 * rng.normal(size=(6, 6))
    out = propagate_p(P, ab, rho, tau)
    assert np.allclose(out, out.T, atol=0)
    assert np.linalg.eigvalsh(out)[0] > 0


def test_benchmark_is_certified_and_oracle_agrees(benchmark):
    sys_, res = benchmark
    assert res.certificate is not None and res.verdict.feasible
    assert verify_certificate(res.certificate, sys_).margin > 1e-9
    assert sampled_data_spectral_radius([[1.0]], [[1.0]], [[-2.0]], 0.1, 0.0) < 1


def test_open_loop_unstable_is_rejected():
    sys_ = build_augmented([[1.0]], [[1.0]], [[0.0]], sigma=0.0, rho=0.001, h=0.1)
    res = search_certificate(sys_)
    assert res.certificate is None
    if res.candidate is not None:
        assert not verify_certificate(res.candidate, sys_).feasible
    assert sampled_data_spectral_radius([[1.0]], [[1.0]], [[0.0]], 0.1, 0.0) > 1


def test_large_sigma_is_not_certified():
    sys_ = build_augmented([[1.0]], [[1.0]], [[-2.0]], sigma=0.99, rho=0.001, h=0.1)
    assert search_certificate(sys_).certificate is None


def test_malformed_certificates(benchmark):
    sys_, res = benchmark
    cert = res.certificate
    bad = StabilityCertificate(cert.p0h, cert.p1d, {**cert.multipliers})
    bad.multipliers["hat_J"] = -np.ones_like(cert.multipliers["hat_J"])
    with pytest.raises(ValueError, match="negative"):
        verify_certificate(bad, sys_)
    skew = StabilityCertificate(cert.p0h + np.triu(np.ones(3), 1), cert.p1d, cert.multipliers)
    with pytest.raises(ValueError, match="symmetric"):
        verify_certificate(skew, sys_)


def test_identity_certificate_fails_with_witness():
    sys_ = build_augmented([[1.0]], [[1.0]], [[0.0]], sigma=0.0, h=0.1)
    v = verify_certificate(StabilityCertificate(np.eye(3), np.eye(3), zero_multipliers(1)), sys_)
    assert not v.feasible and v.witness is not None


def _random_cert(rng, n):
    def pd():
        M = rng.normal(size=(3 * n, 3 * n))
        return M @ M.T + rng.uniform(0.05, 2) * np.eye(3 * n)
    mus = {f: rng.uniform(0, 1, size=(2**n, n)) for f in FAMILIES}
    return StabilityCertificate(pd(), pd(), mus)


@pytest.mark.parametrize("n", [1, 2])
def test_schur_complement_dual(benchmark, n):
    rng = np.random.default_rng(n)
    sys_ = build_augmented(rng.normal(size=(n, n)) - np.eye(n), np.eye(n), -np.eye(n),
                           sigma=0.1, rho=0.001, h=0.2, tau_d=0.05)
    certs = [_random_cert(rng, n) for _ in range(20)]
    if n == 1:
        certs.append(benchmark[1].certificate)
        sys_list = [sys_] * 20 + [benchmark[0]]
    else:
        sys_list = [sys_] * 20
    for cert, s in zip(certs, sys_list):
        ed = sl.expm(s.abar * s.tau_d)
        for J in subsets(s.n_s):
            M1, _ = lmi_blocks(cert, s, J)
            N = 3 * s.n_s
            X = M1[:N, :N]
            jump = ed @ build_jump_maps(J, s.n_s)[0]
            S = X - jump.T @ cert.p1d @ jump  # Schur complement of the P1d block
            assert (np.linalg.eigvalsh(M1)[0] > 0) == (np.linalg.eigvalsh(S)[0] > 0)
            z = rng.normal(size=(10_000, N))
            lhs = np.einsum("ij,jk,ik->i", z, X, z)
            zp = z @ jump.T
            rhs = np.einsum("ij,jk,ik->i", zp, cert.p1d, zp)
            if np.linalg.eigvalsh(S)[0] > 0:
                assert np.all(lhs > rhs)
            else:
                w = np.linalg.eigh(S)[1][:, 0]
                assert w @ X @ w <= (jump @ w) @ cert.p1d @ (jump @ w) + 1e-9


def test_frontier_for_benchmark():
    sys_ = build_augmented([[1.0]], [[1.0]], [[-2.0]], sigma=0.0, rho=0.001, h=0.1)
    res = max_allowable_delay(sys_, [0.02, 0.05, 0.09])
    assert res.frontier[0][0] == 0.0 and res.frontier[0][1]
    assert res.max_tau_d is not None and 0 < res.max_tau_d < 0.1
    assert sampled_data_spectral_radius([[1.0]], [[1.0]], [[-2.0]], 0.1, res.max_tau_d) < 1
    with pytest.raises(ValueError):
        max_allowable_delay(sys_, [0.1])


def test_c_bounds_constant_p():
    sys_ = build_augmented([[0.0]], [[0.0]], [[0.0]], sigma=0.0, rho=0.0, h=1.0, tau_d=0.5)
    cert = StabilityCertificate(2 * np.eye(3), 2 * np.eye(3), zero_multipliers(1))
    cb = compute_c_bounds(cert, sys_, 10)
    assert cb.c1 == pytest.approx(2.0) and cb.c2 == pytest.approx(2.0)


def test_certified_trajectory_stays_in_envelope(benchmark):
    sys_, res = benchmark
    cb = compute_c_bounds(res.certificate, sys_)
    t, norms = simulate_closed_loop([[1.0]], [[1.0]], [[-2.0]], 0.1, 0.0, 0.0, [1.0], 20.0)
    g = empirical_ges_check(t, norms, sys_.rho, cb.ges_constant)
    assert g.holds and g.c <= cb.ges_constant


def test_unstable_trajectory_violates():
    t, norms = simulate_closed_loop([[1.0]], [[1.0]], [[0.0]], 0.1, 0.0, 0.0, [1.0], 30.0)
    g = empirical_ges_check(t, norms, 0.001)
    assert not g.holds and g.violated_at is not None and g.violated_at < 30.0
