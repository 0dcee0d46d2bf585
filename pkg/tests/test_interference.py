import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalhist.event_algebra import SampleSpace
from causalhist.histories import HistoryRecord, HistorySpace, decoherence_matrix, enumerate_histories
from causalhist.interference import (
    Measures,
    classify_causal,
    inequality_audit,
    interference_measures,
    measure_all,
    slice_identity_residual,
    stepwise_causality,
)
from conftest import random_cells, random_history_space, random_state, random_unitary, sigma_x_chain_oracle, space_in_basis


def rec(labels, vec):
    v = np.asarray(vec, dtype=complex)
    return HistoryRecord(tuple(labels), tuple(range(len(labels))), v, float(np.vdot(v, v).real))


def direct_measures(target, others):
    """Plain-loop evaluation of the four definitions."""
    nt = np.linalg.norm(target)
    comp = [o for o in others]
    i1 = sum(np.linalg.norm(o) for o in comp) / nt
    r = sum(comp, np.zeros_like(target))
    i2 = np.linalg.norm(r) / nt
    i3 = sum(abs(np.vdot(o, target)) for o in comp) / nt**2
    i4 = abs(np.vdot(r, target)) / nt**2
    return (i1, i2, i3, i4)


# ---------------------------------------------------------------- worked examples


def test_single_history_in_cell():
    a = rec(("x", "0"), [0.6, 0.0])
    b = rec(("y", "1"), [0.0, 0.8])
    assert interference_measures(a, [a, b]).as_tuple() == (0.0, 0.0, 0.0, 0.0)


def test_cancellation_pathology():
    chi = np.array([0.3, 0.4j, 0.1])
    a, a1, a2 = rec(("a", "z"), chi), rec(("b", "z"), chi), rec(("c", "z"), -chi)
    m = interference_measures(a, [a, a1, a2])
    np.testing.assert_allclose(m.as_tuple(), (2.0, 0.0, 2.0, 0.0), atol=1e-12)
    report = classify_causal([a, a1, a2], "I2", 1e-6)
    # reported as the formula dictates; the ambiguity is left to the user
    assert ("a", "z") in report.causal
    assert inequality_audit(report)


def test_orthogonal_equal_norm_pair():
    a = rec(("p", "0"), [0.5, 0.5, 0, 0])
    b = rec(("q", "0"), [0.5, -0.5, 0, 0])
    m = interference_measures(a, [a, b])
    np.testing.assert_allclose(m.as_tuple(), (1.0, 1.0, 0.0, 0.0), atol=1e-12)


def test_zero_norm_is_undefined():
    a = rec(("p", "0"), [0, 0])
    b = rec(("q", "0"), [1, 0])
    assert interference_measures(a, [a, b]) is None
    report = classify_causal([a, b], "I3", math.inf)
    assert report.undefined == [("p", "0")]
    assert ("p", "0") not in report.causal + report.noncausal


def test_matches_direct_loop():
    rng = np.random.default_rng(1)
    for _ in range(50):
        enum = enumerate_histories(random_history_space(rng, dim_max=6, k_max=3, n_max=3))
        for r, m in zip(enum, measure_all(enum)):
            if m is None:
                continue
            others = [o.chain_vector for o in enum if o.labels[-1] == r.labels[-1] and o.labels != r.labels]
            np.testing.assert_allclose(m.as_tuple(), direct_measures(r.chain_vector, others), rtol=1e-10, atol=1e-12)


def test_bad_measure_and_threshold(sigma_x_space):
    enum = enumerate_histories(sigma_x_space)
    with pytest.raises(ValueError):
        classify_causal(enum, "I5", 0.1)
    with pytest.raises(ValueError):
        classify_causal(enum, "I3", -1.0)


# ---------------------------------------------------------------- classification


def test_threshold_infinity_all_causal(sigma_x_space):
    report = classify_causal(enumerate_histories(sigma_x_space), "I1", math.inf)
    assert len(report.causal) == 4 and not report.noncausal


def test_threshold_zero_static(static_space):
    enum = enumerate_histories(static_space)
    for measure in ("I1", "I2", "I3", "I4"):
        report = classify_causal(enum, measure, 0.0)
        nonzero = [r.labels for r in enum if r.weight > 0]
        assert sorted(report.causal) == sorted(nonzero)
        assert not report.noncausal


def test_sigma_x_i3_classification(sigma_x_space):
    oracle = sigma_x_chain_oracle()
    expected = {}
    for lab, v in oracle.items():
        others = [w for l2, w in oracle.items() if l2[-1] == lab[-1] and l2 != lab]
        expected[lab] = direct_measures(v, others)
    # every chi in one final cell has the same modulus as its competitor and is parallel to it
    assert all(e[2] == pytest.approx(1.0) for e in expected.values())
    report = classify_causal(enumerate_histories(sigma_x_space), "I3", 0.1)
    for lab, m in report.values.items():
        np.testing.assert_allclose(m.as_tuple(), expected[lab], atol=1e-12)
    assert sorted(report.noncausal) == sorted(lab for lab, e in expected.items() if e[2] > 0.1)
    assert not report.causal


def test_partition_of_histories():
    rng = np.random.default_rng(2)
    for _ in range(20):
        enum = enumerate_histories(random_history_space(rng, dim_max=6, k_max=3, n_max=3))
        report = classify_causal(enum, "I4", 0.05)
        groups = report.causal + report.noncausal + report.undefined
        assert sorted(groups) == sorted(r.labels for r in enum)
        assert len(set(groups)) == len(groups)
        for lab in report.causal:
            assert report.status(lab) == "causal"


def test_pruned_enumeration_flagged_incomplete(sigma_x_space):
    report = classify_causal(enumerate_histories(sigma_x_space, prune_below=1e-3), "I3", 0.1)
    assert report.complete is False
    assert classify_causal(enumerate_histories(sigma_x_space), "I3", 0.1).complete


# ---------------------------------------------------------------- stepwise


def test_stepwise_single_time_equals_classify():
    rng = np.random.default_rng(4)
    for _ in range(10):
        s = random_history_space(rng, dim_max=6, k_max=3, n_max=1)
        enum = enumerate_histories(s)
        a = classify_causal(enum, "I3", 0.2)
        b = stepwise_causality(enum, "I3", 0.2)
        assert sorted(a.causal) == sorted(b.step_causal)
        assert sorted(a.noncausal) == sorted(b.not_step_causal)


def test_stepwise_implies_final_pass():
    rng = np.random.default_rng(5)
    for _ in range(20):
        enum = enumerate_histories(random_history_space(rng, dim_max=6, k_max=3, n_max=4))
        for thr in (0.05, 0.5, 2.0):
            step = stepwise_causality(enum, "I3", thr)
            final = classify_causal(enum, "I3", thr)
            assert set(step.step_causal) <= set(final.causal)


def test_stepwise_prefixes_match_truncated_enumeration():
    rng = np.random.default_rng(6)
    s = random_history_space(rng, dim_max=6, k_max=3, n_max=3)
    enum = enumerate_histories(s)
    step = stepwise_causality(enum, "I1", 1.0)
    for k in range(1, s.n + 1):
        short = classify_causal(enumerate_histories(s.truncated(k)), "I1", 1.0)
        for lab, steps in step.prefixes.items():
            got = steps[k - 1][1]
            want = short.values[lab[:k]]
            if want is None:
                assert got is None
            else:
                np.testing.assert_allclose(got.as_tuple(), want.as_tuple(), rtol=1e-12, atol=1e-14)


def test_sigma_x_stepwise_has_no_recovery(sigma_x_space):
    # first prefixes have no competitors; the second step fails for every history
    step = stepwise_causality(enumerate_histories(sigma_x_space), "I3", 0.1)
    for lab, steps in step.prefixes.items():
        assert steps[0][2] and not steps[1][2]
    assert step.recovers() == []


def recovering_space():
    """Three-step instance in which interference present at step 2 is gone at step 3."""
    e = np.eye(4)
    s2 = math.sqrt(2)
    psi0 = (e[0] + e[1]) / s2
    t1 = SampleSpace((np.diag([1, 0, 1, 0]), np.diag([0, 1, 0, 1])), ("0", "1"))
    # second step: images of e0, e1 with non-orthogonal, non-parallel parts in span{e0, e2}
    a = (e[0] + e[2] + s2 * e[1]) / 2
    b = (e[0] - e[1] / s2) / math.sqrt(1.5)
    basis, _ = np.linalg.qr(np.column_stack([a, b, e[3], e[2]]))
    basis[:, 0] *= np.sign(basis[:, 0] @ a)
    basis[:, 1] *= np.sign(basis[:, 1] @ b)
    u2 = basis @ np.eye(4)[:, :4].T  # e_k -> basis column k
    t2 = SampleSpace((np.diag([1, 0, 1, 0]), np.diag([0, 1, 0, 1])), ("0", "1"))
    f = (e[0] - e[2]) / s2
    pf = np.outer(f, f)
    t3 = SampleSpace((pf, np.eye(4) - pf), ("f", "rest"))
    return HistorySpace(times=(0, 1, 2, 3), spaces=(t1, t2, t3), initial_state=psi0,
                        step_unitaries=(np.eye(4), u2, np.eye(4)))


def test_interference_can_dissipate():
    enum = enumerate_histories(recovering_space())
    step = stepwise_causality(enum, "I3", 1e-9)
    assert ("1", "0", "f") in step.recovers()
    steps = step.prefixes[("1", "0", "f")]
    assert steps[0][2] and not steps[1][2] and steps[2][2]


# ---------------------------------------------------------------- audit and properties


def test_audit_on_exact_models(static_space, sigma_x_space):
    for s in (static_space, sigma_x_space):
        report = classify_causal(enumerate_histories(s), "I3", 0.1)
        assert inequality_audit(report).passed


def test_audit_detects_violation():
    report = classify_causal([rec(("a", "0"), [1, 0])], "I3", 0.1)
    report.values[("a", "0")] = Measures(0.1, 0.2, 0.0, 0.0)
    res = inequality_audit(report)
    assert not res.passed and res.worst_inequality == "I2<=I1"
    assert res.worst_slack == pytest.approx(0.1)


def test_inequalities_on_500_random_instances():
    rng = np.random.default_rng(20260)
    worst = -math.inf
    for _ in range(500):
        enum = enumerate_histories(random_history_space(rng, dim_max=8, k_max=3, n_max=3))
        res = inequality_audit(classify_causal(enum, "I3", 0.1))
        assert res.passed, res
        worst = max(worst, res.worst_slack)
    assert worst <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), phase=st.floats(0, 2 * math.pi))
def test_global_phase_invariance(seed, phase):
    rng = np.random.default_rng(seed)
    s = random_history_space(rng, dim_max=6, k_max=3, n_max=3)
    rotated = HistorySpace(times=s.times, spaces=s.spaces, initial_state=s.initial_state * cmath.exp(1j * phase),
                           hamiltonian=s.hamiltonian)
    for m0, m1 in zip(measure_all(enumerate_histories(s)), measure_all(enumerate_histories(rotated))):
        if m0 is None or m1 is None:
            assert m0 is None and m1 is None
            continue
        np.testing.assert_allclose(m0.as_tuple(), m1.as_tuple(), atol=1e-10, rtol=1e-10)


def test_monotone_dominance_of_i1():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(2, 6))
        m = int(rng.integers(2, 6))
        vecs = rng.standard_normal((m, d)) + 1j * rng.standard_normal((m, d))
        recs = [rec((str(i), "z"), v) for i, v in enumerate(vecs)]
        base = interference_measures(recs[0], recs).i1
        j = int(rng.integers(1, m))
        for scale in (1.5, 3.0, 10.0):
            grown = list(recs)
            grown[j] = rec(recs[j].labels, vecs[j] * scale)
            assert interference_measures(grown[0], grown).i1 >= base


def test_zero_interference_limit():
    # H = 0 with every event drawn from one common basis: D is diagonal by construction
    rng = np.random.default_rng(8)
    for _ in range(40):
        d = int(rng.integers(2, 9))
        basis = random_unitary(rng, d)
        n = int(rng.integers(1, 4))
        spaces = tuple(space_in_basis(basis, random_cells(rng, d, int(rng.integers(1, min(4, d) + 1)))) for _ in range(n))
        s = HistorySpace(times=tuple(range(n + 1)), spaces=spaces, initial_state=random_state(rng, d),
                         hamiltonian=np.zeros((d, d)))
        enum = enumerate_histories(s)
        dm = decoherence_matrix(enum).entries
        assert np.max(np.abs(dm - np.diag(np.diag(dm)))) <= 1e-14
        for m in measure_all(enum):
            if m is not None:
                assert m.i3 <= 1e-12 and m.i4 <= 1e-12


def test_zero_interference_diagonal_static(static_space):
    for m in measure_all(enumerate_histories(static_space)):
        if m is not None:
            assert m.i3 == 0 and m.i4 == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_slice_identity(seed):
    rng = np.random.default_rng(seed)
    enum = enumerate_histories(random_history_space(rng, dim_max=10, k_max=4, n_max=4))
    assert slice_identity_residual(enum) <= 1e-9
