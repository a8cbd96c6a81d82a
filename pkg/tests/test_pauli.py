import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from hybridvqe.models import lih_hamiltonian, z2_hamiltonian
from hybridvqe.pauli import (
    Hamiltonian,
    PauliString,
    commutes,
    group_commuting,
    multiply,
    pauli_matrix,
    qubitwise_compatible,
    to_matrix,
)

labels = st.integers(1, 5).flatmap(lambda n: st.tuples(st.text("IXYZ", min_size=n, max_size=n),
                                                       st.text("IXYZ", min_size=n, max_size=n)))


def test_multiply_xxxx_zzzz():
    phase, prod = multiply(PauliString("XXXX"), PauliString("ZZZZ"))
    assert phase == 1
    assert prod == PauliString("YYYY")


@given(labels)
def test_multiply_matches_dense(pair):
    a, b = pair
    phase, prod = multiply(PauliString(a), PauliString(b))
    assert phase in (1, -1, 1j, -1j)
    np.testing.assert_allclose(oracles.pauli(a) @ oracles.pauli(b), phase * oracles.pauli(prod.ops), atol=1e-12)


@given(labels)
def test_commutes_matches_dense(pair):
    a, b = pair
    pa, pb = oracles.pauli(a), oracles.pauli(b)
    assert commutes(PauliString(a), PauliString(b)) == np.allclose(pa @ pb, pb @ pa)


@given(labels)
def test_qubitwise_compatibility_implies_commuting(pair):
    a, b = pair
    if qubitwise_compatible(PauliString(a), PauliString(b)):
        assert commutes(PauliString(a), PauliString(b))


def test_qubitwise_examples():
    assert qubitwise_compatible(PauliString("ZZII"), PauliString("ZZZZ"))
    assert not qubitwise_compatible(PauliString("XXXX"), PauliString("ZZZZ"))


def test_invalid_label_rejected():
    with pytest.raises(ValueError):
        PauliString("XQ")
    with pytest.raises(ValueError):
        multiply(PauliString("X"), PauliString("XX"))


def test_z2_grouping_needs_two_circuits():
    groups = group_commuting(z2_hamiltonian(1.0))
    assert sorted(g.basis.ops for g in groups) == ["XXXX", "ZZZZ"]


def test_single_term_grouping():
    groups = group_commuting(Hamiltonian([(1.0, "ZIII")]))
    assert len(groups) == 1 and groups[0].basis.ops == "ZIII"


def test_lih_grouping_is_valid_and_stable():
    h = lih_hamiltonian()
    groups = group_commuting(h)
    covered = {}
    for g in groups:
        for j, r in g.members:
            assert qubitwise_compatible(g.basis, h.terms[j].string)
            covered[j] = covered.get(j, 0.0) + r
    for j, t in enumerate(h.terms):
        if not t.string.is_identity():
            assert covered[j] == pytest.approx(1.0)
    # regression value for the fixed term order
    assert len(groups) == 25
    assert [g.basis.ops for g in group_commuting(h)] == [g.basis.ops for g in groups]


def test_to_matrix_single_z():
    np.testing.assert_allclose(to_matrix(Hamiltonian([(1.0, "Z")])), np.diag([1, -1]))


@settings(max_examples=30)
@given(st.integers(1, 4).flatmap(
    lambda n: st.lists(st.tuples(st.floats(-2, 2, allow_nan=False), st.text("IXYZ", min_size=n, max_size=n)),
                       min_size=1, max_size=6)))
def test_to_matrix_matches_kron_oracle(terms):
    h = Hamiltonian(terms)
    np.testing.assert_allclose(to_matrix(h), oracles.hamiltonian(terms), atol=1e-12)
    np.testing.assert_allclose(to_matrix(h), to_matrix(h).conj().T, atol=1e-12)


@given(st.text("IXYZ", min_size=1, max_size=4))
def test_pauli_matrix_matches_oracle(label):
    np.testing.assert_allclose(pauli_matrix(PauliString(label)), oracles.pauli(label), atol=1e-12)


def test_z2_lowest_eigenvalue():
    w = np.linalg.eigvalsh(to_matrix(z2_hamiltonian(2.0)))
    assert w[0] == pytest.approx(-np.sqrt(8), abs=1e-10)


def test_text_round_trip():
    h = lih_hamiltonian()
    back = Hamiltonian.from_text(h.to_text())
    assert [(t.coeff, t.string.ops) for t in back] == [(t.coeff, t.string.ops) for t in h]


def test_matrix_cap():
    with pytest.raises(ValueError):
        to_matrix(Hamiltonian([(1.0, "Z" * 15)]))


def test_duplicate_terms_merge():
    h = Hamiltonian([(1.0, "XI"), (0.5, "XI"), (2.0, "IZ")])
    assert len(h) == 2 and h.coefficient("XI") == 1.5
