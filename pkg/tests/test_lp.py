import numpy as np
import pytest

from robust_v2g.lp import EQ, GE, LE, LPBuilder, LPModel, read_mps, write_mps


def small_model():
    b = LPBuilder("demo model")
    x = b.add_block("x", 3, lo=[0, -np.inf, 1], hi=[4, np.inf, 1], cost=[1, -2, 0.5])
    y = b.add_var("y free", lo=-np.inf, hi=np.inf, cost=0.25)
    b.add_row("r0", [x[0], x[1]], [1, 1], LE, 3.0)
    b.add_row("r1", [x[1], y], [2, -1], GE, -1.5, family="fam")
    b.add_row("r2", [x[2], y], [1, 1], EQ, 2.0, family="fam")
    b.c0 = 0.75
    return b.build()


def test_builder_indices_and_families():
    m = small_model()
    assert m.n_vars == 4 and m.n_cons == 3
    assert list(m.var_index["x"]) == [0, 1, 2]
    assert list(m.con_index["fam"]) == [1, 2]
    assert m.var_names[3] == "y free"


def test_block_mask():
    b = LPBuilder()
    idx = b.add_block("L", (3, 3), mask=np.tril(np.ones((3, 3), bool)))
    assert idx[0, 1] == -1 and idx[2, 0] >= 0
    assert b.build().n_vars == 6
    with pytest.raises(ValueError):
        b.add_row("bad", [idx[0, 1]], [1.0], LE, 0.0)


def test_model_validation():
    m = small_model()
    with pytest.raises(ValueError):
        LPModel(m.c[:2], m.A, m.sense, m.rhs, m.lo, m.hi)
    with pytest.raises(ValueError):
        LPModel(m.c, m.A, m.sense, m.rhs, m.hi + 10, m.hi)
    with pytest.raises(ValueError):
        LPBuilder().add_row("r", [], [], "X", 0.0)


def test_violation_and_objective():
    m = small_model()
    x = np.array([1.0, 1.0, 1.0, 1.0])
    assert m.objective(x) == pytest.approx(1 - 2 + 0.5 + 0.25 + 0.75)
    assert m.violation(x) == pytest.approx(0.0)
    x[0] = 5.0
    assert m.violation(x) == pytest.approx(3.0)


def test_mps_round_trip(tmp_path):
    m = small_model()
    path = write_mps(m, tmp_path / "m.mps")
    r = read_mps(path)
    assert np.array_equal(r.c, m.c) and r.c0 == m.c0
    assert np.array_equal(r.A.toarray(), m.A.toarray())
    assert list(r.sense) == list(m.sense) and np.array_equal(r.rhs, m.rhs)
    assert np.array_equal(r.lo, m.lo) and np.array_equal(r.hi, m.hi)
    assert r.var_names[3] == "y_free"


def test_mps_parse_error_has_line_number(tmp_path):
    p = tmp_path / "bad.mps"
    p.write_text("NAME x\nROWS\n N obj\n L r0\nCOLUMNS\n x1 nowhere 1.0\nENDATA\n")
    with pytest.raises(ValueError, match=":6:"):
        read_mps(p)
