import numpy as np
import pytest
from hypothesis import given, strategies as st

from wavesbl.dictionary import (
    DesignSystem, TermLibrary, build_design, column_normalize, parse_term,
)
from wavesbl.dsbl import segment_data
from wavesbl.exceptions import (
    DegenerateColumnError, EmptySegmentError, TermParseError,
)
from wavesbl.solver import manufactured_forcing
from wavesbl.synth import DerivativeFields, derivative_fields

from conftest import CASE1_VALUES, CASE3_VALUES


def _fields(**arrays):
    n = next(iter(arrays.values())).shape
    return DerivativeFields(dict(arrays), np.arange(n[0], dtype=float) + 1,
                            np.arange(n[1], dtype=float), np.arange(n[1]) + 1,
                            np.zeros(n[1], dtype=int))


# -- parsing ------------------------------------------------------------------

def test_parse_product():
    t = parse_term("u^2*u_xx")
    assert t.label == "u^2*u_xx"
    assert t.factors == ("u^2", "u_xx")
    assert t.derivatives == {"u_xx"}


def test_parse_constant_and_whitespace():
    assert parse_term("1").factors == ("1",)
    assert parse_term(" sin(u) * u_x ").label == "sin(u)*u_x"
    assert parse_term("u^1").label == "u"
    assert parse_term("1*u").label == "u"
    assert parse_term("lap(u)").derivatives == {"lap"}


@pytest.mark.parametrize("bad", ["u_z", "", "u*", "cos(u)", "u^0", "u_xxx", 3])
def test_parse_errors(bad):
    with pytest.raises(TermParseError):
        parse_term(bad)


def test_parse_error_position():
    with pytest.raises(TermParseError) as info:
        parse_term("u*u_z")
    assert info.value.position == 2


def test_library_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        TermLibrary(["u", "u^1"])
    with pytest.raises(ValueError):
        TermLibrary([])
    lib = TermLibrary(["u_xx", "sin(u)", "u*u_x"])
    assert lib.labels == ["u_xx", "sin(u)", "u*u_x"]
    assert lib.required_derivatives() == {"u_xx", "u_x"}


# -- design ---------------------------------------------------------------------

def test_product_entry():
    f = _fields(u=np.full((1, 1), 2.0), u_x=np.full((1, 1), 3.0), u_tt=np.ones((1, 1)))
    sys = build_design(f, ["u*u_x", "1", "u^2"])
    assert sys.D.tolist() == [[6.0, 1.0, 4.0]]
    assert sys.coords.tolist() == [[1, 1]]


def test_missing_derivative_is_reported():
    f = _fields(u=np.ones((2, 2)), u_tt=np.ones((2, 2)))
    with pytest.raises(KeyError, match="u_xx"):
        build_design(f, ["u_xx"])


def test_case1_least_squares(case1_snapshot):
    f = derivative_fields(case1_snapshot, {"u_xx"})
    for k, m in enumerate(CASE1_VALUES):
        sys = build_design(f.select_segment(k), ["u_xx", "sin(u)"])
        theta = np.linalg.lstsq(sys.D, sys.y, rcond=None)[0]
        assert np.allclose(theta, [m, -1.0], atol=1e-8)


def test_true_coefficients_leave_small_residual(case1_snapshot):
    f = derivative_fields(case1_snapshot, {"u_xx"})
    sys = build_design(f.select_segment(0), ["u_xx", "sin(u)"])
    r = sys.y - sys.D @ np.array([CASE1_VALUES[0], -1.0])
    assert np.linalg.norm(r) <= 1e-6 * np.linalg.norm(sys.y)


def test_case3_forcing_is_subtracted(case3_snapshot, case3_path):
    f = derivative_fields(case3_snapshot, {"lap"})
    segs = segment_data(f, case3_path, ["lap(u)", "1"], forcing=manufactured_forcing)
    k = 2
    fk = f.select_segment(k)
    X, Y = np.meshgrid(fk.x, fk.y, indexing="ij")
    expect = fk["u_tt"] - (1 + 2 * CASE3_VALUES[k]) * np.exp(-fk.t) * (np.sin(X) * np.sin(Y))[..., None]
    assert np.allclose(segs[k].design.y, expect.reshape(-1), rtol=0, atol=1e-12)


def test_empty_and_degenerate():
    with pytest.raises(EmptySegmentError):
        build_design(_fields(u=np.ones((2, 0)), u_tt=np.ones((2, 0))), ["u"])
    f = _fields(u=np.zeros((2, 3)), u_tt=np.ones((2, 3)))
    with pytest.raises(DegenerateColumnError) as info:
        build_design(f, ["1", "u"])
    assert info.value.term == "u"


def test_non_finite_rows_dropped():
    u = np.ones((2, 3))
    utt = np.ones((2, 3))
    utt[1, 2] = np.nan
    sys = build_design(_fields(u=u, u_tt=utt), ["u"])
    assert sys.n_samples == 5 and sys.n_dropped == 1


def test_stride():
    f = _fields(u=np.arange(1.0, 13.0).reshape(3, 4), u_tt=np.ones((3, 4)))
    assert build_design(f, ["u"], stride=5).D[:, 0].tolist() == [1.0, 6.0, 11.0]


def test_design_csv_round_trip():
    f = _fields(u=np.array([[1.5, 2.0]]), u_tt=np.array([[0.25, 0.5]]))
    text = build_design(f, ["u", "u^2"]).to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "i0,j,y,u,u^2"
    assert float(lines[1].split(",")[-1]) == 2.25


# -- normalisation ------------------------------------------------------------------

def test_column_normalize_example():
    sys = DesignSystem(np.zeros(2), np.array([[3.0], [4.0]]), ["a"], np.zeros((2, 2)))
    scaled, scales = column_normalize(sys)
    assert np.allclose(scaled.D[:, 0], [0.6, 0.8])
    assert scales.tolist() == [5.0]


def test_column_normalize_identity():
    D = np.eye(3)
    scaled, scales = column_normalize(DesignSystem(np.ones(3), D, list("abc"), np.zeros((3, 2))))
    assert np.array_equal(scales, np.ones(3))


def test_unscaling_reproduces_least_squares():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((20, 4)) * [1.0, 100.0, 0.01, 5.0]
    y = rng.standard_normal(20)
    sys = DesignSystem(y, D, list("abcd"), np.zeros((20, 2)))
    scaled, scales = column_normalize(sys)
    ref = np.linalg.lstsq(D, y, rcond=None)[0]
    back = np.linalg.lstsq(scaled.D, y, rcond=None)[0] / scales
    assert np.allclose(back, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_normalize_rejects_zero_column():
    sys = DesignSystem(np.ones(2), np.array([[1.0, 0.0], [1.0, 0.0]]), ["a", "b"], np.zeros((2, 2)))
    with pytest.raises(DegenerateColumnError):
        column_normalize(sys)


@given(st.integers(0, 2**32 - 1))
def test_least_squares_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-2, 2, (5, 6))
    f = _fields(u=u, u_x=rng.standard_normal((5, 6)), u_tt=rng.standard_normal((5, 6)))
    sys = build_design(f, ["u", "u_x", "sin(u)", "u*u_x"])
    perm = rng.permutation(sys.n_samples)
    a = np.linalg.lstsq(sys.D, sys.y, rcond=None)[0]
    b = np.linalg.lstsq(sys.D[perm], sys.y[perm], rcond=None)[0]
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    # construction is deterministic
    again = build_design(f, ["u", "u_x", "sin(u)", "u*u_x"])
    assert np.array_equal(again.D, sys.D) and np.array_equal(again.y, sys.y)
