import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from ydg.lti import (SingularYoulaMap, TransferFunction, gang_of_four, is_hurwitz,
                     parse_tf, poly_from_roots, poly_roots, tf_eval, youla_controller)
from ydg.sampler import SampleConfig, derive_stream, sample_plant, sample_youla


def tf(num, den):
    return TransferFunction(num, den)


def test_poly_roots_examples():
    np.testing.assert_allclose(sorted(poly_roots([1, 3, 2]).real), [-2, -1], atol=1e-12)
    r = poly_roots([1, 0, 1])
    np.testing.assert_allclose(sorted(r.imag), [-1, 1], atol=1e-12)
    np.testing.assert_allclose(r.real, 0, atol=1e-12)
    np.testing.assert_allclose(poly_roots([2, -2]), [1.0])


def test_poly_roots_degenerate():
    assert poly_roots([5.0]).size == 0
    assert poly_roots([0, 0, 3.0]).size == 0
    with pytest.raises(ValueError):
        poly_roots([0.0, 0.0])


coeff = st.floats(-10, 10, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=4), coeff)
def test_roots_round_trip(tail, lead):
    p = np.array([lead, *tail])
    back = poly_from_roots(poly_roots(p), lead)
    np.testing.assert_allclose(back, p, rtol=1e-8, atol=1e-8 * np.max(np.abs(p)))


@pytest.mark.parametrize("p, expected", [([1, 3, 2], True), ([1, -1, 2], False),
                                         ([1, 0, 1], False), ([7.0], True)])
def test_is_hurwitz(p, expected):
    rep = is_hurwitz(p)
    assert rep.is_hurwitz is expected
    assert rep.is_hurwitz == (rep.max_real_part < -1e-9)


def test_marginal_root_is_unstable():
    assert not is_hurwitz([1, 1e-10]).is_hurwitz
    assert is_hurwitz([1, 1e-8]).is_hurwitz


def test_tf_eval():
    G = tf([1], [1, 1])
    assert tf_eval(G, 0.0) == 1 + 0j
    assert tf_eval(G, 1.0) == pytest.approx(0.5 - 0.5j)
    assert abs(tf_eval(tf([1, 0], [1, 1]), 1e-9)) < 1e-8
    with pytest.raises(ZeroDivisionError):
        tf_eval(tf([1], [1, 0, 1]), 1.0)


def test_transfer_function_validation():
    with pytest.raises(ValueError):
        tf([1, 0, 0], [1, 1])
    with pytest.raises(ValueError):
        tf([1], [0, 0])
    assert tf([0, 0, 1], [0, 1, 1]).coeffs().tolist() == [0, 0, 1, 0, 1, 1]


def _symbolic_controller(G, Q):
    s = sp.symbols("s")
    P = lambda c: sum(sp.nsimplify(float(v)) * s ** (len(c) - 1 - i) for i, v in enumerate(c))
    g = P(G.num) / P(G.den)
    q = P(Q.num) / P(Q.den)
    return s, sp.cancel(q / (1 - g * q))


@pytest.mark.parametrize("q", [([1], [1]), ([1], [1, 2]), ([0, 2, 1], [1, 3, 2]),
                               ([0.5, 1, 0.3], [1, 0.7, 0.2])])
def test_youla_controller_matches_symbolic(q):
    G = tf([1], [1, 1])
    Q = tf(*q)
    C = youla_controller(G, Q)
    s, ref = _symbolic_controller(G, Q)
    num, den = sp.fraction(ref)
    for w in (0.1, 1.0, 7.0):
        want = complex(sp.N((num / den).subs(s, 1j * w)))
        assert C(1j * w) == pytest.approx(want, rel=1e-10)


def test_youla_controller_examples():
    G = tf([1], [1, 1])
    C = youla_controller(G, tf([1], [1]))
    np.testing.assert_allclose(C.num, [1, 1])
    np.testing.assert_allclose(C.den, [1, 0])
    C = youla_controller(G, tf([1], [1, 2]))
    np.testing.assert_allclose(C.num, [1, 1])
    np.testing.assert_allclose(C.den, [1, 3, 1])


def test_youla_zero_q_gives_zero_controller():
    rng = derive_stream(3, 0)
    for _ in range(20):
        C = youla_controller(sample_plant(SampleConfig(), rng), tf([0], [1]))
        assert C.is_zero


def test_youla_singular():
    with pytest.raises(SingularYoulaMap):
        youla_controller(tf([1], [1]), tf([1], [1]))


def test_gang_of_four_examples():
    G = tf([1], [1, 1])
    S, T, CS, GS = gang_of_four(G, tf([0], [1]))
    for w in (0.0, 0.5, 3.0):
        assert S(1j * w) == pytest.approx(1)
        assert T(1j * w) == 0
        assert CS(1j * w) == 0
        assert GS(1j * w) == pytest.approx(G(1j * w))
    S, T, _, _ = gang_of_four(G, tf([1], [1]))
    for w in (0.1, 2.0):
        assert S(1j * w) == pytest.approx((1j * w) / (1j * w + 1))
        assert T(1j * w) == pytest.approx(1 / (1j * w + 1))


def test_gang_of_four_stable_and_consistent():
    cfg = SampleConfig()
    rng = derive_stream(5, 0)
    grid = np.logspace(-3, 3, 200)
    for _ in range(300):
        G, Q = sample_plant(cfg, rng), sample_youla(cfg, rng)
        four = gang_of_four(G, Q)
        assert all(is_hurwitz(f.den).is_hurwitz for f in four)
        C = youla_controller(G, Q)
        s = 1j * grid
        S_direct = 1 / (1 + G(s) * C(s))
        assert np.max(np.abs(four[0](s) - S_direct)) < 1e-8


def test_parse_tf():
    G = parse_tf("num=0,0,1;den=1,2,1")
    np.testing.assert_array_equal(G.coeffs(), [0, 0, 1, 1, 2, 1])
    with pytest.raises(ValueError):
        parse_tf("num=1,2")
