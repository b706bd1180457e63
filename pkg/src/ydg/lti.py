"""Polynomial and transfer-function algebra for continuous-time SISO systems.

Polynomials are 1-D coefficient arrays in descending powers of ``s``.
"""
from dataclasses import dataclass

import numpy as np

#: Roots with real part >= -STAB_EPS count as unstable.
STAB_EPS = 1e-9

#: Stored width of each numerator/denominator in the coefficient encoding of G and Q.
COEFF_WIDTH = 3


class SingularYoulaMap(ValueError):
    pass


def trim(p):
    """Drop leading zeros; the all-zero polynomial becomes ``[0.0]``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise ValueError("polynomial must be a non-empty 1-D sequence")
    nz = np.flatnonzero(p)
    if nz.size == 0:
        return np.zeros(1)
    return p[nz[0]:]


def degree(p):
    p = trim(p)
    return p.size - 1


def pad(p, width):
    """Left-pad with zeros to exactly ``width`` coefficients."""
    p = trim(p)
    if p.size > width:
        raise ValueError(f"degree {p.size - 1} does not fit in {width} coefficients")
    return np.concatenate([np.zeros(width - p.size), p])


def poly_add(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(a.size, b.size)
    return np.concatenate([np.zeros(n - a.size), a]) + np.concatenate([np.zeros(n - b.size), b])


def poly_mul(a, b):
    return np.convolve(np.asarray(a, float), np.asarray(b, float))


def companion(p):
    """Frobenius companion matrix of a polynomial of degree >= 1."""
    p = trim(p)
    n = p.size - 1
    c = np.zeros((n, n))
    c[0, :] = -p[1:] / p[0]
    c[1:, :-1] = np.eye(n - 1)
    return c


def poly_roots(p):
    """All roots of ``p`` as companion-matrix eigenvalues.

    A constant (degree-0) polynomial has no roots and yields an empty array.
    """
    p = trim(p)
    if not np.all(np.isfinite(p)):
        raise ValueError("polynomial has non-finite coefficients")
    if p.size == 1:
        if p[0] == 0.0:
            raise ValueError("the zero polynomial has no well-defined roots")
        return np.zeros(0, dtype=complex)
    return np.linalg.eigvals(companion(p)).astype(complex)


def poly_from_roots(roots, lead=1.0):
    """Expand ``lead * prod(s - r)``; conjugate pairs give real coefficients."""
    p = np.array([1.0 + 0j])
    for r in roots:
        p = np.convolve(p, [1.0, -r])
    return lead * p.real


@dataclass(frozen=True)
class StabilityReport:
    roots: np.ndarray
    max_real_part: float
    is_hurwitz: bool


def is_hurwitz(p):
    roots = poly_roots(p)
    if roots.size == 0:
        return StabilityReport(roots, -np.inf, True)
    mrp = float(np.max(roots.real))
    return StabilityReport(roots, mrp, mrp < -STAB_EPS)


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Rational function ``num(s) / den(s)``.

    Coefficients are kept exactly as given (no cancellation); properness is
    checked on the effective (trimmed) degrees.
    """

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = np.atleast_1d(np.asarray(self.num, dtype=float)).copy()
        den = np.atleast_1d(np.asarray(self.den, dtype=float)).copy()
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise ValueError("transfer function coefficients must be finite")
        if not np.any(den):
            raise ValueError("denominator is identically zero")
        if np.any(num) and degree(num) > degree(den):
            raise ValueError("transfer function must be proper")
        num.flags.writeable = False
        den.flags.writeable = False
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def from_coeffs(cls, v, width=COEFF_WIDTH):
        """Inverse of :meth:`coeffs`: ``[num..., den...]`` of ``2 * width`` entries."""
        v = np.asarray(v, dtype=float)
        if v.shape != (2 * width,):
            raise ValueError(f"expected {2 * width} coefficients, got shape {v.shape}")
        return cls(v[:width], v[width:])

    def coeffs(self, width=COEFF_WIDTH):
        """Fixed-width encoding ``[num (width), den (width)]``, zero-padded on the left."""
        return np.concatenate([pad(self.num, width), pad(self.den, width)])

    def __call__(self, s):
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    @property
    def is_zero(self):
        return not np.any(self.num)

    def dc_gain(self):
        return self.num[-1] / self.den[-1]

    def poles(self):
        return poly_roots(self.den)

    def is_stable(self):
        return is_hurwitz(self.den).is_hurwitz

    def __repr__(self):
        return f"TransferFunction(num={self.num.tolist()}, den={self.den.tolist()})"


def tf_eval(tf, omega):
    """Frequency response ``tf(j*omega)``; raises if a pole sits on that frequency."""
    s = 1j * np.asarray(omega, dtype=float)
    d = np.polyval(tf.den, s)
    if np.any(d == 0):
        raise ZeroDivisionError("pole on the evaluation frequency")
    return np.polyval(tf.num, s) / d


def youla_controller(G, Q):
    """Controller ``C = Q / (1 - G Q)`` for a stable plant ``G``.

    Returned in unreduced product form: ``num = numQ*denG``,
    ``den = denQ*denG - numG*numQ``; only leading zeros are trimmed.
    """
    num = poly_mul(Q.num, G.den)
    den = poly_add(poly_mul(Q.den, G.den), -poly_mul(G.num, Q.num))
    if not np.any(den):
        raise SingularYoulaMap("singular Youla map: 1 - G Q is identically zero")
    if not np.any(num):
        return TransferFunction([0.0], [1.0])
    return TransferFunction(trim(num), trim(den))


def gang_of_four(G, Q):
    """Closed-loop maps ``(S, T, CS, GS)`` of ``G`` with the Youla controller of ``Q``.

    With ``C = Q/(1 - GQ)``: ``S = 1 - GQ``, ``T = GQ``, ``CS = Q`` and
    ``GS = G(1 - GQ)``. Their joint stability certifies internal stability.
    """
    dgq = poly_mul(G.den, Q.den)
    ngq = poly_mul(G.num, Q.num)
    S = TransferFunction(poly_add(dgq, -ngq), dgq)
    T = TransferFunction(ngq, dgq)
    CS = TransferFunction(Q.num, Q.den)
    GS = TransferFunction(poly_mul(G.num, S.num), poly_mul(G.den, dgq))
    return S, T, CS, GS


def closed_loop(G, C):
    """``(T, S)`` of the unity-feedback loop built from an arbitrary controller ``C``."""
    ngc = poly_mul(G.num, C.num)
    den = poly_add(poly_mul(G.den, C.den), ngc)
    return TransferFunction(ngc, den), TransferFunction(poly_mul(G.den, C.den), den)


def parse_tf(text):
    """Parse ``"num=a,b,c;den=d,e,f"`` (descending powers of s)."""
    parts = {}
    for chunk in text.split(";"):
        key, sep, vals = chunk.partition("=")
        if not sep:
            raise ValueError(f"malformed transfer function field {chunk!r}")
        parts[key.strip()] = [float(v) for v in vals.split(",")]
    if set(parts) != {"num", "den"}:
        raise ValueError("transfer function needs exactly 'num=' and 'den=' fields")
    return TransferFunction(parts["num"], parts["den"])


def format_tf(tf, width=COEFF_WIDTH):
    v = tf.coeffs(width)
    return "num={};den={}".format(",".join(repr(float(c)) for c in v[:width]),
                                  ",".join(repr(float(c)) for c in v[width:]))
