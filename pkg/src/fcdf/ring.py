"""Exact arithmetic in the negacyclic polynomial ring R_q = Z_q[X]/(X^n + 1).

Coefficients are numpy uint64 vectors reduced into [0, q).  The modulus is an
odd prime with q = 1 (mod 2n), which guarantees a primitive 2n-th root of
unity psi and therefore an exact O(n log n) number-theoretic transform for
negacyclic multiplication.

Products of two moduli this size overflow int64, so multiplication is done
with 64-bit wrapping tricks: twiddle factors use Shoup's precomputed-quotient
multiplication with lazy reduction (intermediate values live in [0, 4q),
hence the q < 2^62 cap), and variable*variable products go through Montgomery
reduction.  Both reduce exactly; nothing here is floating point.

A polynomial carries a domain tag: COEFF for the standard coefficient vector,
NTT for its transform.  Mixing domains in an operation is a contract error,
which keeps the fast "stay in the transform domain" paths honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError, ValidationError

COEFF = "coeff"
NTT = "ntt"

_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# Deterministic Miller-Rabin witness set for every candidate below 2^64.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_probable_prime(m: int) -> bool:
    """Deterministic Miller-Rabin for m < 2^64."""
    if m < 2:
        return False
    for p in _MR_BASES:
        if m % p == 0:
            return m == p
    d = m - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, m)
        if x in (1, m - 1):
            continue
        for _ in range(r - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def _find_modulus(n: int, q_bits: int) -> int:
    """Smallest prime q >= 2^(q_bits-1) with q = 1 (mod 2n), below 2^q_bits."""
    step = 2 * n
    start = 1 << (q_bits - 1)
    q = start + (1 - start) % step  # first value >= start with q = 1 (mod 2n)
    while q < 1 << q_bits:
        if is_probable_prime(q):
            return q
        q += step
    raise ParameterError(
        f"no prime q = 1 (mod {step}) in [2^{q_bits - 1}, 2^{q_bits})"
    )


def _primitive_2n_root(n: int, q: int) -> int:
    """A primitive 2n-th root of unity mod q (2n is a power of two)."""
    exponent = (q - 1) // (2 * n)
    for x in range(2, q):
        psi = pow(x, exponent, q)
        # order divides 2n (a 2-power), so order == 2n iff psi^n == -1
        if pow(psi, n, q) == q - 1:
            return psi
    raise ParameterError(f"no primitive {2 * n}-th root of unity mod {q}")


def _shoup(values: list[int], q: int):
    """(w, floor(w*2^64/q) split into 32-bit halves) for Shoup multiplication."""
    w = np.array(values, dtype=np.uint64)
    wsh = np.array([(v << 64) // q for v in values], dtype=np.uint64)
    return w, wsh & _MASK32, wsh >> _SHIFT32


def _mulhi(x, y_lo, y_hi):
    """High 64 bits of x*y, with y pre-split into 32-bit halves."""
    x_lo = x & _MASK32
    x_hi = x >> _SHIFT32
    ll = x_lo * y_lo
    hl = x_hi * y_lo
    lh = x_lo * y_hi
    cross = (ll >> _SHIFT32) + (hl & _MASK32) + (lh & _MASK32)
    return x_hi * y_hi + (hl >> _SHIFT32) + (lh >> _SHIFT32) + (cross >> _SHIFT32)


class RingParams:
    """Ring degree, modulus and the precomputed transform tables.

    Immutable after construction and shareable across threads.  Equality is
    by (n, q); the tables are a deterministic function of those.
    """

    def __init__(self, n: int, q: int):
        if n < 16 or n & (n - 1) != 0:
            raise ValidationError(f"ring degree must be a power of two >= 16, got {n}")
        if q.bit_length() > 62:
            raise ParameterError(f"modulus must fit 62 bits, got {q.bit_length()}")
        if not is_probable_prime(q):
            raise ParameterError(f"modulus {q} is not prime")
        if (q - 1) % (2 * n) != 0:
            raise ParameterError(f"modulus {q} is not 1 mod 2n = {2 * n}")
        self.n = n
        self.q = q
        self.psi = _primitive_2n_root(n, q)
        self._build_tables()

    def _build_tables(self):
        n, q, psi = self.n, self.q, self.psi
        self.logn = n.bit_length() - 1
        self._Q = np.uint64(q)
        self._TWOQ = np.uint64(2 * q)
        # Montgomery constants for variable*variable products (R = 2^64).
        self._qinv_neg = np.uint64((-pow(q, -1, 1 << 64)) % (1 << 64))
        self._r2 = np.uint64((1 << 128) % q)
        self._q_split = (self._Q & _MASK32, self._Q >> _SHIFT32)

        rev = np.zeros(n, dtype=np.intp)
        for i in range(n):
            rev[i] = int(format(i, f"0{self.logn}b")[::-1], 2)
        self._rev = rev

        def powers(base: int, count: int) -> list[int]:
            out = []
            w = 1
            for _ in range(count):
                out.append(w)
                w = w * base % q
            return out

        omega = psi * psi % q
        omega_inv = pow(omega, q - 2, q)
        self._fwd_stages = []
        self._inv_stages = []
        for s in range(1, self.logn + 1):
            m = 1 << s
            self._fwd_stages.append(_shoup(powers(pow(omega, n // m, q), m // 2), q))
            self._inv_stages.append(_shoup(powers(pow(omega_inv, n // m, q), m // 2), q))

        psi_inv = pow(psi, q - 2, q)
        n_inv = pow(n, q - 2, q)
        self._twist = _shoup(powers(psi, n), q)
        # untwist folds the 1/n scaling of the inverse transform
        self._untwist = _shoup([p * n_inv % q for p in powers(psi_inv, n)], q)

    def __eq__(self, other):
        return isinstance(other, RingParams) and self.n == other.n and self.q == other.q

    def __hash__(self):
        return hash((self.n, self.q))

    def __repr__(self):
        return f"RingParams(n={self.n}, q={self.q})"


def make_params(n: int, q_bits: int = 54) -> RingParams:
    """Ring parameters with the smallest q >= 2^(q_bits-1), q = 1 (mod 2n)."""
    if n < 16 or n & (n - 1) != 0:
        raise ValidationError(f"ring degree must be a power of two >= 16, got {n}")
    if not 40 <= q_bits <= 62:
        raise ValidationError(f"q_bits must lie in [40, 62], got {q_bits}")
    return RingParams(n, _find_modulus(n, q_bits))


@dataclass(eq=False)
class RingPoly:
    """Element of R_q: n residues plus the domain tag (COEFF or NTT)."""

    coeffs: np.ndarray
    params: RingParams
    domain: str = COEFF

    def copy(self) -> "RingPoly":
        return RingPoly(self.coeffs.copy(), self.params, self.domain)


def poly_from_ints(params: RingParams, values, domain: str = COEFF) -> RingPoly:
    """Build a polynomial from arbitrary integers, reduced mod q."""
    arr = np.asarray(values, dtype=object)
    if arr.shape != (params.n,):
        raise ValidationError(f"expected {params.n} coefficients, got {arr.shape}")
    return RingPoly(np.array([int(v) % params.q for v in arr], dtype=np.uint64),
                    params, domain)


def zero_poly(params: RingParams, domain: str = COEFF) -> RingPoly:
    return RingPoly(np.zeros(params.n, dtype=np.uint64), params, domain)


def _check_pair(a: RingPoly, b: RingPoly):
    if a.params != b.params:
        raise ContractError(f"ring params mismatch: {a.params} vs {b.params}")
    if a.domain != b.domain:
        raise ContractError(f"domain mismatch: {a.domain} vs {b.domain}")


def _shoup_mul(v, table, Q):
    """Shoup multiplication by a precomputed constant: exact result in [0, 2q)."""
    w, wsh_lo, wsh_hi = table
    return v * w - _mulhi(v, wsh_lo, wsh_hi) * Q


def _transform(values: np.ndarray, params: RingParams, stages) -> np.ndarray:
    """Iterative radix-2 DIT transform, lazy reduction in [0, 4q)."""
    Q, TWOQ = params._Q, params._TWOQ
    a = values[..., params._rev].copy()
    for s in range(1, params.logn + 1):
        m = 1 << s
        half = m >> 1
        blocks = a.reshape(-1, m)
        u = blocks[:, :half]
        v = blocks[:, half:]
        np.subtract(u, TWOQ, out=u, where=u >= TWOQ)
        t = _shoup_mul(v, stages[s - 1], Q)
        blocks[:, half:] = u + TWOQ - t
        np.add(u, t, out=u)
    np.subtract(a, TWOQ, out=a, where=a >= TWOQ)
    np.subtract(a, Q, out=a, where=a >= Q)
    return a


def _ntt_forward_raw(values: np.ndarray, params: RingParams) -> np.ndarray:
    twisted = _shoup_mul(values, params._twist, params._Q)  # in [0, 2q)
    return _transform(twisted, params, params._fwd_stages)


def _ntt_inverse_raw(values: np.ndarray, params: RingParams) -> np.ndarray:
    a = _transform(values, params, params._inv_stages)
    a = _shoup_mul(a, params._untwist, params._Q)
    np.subtract(a, params._Q, out=a, where=a >= params._Q)
    return a


def ntt_forward(p: RingPoly) -> RingPoly:
    """Transform to the evaluation domain: slot k holds p(psi^(2k+1))."""
    if p.domain != COEFF:
        raise ContractError("ntt_forward expects a coefficient-domain polynomial")
    return RingPoly(_ntt_forward_raw(p.coeffs, p.params), p.params, NTT)


def ntt_inverse(p: RingPoly) -> RingPoly:
    """Exact inverse of ntt_forward."""
    if p.domain != NTT:
        raise ContractError("ntt_inverse expects an NTT-domain polynomial")
    return RingPoly(_ntt_inverse_raw(p.coeffs, p.params), p.params, COEFF)


def poly_add(a: RingPoly, b: RingPoly) -> RingPoly:
    _check_pair(a, b)
    out = a.coeffs + b.coeffs
    np.subtract(out, a.params._Q, out=out, where=out >= a.params._Q)
    return RingPoly(out, a.params, a.domain)


def poly_sub(a: RingPoly, b: RingPoly) -> RingPoly:
    _check_pair(a, b)
    out = a.coeffs + a.params._Q - b.coeffs
    np.subtract(out, a.params._Q, out=out, where=out >= a.params._Q)
    return RingPoly(out, a.params, a.domain)


def poly_neg(a: RingPoly) -> RingPoly:
    out = a.params._Q - a.coeffs
    np.subtract(out, a.params._Q, out=out, where=a.coeffs == 0)
    return RingPoly(out, a.params, a.domain)


def _mont_mul(x, y, params: RingParams):
    """x*y mod q by Montgomery reduction; inputs in [0, q)."""
    y = np.asarray(y, dtype=np.uint64)
    t_lo = x * y
    t_hi = _mulhi(x, y & _MASK32, y >> _SHIFT32)
    m = t_lo * params._qinv_neg
    mq_hi = _mulhi(m, *params._q_split)
    res = t_hi + mq_hi + (t_lo != 0).astype(np.uint64)
    return np.where(res >= params._Q, res - params._Q, res)


def _pointwise_mul(x: np.ndarray, y: np.ndarray, params: RingParams) -> np.ndarray:
    """Slot-wise x*y mod q (two Montgomery passes)."""
    return _mont_mul(_mont_mul(x, params._r2, params), y, params)


def poly_mul(a: RingPoly, b: RingPoly) -> RingPoly:
    """Negacyclic product (X^n = -1).

    Coefficient-domain inputs run the full NTT route and return a
    coefficient-domain result; NTT-domain inputs multiply slot-wise and stay
    in the NTT domain.
    """
    _check_pair(a, b)
    if a.domain == NTT:
        return RingPoly(_pointwise_mul(a.coeffs, b.coeffs, a.params), a.params, NTT)
    fa = _ntt_forward_raw(a.coeffs, a.params)
    fb = _ntt_forward_raw(b.coeffs, b.params)
    return RingPoly(_ntt_inverse_raw(_pointwise_mul(fa, fb, a.params), a.params),
                    a.params, COEFF)


def poly_mul_schoolbook(a: RingPoly, b: RingPoly) -> RingPoly:
    """O(n^2) big-integer reference multiplication; the correctness oracle."""
    _check_pair(a, b)
    if a.domain != COEFF:
        raise ContractError("schoolbook multiplication works on coefficients")
    n, q = a.params.n, a.params.q
    x = [int(v) for v in a.coeffs]
    y = [int(v) for v in b.coeffs]
    res = [0] * n
    for i in range(n):
        xi = x[i]
        if xi == 0:
            continue
        for j in range(n):
            k = i + j
            p = xi * y[j]
            if k >= n:
                res[k - n] -= p
            else:
                res[k] += p
    return RingPoly(np.array([v % q for v in res], dtype=np.uint64), a.params, COEFF)


def sample_uniform(params: RingParams, rng: np.random.Generator,
                   domain: str = COEFF) -> RingPoly:
    """Uniform element of R_q (uniform in either domain; NTT is a bijection)."""
    return RingPoly(rng.integers(0, params.q, size=params.n, dtype=np.uint64),
                    params, domain)


def sample_ternary(params: RingParams, rng: np.random.Generator) -> RingPoly:
    """Each coefficient uniform over {-1, 0, 1}, stored mod q."""
    raw = rng.integers(-1, 2, size=params.n, dtype=np.int64)
    return poly_from_signed(params, raw)


def sample_error(params: RingParams, rng: np.random.Generator) -> RingPoly:
    """Centered binomial noise, eta = 2: support [-2, 2], variance 1."""
    raw = rng.binomial(4, 0.5, size=params.n).astype(np.int64) - 2
    return poly_from_signed(params, raw)


def poly_from_signed(params: RingParams, values: np.ndarray) -> RingPoly:
    """Small signed int64 values lifted into [0, q)."""
    out = values.astype(np.int64) % np.int64(params.q)
    return RingPoly(out.astype(np.uint64), params, COEFF)


def poly_to_signed(p: RingPoly) -> np.ndarray:
    """Centered representative of each coefficient in (-q/2, q/2], as Python ints."""
    q = p.params.q
    half = q // 2
    return np.array([int(c) - q if int(c) > half else int(c) for c in p.coeffs],
                    dtype=object)
