"""Additive homomorphic encryption of fixed-point vectors over R_q.

The scheme is deliberately minimal: messages are packed into polynomial
coefficients, scaled by delta = floor(q/p), and masked with a ring-LWE pair.
Only addition is supported, which is all the aggregation pipeline needs.

Key handling follows the protocol's trust model literally: a trusted keygen
step hands *both* keys to every client, and encryption uses the shared secret
s directly (ct = (-a, a*s + delta*m + e) with a fresh uniform a per
ciphertext).  A conventional public key b = -(a*s + e) is still generated,
kept in the API and checked in tests, but the default encrypt path never
reads it.  This is a documented design choice, not an oversight; anyone
wanting textbook public-key hygiene must not reuse this scheme as-is.

Representation note: in memory, ciphertext polynomials live in the NTT
domain, so encryption and decryption cost one transform each.  The byte
formats (key files, ciphertext blobs) always carry standard coefficient
vectors, little-endian.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ring
from .errors import ContractError, EncodingError, NoiseBudgetError, ValidationError

KEY_MAGIC = b"FCDFKEY1"
KEY_VERSION = 0x01
KEY_KIND_SECRET = 0x01
KEY_KIND_PUBLIC = 0x02

# infinity-norm bound of one fresh encryption's noise (centered binomial, eta=2)
FRESH_NOISE_BOUND = 2


class SchemeParams:
    """Ring parameters plus the fixed-point encoding layout."""

    def __init__(self, ring_params: ring.RingParams, scale_bits: int = 16,
                 plain_modulus_bits: int = 26):
        if not 0 < scale_bits < plain_modulus_bits:
            raise ValidationError(
                "scale_bits must be positive and below plain_modulus_bits "
                f"(got {scale_bits} vs {plain_modulus_bits})"
            )
        self.ring = ring_params
        self.scale_bits = scale_bits
        self.plain_modulus_bits = plain_modulus_bits
        self.p = 1 << plain_modulus_bits
        self.scale = 1 << scale_bits
        self.delta = ring_params.q // self.p
        if self.delta // 2 <= FRESH_NOISE_BOUND:
            raise ValidationError(
                f"modulus {ring_params.q} leaves no room under p=2^{plain_modulus_bits}"
            )
        # headroom: plaintext sums must stay below p, accumulated noise below delta/2
        self.max_sum_depth = min(
            1 << (plain_modulus_bits - scale_bits),
            (self.delta // 2 - 1) // FRESH_NOISE_BOUND,
        )

    def __eq__(self, other):
        return (
            isinstance(other, SchemeParams)
            and self.ring == other.ring
            and self.scale_bits == other.scale_bits
            and self.plain_modulus_bits == other.plain_modulus_bits
        )

    def __hash__(self):
        return hash((self.ring, self.scale_bits, self.plain_modulus_bits))

    def __repr__(self):
        return (f"SchemeParams(n={self.ring.n}, q={self.ring.q}, "
                f"scale_bits={self.scale_bits}, p=2^{self.plain_modulus_bits})")


def default_scheme(n: int = 4096, q_bits: int = 54, scale_bits: int = 16,
                   plain_modulus_bits: int = 26) -> SchemeParams:
    return SchemeParams(ring.make_params(n, q_bits), scale_bits, plain_modulus_bits)


@dataclass(eq=False)
class SecretKey:
    """The shared ternary secret s."""

    s: ring.RingPoly
    _s_ntt: ring.RingPoly | None = field(default=None, repr=False)

    def s_ntt(self) -> ring.RingPoly:
        if self._s_ntt is None:
            self._s_ntt = ring.ntt_forward(self.s)
        return self._s_ntt


@dataclass(eq=False)
class PublicKey:
    """(b, a) with b = -(a*s + e); unused by the default encrypt path."""

    b: ring.RingPoly
    a: ring.RingPoly


@dataclass(eq=False)
class PlainVector:
    """Real values in [0, bound] destined for (or recovered from) slots."""

    values: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.values) == 0:
            raise ValidationError("plain vector must be non-empty and 1-d")
        if not np.isfinite(self.values).all():
            raise ValidationError("plain vector contains non-finite values")

    @property
    def slot_count(self) -> int:
        return len(self.values)


@dataclass(eq=False)
class Ciphertext:
    """RLWE pair; polynomials held in NTT domain, serialized as coefficients."""

    c0: ring.RingPoly
    c1: ring.RingPoly
    slot_count: int
    sum_depth: int
    scheme: SchemeParams


def keygen(scheme: SchemeParams, rng: np.random.Generator) -> tuple[SecretKey, PublicKey]:
    """Sample the shared secret and the (unused-by-default) public key."""
    s = ring.sample_ternary(scheme.ring, rng)
    e = ring.sample_error(scheme.ring, rng)
    a = ring.sample_uniform(scheme.ring, rng)
    b = ring.poly_neg(ring.poly_add(ring.poly_mul(a, s), e))
    return SecretKey(s), PublicKey(b, a)


def encode(v: PlainVector, scheme: SchemeParams) -> np.ndarray:
    """Fixed-point lift: m_i = rint(v_i * 2^scale_bits), ties to even."""
    if v.slot_count > scheme.ring.n:
        raise EncodingError(f"{v.slot_count} values exceed the {scheme.ring.n} slots")
    if v.bound * scheme.scale >= scheme.p:
        raise EncodingError(
            f"bound {v.bound} at scale 2^{scheme.scale_bits} overflows p=2^{scheme.plain_modulus_bits}"
        )
    if (v.values < 0).any() or (v.values > v.bound).any():
        raise EncodingError(f"values outside [0, {v.bound}]")
    return np.rint(v.values * scheme.scale).astype(np.uint64)


def decode(messages: np.ndarray, scheme: SchemeParams) -> np.ndarray:
    return messages.astype(np.float64) / scheme.scale


def _payload_poly(messages: np.ndarray, e: ring.RingPoly, scheme: SchemeParams) -> np.ndarray:
    """delta*m + e as a reduced coefficient vector."""
    coeffs = np.zeros(scheme.ring.n, dtype=np.uint64)
    coeffs[: len(messages)] = np.uint64(scheme.delta) * messages
    out = coeffs + e.coeffs
    np.subtract(out, scheme.ring._Q, out=out, where=out >= scheme.ring._Q)
    return out


def encrypt(sk: SecretKey, v: PlainVector, scheme: SchemeParams,
            rng: np.random.Generator) -> Ciphertext:
    """ct = (-a, a*s + delta*m + e) with fresh uniform a and fresh noise e."""
    messages = encode(v, scheme)
    a_hat = ring.sample_uniform(scheme.ring, rng, domain=ring.NTT)
    e = ring.sample_error(scheme.ring, rng)
    payload = ring.RingPoly(_payload_poly(messages, e, scheme), scheme.ring)
    c1 = ring.poly_add(ring.poly_mul(a_hat, sk.s_ntt()), ring.ntt_forward(payload))
    return Ciphertext(ring.poly_neg(a_hat), c1, v.slot_count, 1, scheme)


def encrypt_many(sk: SecretKey, vectors: list[PlainVector], scheme: SchemeParams,
                 rng: np.random.Generator) -> list[Ciphertext]:
    """Batch encrypt.

    Consumes the random stream exactly like the same number of encrypt()
    calls (and therefore produces identical ciphertexts); only the transforms
    are batched.
    """
    if not vectors:
        return []
    n = scheme.ring.n
    a_hats = np.empty((len(vectors), n), dtype=np.uint64)
    payloads = np.empty((len(vectors), n), dtype=np.uint64)
    for i, v in enumerate(vectors):
        messages = encode(v, scheme)
        a_hats[i] = ring.sample_uniform(scheme.ring, rng, domain=ring.NTT).coeffs
        payloads[i] = _payload_poly(messages, ring.sample_error(scheme.ring, rng), scheme)
    payload_hat = ring._ntt_forward_raw(payloads, scheme.ring)
    s_hat = sk.s_ntt().coeffs
    c1s = ring._pointwise_mul(a_hats, s_hat, scheme.ring) + payload_hat
    np.subtract(c1s, scheme.ring._Q, out=c1s, where=c1s >= scheme.ring._Q)
    out = []
    for i, v in enumerate(vectors):
        c0 = ring.poly_neg(ring.RingPoly(a_hats[i], scheme.ring, ring.NTT))
        c1 = ring.RingPoly(c1s[i], scheme.ring, ring.NTT)
        out.append(Ciphertext(c0, c1, v.slot_count, 1, scheme))
    return out


def _check_addable(x: Ciphertext, y: Ciphertext):
    if x.scheme != y.scheme:
        raise ContractError("ciphertexts use different scheme parameters")
    if x.slot_count != y.slot_count:
        raise ContractError(
            f"slot_count mismatch: {x.slot_count} vs {y.slot_count}"
        )


def ct_add(x: Ciphertext, y: Ciphertext) -> Ciphertext:
    """Slot-wise homomorphic addition; needs no key material."""
    _check_addable(x, y)
    depth = x.sum_depth + y.sum_depth
    if depth > x.scheme.max_sum_depth:
        raise NoiseBudgetError(
            f"summing {depth} ciphertexts exceeds the budget of "
            f"{x.scheme.max_sum_depth} at these parameters"
        )
    return Ciphertext(
        ring.poly_add(x.c0, y.c0),
        ring.poly_add(x.c1, y.c1),
        x.slot_count,
        depth,
        x.scheme,
    )


def ct_sum(cts: list[Ciphertext]) -> Ciphertext:
    if not cts:
        raise ValidationError("cannot sum zero ciphertexts")
    acc = cts[0]
    for ct in cts[1:]:
        acc = ct_add(acc, ct)
    return acc


def _noisy_plaintext(sk: SecretKey, ct: Ciphertext) -> np.ndarray:
    """c1 + c0*s back in coefficient form: delta*m + accumulated noise."""
    noisy = ring.poly_add(ct.c1, ring.poly_mul(ct.c0, sk.s_ntt()))
    return ring.ntt_inverse(noisy).coeffs


def decrypt(sk: SecretKey, ct: Ciphertext, scheme: SchemeParams) -> PlainVector:
    """Round each slot to the nearest multiple of delta (ties to even), decode."""
    if ct.scheme != scheme:
        raise ContractError("ciphertext does not match the supplied scheme")
    raw = _noisy_plaintext(sk, ct)[: ct.slot_count].astype(np.int64)
    delta = scheme.delta
    k0 = raw // delta
    rem = raw - k0 * delta
    up = (2 * rem > delta) | ((2 * rem == delta) & (k0 % 2 == 1))
    m = (k0 + up) % scheme.p
    return PlainVector(decode(m.astype(np.uint64), scheme),
                       bound=scheme.p / scheme.scale)


def noise_budget(sk: SecretKey, ct: Ciphertext, expected: PlainVector,
                 scheme: SchemeParams) -> float:
    """Remaining bits before noise would flip a rounding decision.

    Needs the true plaintext the ciphertext carries, i.e. for aggregates the
    sum of the *encoded* (quantized) summands; handing in unquantized floats
    makes encoding error masquerade as noise.  Positive means the ciphertext
    decrypts correctly with margin to spare.  A noiseless ciphertext reports
    the full log2(delta/2) budget.
    """
    q = scheme.ring.q
    Q = scheme.ring._Q
    messages = np.rint(expected.values * scheme.scale).astype(np.uint64)
    target = np.zeros(scheme.ring.n, dtype=np.uint64)
    target[: len(messages)] = (np.uint64(scheme.delta) * messages) % Q
    diff = _noisy_plaintext(sk, ct) + Q - target  # in [0, 2q), no wrap: q < 2^62
    np.subtract(diff, Q, out=diff, where=diff >= Q)
    centered = diff.astype(np.int64)
    centered[diff > q // 2] -= q
    max_noise = max(1, int(np.abs(centered).max()))
    return math.log2(scheme.delta / 2) - math.log2(max_noise)


# --- byte formats ----------------------------------------------------------

def _key_header(kind: int, params: ring.RingParams) -> bytes:
    return KEY_MAGIC + struct.pack("<BBIQ", KEY_VERSION, kind, params.n, params.q)


def _coeff_bytes(p: ring.RingPoly) -> bytes:
    if p.domain != ring.COEFF:
        p = ring.ntt_inverse(p)
    return p.coeffs.astype("<u8").tobytes()


def secret_key_to_bytes(sk: SecretKey) -> bytes:
    return _key_header(KEY_KIND_SECRET, sk.s.params) + _coeff_bytes(sk.s)


def public_key_to_bytes(pk: PublicKey) -> bytes:
    return (_key_header(KEY_KIND_PUBLIC, pk.b.params)
            + _coeff_bytes(pk.b) + _coeff_bytes(pk.a))


def key_from_bytes(data: bytes) -> tuple[int, object]:
    """Parse a key file; returns (kind, SecretKey | PublicKey)."""
    head = len(KEY_MAGIC) + struct.calcsize("<BBIQ")
    if len(data) < head or data[: len(KEY_MAGIC)] != KEY_MAGIC:
        raise ValidationError("not a key file (bad magic)")
    version, kind, n, q = struct.unpack_from("<BBIQ", data, len(KEY_MAGIC))
    if version != KEY_VERSION:
        raise ValidationError(f"unsupported key file version {version}")
    params = ring.RingParams(n, q)
    want = {KEY_KIND_SECRET: 1, KEY_KIND_PUBLIC: 2}.get(kind)
    if want is None:
        raise ValidationError(f"unknown key kind {kind}")
    if len(data) != head + want * 8 * n:
        raise ValidationError("key file truncated or oversized")
    polys = [
        ring.RingPoly(
            np.frombuffer(data, dtype="<u8", count=n, offset=head + i * 8 * n).copy(),
            params,
        )
        for i in range(want)
    ]
    for p in polys:
        if int(p.coeffs.max(initial=0)) >= q:
            raise ValidationError("key coefficients exceed the modulus")
    if kind == KEY_KIND_SECRET:
        return kind, SecretKey(polys[0])
    return kind, PublicKey(polys[0], polys[1])


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    params = ct.scheme.ring
    return (
        struct.pack("<IQII", params.n, params.q, ct.slot_count, ct.sum_depth)
        + _coeff_bytes(ct.c0)
        + _coeff_bytes(ct.c1)
    )


def ciphertext_from_bytes(data: bytes, scheme: SchemeParams) -> Ciphertext:
    head = struct.calcsize("<IQII")
    if len(data) < head:
        raise ValidationError("ciphertext blob too short")
    n, q, slot_count, sum_depth = struct.unpack_from("<IQII", data, 0)
    if n != scheme.ring.n or q != scheme.ring.q:
        raise ContractError(
            f"ciphertext parameters (n={n}, q={q}) do not match the scheme "
            f"(n={scheme.ring.n}, q={scheme.ring.q})"
        )
    if len(data) != head + 2 * 8 * n:
        raise ValidationError("ciphertext blob truncated or oversized")
    if not 1 <= slot_count <= n or sum_depth < 1:
        raise ValidationError("ciphertext header fields out of range")
    c0 = np.frombuffer(data, dtype="<u8", count=n, offset=head).copy()
    c1 = np.frombuffer(data, dtype="<u8", count=n, offset=head + 8 * n).copy()
    if int(c0.max()) >= q or int(c1.max()) >= q:
        raise ValidationError("ciphertext coefficients exceed the modulus")
    return Ciphertext(
        ring.ntt_forward(ring.RingPoly(c0, scheme.ring)),
        ring.ntt_forward(ring.RingPoly(c1, scheme.ring)),
        slot_count,
        sum_depth,
        scheme,
    )
