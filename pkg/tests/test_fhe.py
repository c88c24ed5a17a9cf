"""Crypto layer: round-trip identity, additive homomorphism, budget guards,
and the key/ciphertext byte formats."""

import numpy as np
import pytest

from fcdf import fhe, ring
from fcdf.errors import ContractError, EncodingError, NoiseBudgetError, ValidationError


def random_cdf_vector(rng, length):
    """A monotone vector in [0, 1] ending at 1.0, like a real eCDF."""
    steps = rng.random(length)
    v = np.cumsum(steps)
    return v / v[-1]


@pytest.fixture(scope="module")
def keypair(scheme_small):
    return fhe.keygen(scheme_small, np.random.default_rng(7))


class TestKeygen:
    def test_secret_is_ternary(self, keypair, scheme_small):
        sk, _ = keypair
        q = scheme_small.ring.q
        assert set(int(c) for c in sk.s.coeffs) <= {0, 1, q - 1}

    def test_public_key_consistency(self, keypair, scheme_small):
        sk, pk = keypair
        # b + a*s = -e must be small: infinity norm bounded by the noise support
        residue = ring.poly_add(pk.b, ring.poly_mul(pk.a, sk.s))
        centered = ring.poly_to_signed(residue)
        assert max(abs(int(v)) for v in centered) <= fhe.FRESH_NOISE_BOUND

    def test_deterministic_per_seed(self, scheme_small):
        sk1, pk1 = fhe.keygen(scheme_small, np.random.default_rng(11))
        sk2, pk2 = fhe.keygen(scheme_small, np.random.default_rng(11))
        assert np.array_equal(sk1.s.coeffs, sk2.s.coeffs)
        assert np.array_equal(pk1.b.coeffs, pk2.b.coeffs)
        assert np.array_equal(pk1.a.coeffs, pk2.a.coeffs)

    def test_different_seeds_differ(self, scheme_small):
        sk1, _ = fhe.keygen(scheme_small, np.random.default_rng(1))
        sk2, _ = fhe.keygen(scheme_small, np.random.default_rng(2))
        assert not np.array_equal(sk1.s.coeffs, sk2.s.coeffs)


class TestEncode:
    def test_zero_and_one(self, scheme_small):
        v = fhe.PlainVector(np.array([0.0, 1.0]))
        assert list(fhe.encode(v, scheme_small)) == [0, 65536]

    def test_roundtrip_error_bound(self, scheme_small, rng):
        for _ in range(200):
            values = rng.random(scheme_small.ring.n)
            v = fhe.PlainVector(values)
            back = fhe.decode(fhe.encode(v, scheme_small), scheme_small)
            assert np.abs(back - values).max() <= 2**-17

    def test_out_of_bound_rejected(self, scheme_small):
        with pytest.raises(EncodingError):
            fhe.encode(fhe.PlainVector(np.array([1.5]), bound=1.0), scheme_small)
        with pytest.raises(EncodingError):
            fhe.encode(fhe.PlainVector(np.array([-0.1])), scheme_small)

    def test_bound_scale_overflow_rejected(self, scheme_small):
        big = float(scheme_small.p) / scheme_small.scale
        with pytest.raises(EncodingError):
            fhe.encode(fhe.PlainVector(np.array([0.5]), bound=big), scheme_small)

    def test_too_many_slots_rejected(self, scheme_small):
        v = fhe.PlainVector(np.zeros(scheme_small.ring.n + 1))
        with pytest.raises(EncodingError):
            fhe.encode(v, scheme_small)

    def test_nan_rejected(self):
        with pytest.raises(ValidationError):
            fhe.PlainVector(np.array([0.5, float("nan")]))


class TestEncryptDecrypt:
    def test_zero_vector_exact(self, keypair, scheme_small, rng):
        sk, _ = keypair
        v = fhe.PlainVector(np.zeros(8))
        out = fhe.decrypt(sk, fhe.encrypt(sk, v, scheme_small, rng), scheme_small)
        assert np.array_equal(out.values, np.zeros(8))

    def test_roundtrip_within_tolerance(self, keypair, scheme_small, rng):
        sk, _ = keypair
        for _ in range(100):
            length = int(rng.integers(1, scheme_small.ring.n + 1))
            values = rng.random(length)
            ct = fhe.encrypt(sk, fhe.PlainVector(values), scheme_small, rng)
            out = fhe.decrypt(sk, ct, scheme_small)
            assert out.slot_count == length
            assert np.abs(out.values - values).max() <= 2**-15

    def test_fresh_randomness_per_encryption(self, keypair, scheme_small, rng):
        sk, _ = keypair
        v = fhe.PlainVector(np.array([0.25, 0.5]))
        ct1 = fhe.encrypt(sk, v, scheme_small, rng)
        ct2 = fhe.encrypt(sk, v, scheme_small, rng)
        assert not np.array_equal(ct1.c0.coeffs, ct2.c0.coeffs)
        assert not np.array_equal(ct1.c1.coeffs, ct2.c1.coeffs)

    def test_wrong_key_garbles(self, scheme_small, rng):
        sk, _ = fhe.keygen(scheme_small, np.random.default_rng(21))
        other, _ = fhe.keygen(scheme_small, np.random.default_rng(22))
        values = rng.random(scheme_small.ring.n)
        ct = fhe.encrypt(sk, fhe.PlainVector(values), scheme_small, rng)
        out = fhe.decrypt(other, ct, scheme_small)
        assert np.abs(out.values - values).mean() > 0.1

    def test_encrypt_many_matches_sequential(self, keypair, scheme_small):
        sk, _ = keypair
        vectors = [fhe.PlainVector(np.random.default_rng(i).random(5)) for i in range(6)]
        seq = [
            fhe.encrypt(sk, v, scheme_small, np.random.default_rng(33))
            for v in vectors[:1]
        ]
        rng_a = np.random.default_rng(34)
        rng_b = np.random.default_rng(34)
        batched = fhe.encrypt_many(sk, vectors, scheme_small, rng_a)
        singles = [fhe.encrypt(sk, v, scheme_small, rng_b) for v in vectors]
        for x, y in zip(batched, singles):
            assert np.array_equal(x.c0.coeffs, y.c0.coeffs)
            assert np.array_equal(x.c1.coeffs, y.c1.coeffs)
        assert seq  # silence unused warning


class TestHomomorphicSum:
    def test_add_encrypted_zero(self, keypair, scheme_small, rng):
        sk, _ = keypair
        values = rng.random(16)
        ct = fhe.encrypt(sk, fhe.PlainVector(values), scheme_small, rng)
        zero = fhe.encrypt(sk, fhe.PlainVector(np.zeros(16)), scheme_small, rng)
        out = fhe.decrypt(sk, fhe.ct_add(ct, zero), scheme_small)
        assert np.abs(out.values - values).max() <= 2 * 2**-15

    def test_sum_of_four(self, keypair, scheme_small, rng):
        sk, _ = keypair
        vs = [rng.random(32) for _ in range(4)]
        cts = [fhe.encrypt(sk, fhe.PlainVector(v), scheme_small, rng) for v in vs]
        agg = fhe.ct_sum(cts)
        assert agg.sum_depth == 4
        out = fhe.decrypt(sk, agg, scheme_small)
        assert np.abs(out.values - np.sum(vs, axis=0)).max() <= 4 * 2**-15

    def test_mean_of_64(self, keypair, scheme_small, rng):
        sk, _ = keypair
        vs = [random_cdf_vector(rng, 20) for _ in range(64)]
        cts = fhe.encrypt_many(sk, [fhe.PlainVector(v) for v in vs], scheme_small, rng)
        out = fhe.decrypt(sk, fhe.ct_sum(cts), scheme_small)
        mean = out.values / 64
        assert np.abs(mean - np.mean(vs, axis=0)).max() < 1e-4

    def test_slot_count_mismatch_rejected(self, keypair, scheme_small, rng):
        sk, _ = keypair
        a = fhe.encrypt(sk, fhe.PlainVector(np.zeros(4)), scheme_small, rng)
        b = fhe.encrypt(sk, fhe.PlainVector(np.zeros(5)), scheme_small, rng)
        with pytest.raises(ContractError):
            fhe.ct_add(a, b)

    def test_depth_budget_enforced(self, keypair, scheme_small, rng):
        sk, _ = keypair
        limit = scheme_small.max_sum_depth
        assert limit == 2 ** (scheme_small.plain_modulus_bits - scheme_small.scale_bits)
        ones = fhe.PlainVector(np.ones(4))
        ct = fhe.encrypt(sk, ones, scheme_small, rng)
        acc = ct
        acc.sum_depth = limit  # simulate a saturated aggregate
        with pytest.raises(NoiseBudgetError):
            fhe.ct_add(acc, fhe.encrypt(sk, ones, scheme_small, rng))

    def test_sum_up_to_limit_decrypts(self, keypair, scheme_small, rng):
        sk, _ = keypair
        # entries strictly below 1.0 keep the encoded sum under p
        vs = [rng.random(8) * 0.9 for _ in range(64)]
        agg = fhe.ct_sum(
            fhe.encrypt_many(sk, [fhe.PlainVector(v) for v in vs], scheme_small, rng)
        )
        out = fhe.decrypt(sk, agg, scheme_small)
        assert np.abs(out.values - np.sum(vs, axis=0)).max() <= 64 * 2**-15


class TestNoiseBudget:
    def test_fresh_budget_at_defaults(self, scheme_default, rng):
        sk, _ = fhe.keygen(scheme_default, rng)
        values = rng.random(scheme_default.ring.n)
        v = fhe.PlainVector(values)
        ct = fhe.encrypt(sk, v, scheme_default, rng)
        assert fhe.noise_budget(sk, ct, v, scheme_default) >= 25

    def test_budget_shrinks_under_addition(self, keypair, scheme_small, rng):
        sk, _ = keypair
        # quantize up front so the tracked plaintext is exactly what the
        # ciphertexts carry
        scale = scheme_small.scale
        vs = [np.rint(rng.random(8) * 0.5 * scale) / scale for _ in range(16)]
        cts = [fhe.encrypt(sk, fhe.PlainVector(v), scheme_small, rng) for v in vs]
        acc = cts[0]
        acc_plain = vs[0].copy()
        budgets = [fhe.noise_budget(sk, acc, fhe.PlainVector(acc_plain), scheme_small)]
        for ct, v in zip(cts[1:], vs[1:]):
            acc = fhe.ct_add(acc, ct)
            acc_plain += v
            budgets.append(
                fhe.noise_budget(
                    sk, acc, fhe.PlainVector(acc_plain, bound=16.0), scheme_small
                )
            )
        assert all(b > 0 for b in budgets)
        assert budgets[-1] <= budgets[0]

    def test_noiseless_reports_full_budget(self, keypair, scheme_small):
        sk, _ = keypair
        import math

        v = fhe.PlainVector(np.array([0.5]))
        messages = fhe.encode(v, scheme_small)
        payload = np.zeros(scheme_small.ring.n, dtype=np.uint64)
        payload[0] = np.uint64(scheme_small.delta) * messages[0]
        a_hat = ring.sample_uniform(scheme_small.ring, np.random.default_rng(5), ring.NTT)
        c1 = ring.poly_add(
            ring.poly_mul(a_hat, sk.s_ntt()),
            ring.ntt_forward(ring.RingPoly(payload, scheme_small.ring)),
        )
        ct = fhe.Ciphertext(ring.poly_neg(a_hat), c1, 1, 1, scheme_small)
        assert fhe.noise_budget(sk, ct, v, scheme_small) == pytest.approx(
            math.log2(scheme_small.delta / 2)
        )


class TestByteFormats:
    def test_key_files_roundtrip(self, keypair, scheme_small):
        sk, pk = keypair
        blob = fhe.secret_key_to_bytes(sk)
        assert blob[:8] == b"FCDFKEY1"
        assert blob[8] == 0x01 and blob[9] == 0x01
        kind, sk2 = fhe.key_from_bytes(blob)
        assert kind == fhe.KEY_KIND_SECRET
        assert np.array_equal(sk.s.coeffs, sk2.s.coeffs)

        blob = fhe.public_key_to_bytes(pk)
        assert blob[9] == 0x02
        kind, pk2 = fhe.key_from_bytes(blob)
        assert kind == fhe.KEY_KIND_PUBLIC
        assert np.array_equal(pk.b.coeffs, pk2.b.coeffs)
        assert np.array_equal(pk.a.coeffs, pk2.a.coeffs)

    def test_key_header_layout(self, keypair, scheme_small):
        import struct

        sk, _ = keypair
        blob = fhe.secret_key_to_bytes(sk)
        n, q = struct.unpack_from("<IQ", blob, 10)
        assert n == scheme_small.ring.n
        assert q == scheme_small.ring.q
        assert len(blob) == 10 + 12 + 8 * n

    def test_corrupt_key_rejected(self, keypair):
        sk, _ = keypair
        blob = bytearray(fhe.secret_key_to_bytes(sk))
        blob[0] ^= 0xFF
        with pytest.raises(ValidationError):
            fhe.key_from_bytes(bytes(blob))
        with pytest.raises(ValidationError):
            fhe.key_from_bytes(fhe.secret_key_to_bytes(sk)[:-1])

    def test_ciphertext_roundtrip(self, keypair, scheme_small, rng):
        sk, _ = keypair
        values = rng.random(10)
        ct = fhe.encrypt(sk, fhe.PlainVector(values), scheme_small, rng)
        blob = fhe.ciphertext_to_bytes(ct)
        assert len(blob) == 20 + 16 * scheme_small.ring.n
        ct2 = fhe.ciphertext_from_bytes(blob, scheme_small)
        assert ct2.slot_count == 10 and ct2.sum_depth == 1
        assert np.array_equal(ct.c0.coeffs, ct2.c0.coeffs)
        assert np.array_equal(ct.c1.coeffs, ct2.c1.coeffs)
        out = fhe.decrypt(sk, ct2, scheme_small)
        assert np.abs(out.values - values).max() <= 2**-15

    def test_ciphertext_param_mismatch_rejected(self, keypair, scheme_small, rng):
        sk, _ = keypair
        ct = fhe.encrypt(sk, fhe.PlainVector(np.zeros(4)), scheme_small, rng)
        blob = fhe.ciphertext_to_bytes(ct)
        other = fhe.SchemeParams(ring.make_params(16, 40))
        with pytest.raises(ContractError):
            fhe.ciphertext_from_bytes(blob, other)
