import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from puffprint.puf import (
    KeyRegistry,
    NoiseModel,
    PufKey,
    RegistryError,
    apply_noise,
    generate_registry,
    hamming_distance,
)

bits = st.lists(st.integers(0, 1), min_size=1, max_size=64)


def same_length_triple():
    return st.integers(1, 48).flatmap(
        lambda n: st.tuples(*(st.lists(st.integers(0, 1), min_size=n, max_size=n) for _ in range(3)))
    )


class TestPufKey:
    def test_rejects_non_binary_and_empty(self):
        with pytest.raises(ValueError):
            PufKey([0, 2, 1])
        with pytest.raises(ValueError):
            PufKey([])
        with pytest.raises(ValueError):
            PufKey([0, 1], n=3)

    def test_immutable(self):
        k = PufKey([1, 0, 1])
        with pytest.raises(ValueError):
            k.bits[0] = 0

    def test_hex_is_msb_first_and_padded(self):
        assert PufKey.from_bitstring("0000000101").hex() == "005"
        assert PufKey.from_bitstring("1000").hex() == "8"

    @given(bits)
    def test_text_round_trips(self, b):
        k = PufKey(b)
        assert PufKey.from_hex(k.hex(), k.n) == k
        assert PufKey.from_bitstring(k.bitstring()) == k
        assert PufKey.from_int(k.to_int(), k.n) == k
        assert hash(PufKey(b)) == hash(k)


class TestHamming:
    def test_examples(self):
        assert hamming_distance([1, 0, 1, 1], [1, 1, 1, 1]) == 1
        k = PufKey([1, 0, 0, 1, 1])
        assert hamming_distance(k, k) == 0
        assert hamming_distance([0, 0, 0], [1, 1, 1]) == 3

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hamming_distance([0, 1], [0, 1, 1])

    @given(same_length_triple())
    def test_metric_axioms(self, abc):
        a, b, c = abc
        assert hamming_distance(a, b) == hamming_distance(b, a)
        assert hamming_distance(a, a) == 0
        assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)


class TestRegistry:
    def test_full_one_bit_space(self):
        reg = generate_registry(1, 2, rng_seed=3)
        assert {k.bitstring() for k in reg} == {"0", "1"}

    def test_hundred_distinct_ten_bit_keys(self):
        reg = generate_registry(10, 100, rng_seed=0)
        assert len(reg) == 100 and reg.n == 10
        assert len({k.bitstring() for k in reg}) == 100

    def test_capacity_and_length_errors(self):
        with pytest.raises(RegistryError, match="2\\^3"):
            generate_registry(3, 9)
        with pytest.raises(RegistryError):
            generate_registry(0, 1)
        with pytest.raises(RegistryError):
            generate_registry(4, 0)

    @given(st.integers(1, 80), st.integers(1, 40), st.integers(0, 2**32))
    def test_reproducible_and_distinct(self, n, r, seed):
        r = min(r, 2**n) if n < 20 else r
        a = generate_registry(n, r, seed)
        b = generate_registry(n, r, seed)
        assert a == b
        assert np.unique(a.keys, axis=0).shape[0] == r

    def test_large_keys_use_rejection_path(self):
        reg = generate_registry(128, 50, rng_seed=1)
        assert reg.keys.shape == (50, 128)

    def test_duplicates_rejected(self):
        with pytest.raises(RegistryError, match="duplicate"):
            KeyRegistry([[0, 1], [0, 1]])
        with pytest.raises(RegistryError):
            KeyRegistry([[0, 1], [1, 0, 1]])
        with pytest.raises(RegistryError):
            KeyRegistry([[0, 1]], ids=["has space"])

    def test_file_round_trip(self, tmp_path):
        reg = generate_registry(13, 20, rng_seed=9)
        path = tmp_path / "registry.txt"
        reg.save(path)
        text = path.read_text()
        assert text.splitlines()[0] == "n=13 count=20"
        assert text.splitlines()[1].split()[1] == reg[0].hex()
        assert KeyRegistry.load(path) == reg

    def test_malformed_files(self):
        with pytest.raises(RegistryError):
            KeyRegistry.loads("")
        with pytest.raises(RegistryError):
            KeyRegistry.loads("n=4 count=2\ndev0 a\n")
        with pytest.raises(RegistryError):
            KeyRegistry.loads("n=4 count=1\ndev0 1f\n")
        with pytest.raises(RegistryError):
            KeyRegistry.loads("bits=4\ndev0 1\n")

    def test_lookup(self):
        reg = KeyRegistry([[0, 0], [1, 1]], ids=["a", "b"])
        assert reg.key_of("b") == PufKey([1, 1])
        assert reg.index_of("a") == 0
        with pytest.raises(KeyError):
            reg.index_of("zz")
        assert len(reg.subset(1)) == 1


class TestNoise:
    def test_zero_noise_copies(self):
        k = PufKey([1, 0, 1, 1, 0])
        out = apply_noise(k, NoiseModel(0.0), 5)
        assert out.shape == (5, 5)
        assert (out == k.bits).all()

    def test_certain_flip_complements(self):
        k = PufKey([1, 0, 1, 1, 0])
        assert (apply_noise(k, NoiseModel(1.0), 1)[0] == 1 - k.bits).all()

    def test_empirical_rate_in_binomial_interval(self):
        key = generate_registry(1000, 1, rng_seed=4)[0]
        flips = apply_noise(key, NoiseModel(0.05, rng_seed=11), 200) != key.bits
        lo, hi = stats.binom.interval(0.99, flips.size, 0.05)
        assert lo <= flips.sum() <= hi
        assert 0.04 <= flips.mean() <= 0.06

    def test_deterministic_per_seed(self):
        k = PufKey([0] * 32)
        a = apply_noise(k, NoiseModel(0.3, 7), 10)
        assert np.array_equal(a, apply_noise(k, NoiseModel(0.3, 7), 10))
        assert not np.array_equal(a, apply_noise(k, NoiseModel(0.3, 8), 10))

    def test_invalid(self):
        with pytest.raises(ValueError):
            NoiseModel(1.5)
        with pytest.raises(ValueError):
            apply_noise([0, 1], NoiseModel(0.1), 0)
