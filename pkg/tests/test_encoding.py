import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from puffprint.encoding import EncodingScheme, Variant, analytic_decode, embed, encode
from puffprint.puf import PufKey

# (bits, delta) at m=3, eps=0.4
LEVEL_TABLE = [
    ("011", 1.4), ("010", 1.0), ("001", 0.6), ("000", 0.2),
    ("111", -0.2), ("110", -0.6), ("101", -1.0), ("100", -1.4),
]


def all_keys(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


class TestScheme:
    def test_validation(self):
        with pytest.raises(ValueError):
            EncodingScheme.one_bit(0.0)
        with pytest.raises(ValueError):
            EncodingScheme.one_bit(-0.1)
        with pytest.raises(ValueError):
            EncodingScheme(Variant.ONE_BIT, 0.1, 2)
        with pytest.raises(ValueError):
            EncodingScheme.compressed(0, 0.1)

    def test_dimensions(self):
        s = EncodingScheme.compressed(2, 0.2)
        assert s.key_bits(10) == 20 and s.logit_dim(20) == 10
        with pytest.raises(ValueError):
            s.logit_dim(7)

    @pytest.mark.parametrize("m", [1, 2, 3, 4, 5])
    def test_levels_equally_spaced_and_symmetric(self, m):
        eps = 0.3
        lv = EncodingScheme.compressed(m, eps).levels()
        assert lv.size == 2**m
        assert np.allclose(np.diff(lv), eps)
        assert lv.max() == pytest.approx(-lv.min())

    def test_one_bit_mean_zero_over_all_keys(self):
        deltas = encode(all_keys(8), EncodingScheme.one_bit(0.05))
        assert np.allclose(deltas.mean(axis=0), 0.0)


class TestEncode:
    def test_one_bit_signs(self):
        s = EncodingScheme.one_bit(0.05)
        assert encode([0], s).tolist() == [0.05]
        assert encode([1], s).tolist() == [-0.05]

    def test_level_table(self):
        s = EncodingScheme.compressed(3, 0.4)
        for bits, delta in LEVEL_TABLE:
            assert encode(PufKey.from_bitstring(bits), s)[0] == pytest.approx(delta, abs=1e-12)

    def test_segments_are_consecutive(self):
        s = EncodingScheme.compressed(3, 0.4)
        out = encode(PufKey.from_bitstring("011100000"), s)
        assert out == pytest.approx([1.4, -1.4, 0.2])

    def test_dimension_errors(self):
        with pytest.raises(ValueError):
            encode([0, 1, 1], EncodingScheme.compressed(2, 0.1))
        with pytest.raises(ValueError):
            encode([0, 1, 1], EncodingScheme.one_bit(0.1), d=4)

    def test_batch_matches_rows(self):
        s = EncodingScheme.compressed(2, 0.1)
        keys = all_keys(6)
        batch = encode(keys, s)
        assert np.array_equal(batch[5], encode(keys[5], s))


class TestEmbed:
    def test_examples(self):
        assert embed([2.0, -1.0], [0.05, -0.05]).tolist() == pytest.approx([2.05, -1.05])
        z = np.array([0.3, -0.7])
        assert np.array_equal(embed(z, np.zeros(2)), z)
        out = embed([0.0, 0.0, 0.0], encode([1, 0, 1], EncodingScheme.one_bit(0.05)))
        assert out.tolist() == pytest.approx([-0.05, 0.05, -0.05])

    def test_mismatch(self):
        with pytest.raises(ValueError):
            embed([1.0, 2.0], [0.1])


class TestAnalyticDecode:
    @pytest.mark.parametrize("n", [1, 4, 9, 12])
    def test_one_bit_round_trip_exhaustive(self, n):
        keys = all_keys(n)
        s = EncodingScheme.one_bit(0.05)
        assert np.array_equal(analytic_decode(encode(keys, s), s), keys)

    @pytest.mark.parametrize("m,d", [(2, 3), (3, 2), (4, 2), (2, 5), (5, 2)])
    def test_compressed_round_trip_exhaustive(self, m, d):
        keys = all_keys(m * d)
        s = EncodingScheme.compressed(m, 0.4)
        assert np.array_equal(analytic_decode(encode(keys, s), s), keys)

    def test_nearest_level(self):
        s = EncodingScheme.compressed(3, 0.4)
        assert analytic_decode([1.4], s).tolist() == [0, 1, 1]
        assert analytic_decode([1.38], s).tolist() == [0, 1, 1]

    def test_clamps_out_of_range(self):
        s = EncodingScheme.compressed(3, 0.4)
        assert analytic_decode([50.0], s).tolist() == [0, 1, 1]
        assert analytic_decode([-50.0], s).tolist() == [1, 0, 0]

    def test_zero_decodes_to_one_in_one_bit(self):
        assert analytic_decode([0.0, 1e-9, -1e-9], EncodingScheme.one_bit(0.05)).tolist() == [1, 0, 1]

    @given(st.integers(1, 4), st.integers(1, 4), st.floats(0.01, 2.0), st.data())
    def test_decodes_to_nearest_level(self, m, d, eps, data):
        s = EncodingScheme.compressed(m, eps)
        levels = s.levels()
        est = np.array(data.draw(st.lists(st.floats(-3 * eps * 2**m, 3 * eps * 2**m), min_size=d, max_size=d)))
        decoded = encode(analytic_decode(est, s), s)
        best = np.abs(est[:, None] - levels[None, :]).min(axis=1)
        assert np.allclose(np.abs(decoded - est), best, atol=1e-9)

    @given(st.integers(1, 4), st.integers(1, 5), st.data())
    def test_capacity_by_enumeration(self, m, d, data):
        if m * d > 12:
            return
        s = EncodingScheme.compressed(m, 0.1)
        deltas = encode(all_keys(m * d), s)
        assert np.unique(deltas, axis=0).shape[0] == s.capacity(d) == 2 ** (m * d)
