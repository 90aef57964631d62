"""Synthetic decoder training and two-stage key recovery.

Stage 1 maps logit differences ``dz = z_s - z_t`` to per-bit probabilities
with an MLP trained on simulated data; stage 2 snaps the thresholded key to
the nearest enrolled key in Hamming distance.

Recovery assumes the verifier holds the clean teacher, so ``z_t`` can be
evaluated on the probe inputs to form ``dz``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from puffprint.encoding import EncodingScheme, Variant, analytic_decode, encode
from puffprint.nn import Network, TrainConfig, mlp, train
from puffprint.puf import KeyRegistry, PufKey, as_bits
from puffprint.rng import make_rng

DEFAULT_EPSILON_SET = (0.01, 0.02, 0.05, 0.1)
DEFAULT_HIDDEN = (128, 128)
AGGREGATIONS = ("logodds", "mean", "majority", "delta-mean")
DEFAULT_AGGREGATE = "logodds"
DEFAULT_PROBES = 256


@dataclass(frozen=True)
class SynthConfig:
    """Inputs of the synthetic data generator.

    ``bits_per_logit`` selects the one-bit (1) or compressed (>1) mapping;
    ``p_flip`` optionally corrupts the key behind each sample while the label
    stays clean. ``epsilon_per`` chooses whether the perturbation scale is
    drawn once per sample (default) or once per device.
    """

    n: int = 10
    R: int = 100
    Q: int = 1000
    epsilon_set: tuple[float, ...] = DEFAULT_EPSILON_SET
    sigma: float = 0.1
    d: Optional[int] = None
    rng_seed: int = 0
    bits_per_logit: int = 1
    p_flip: float = 0.0
    epsilon_per: str = "sample"

    def __post_init__(self) -> None:
        if self.epsilon_per not in ("sample", "device"):
            raise ValueError(f"epsilon_per must be 'sample' or 'device', got {self.epsilon_per!r}")
        object.__setattr__(self, "epsilon_set", tuple(float(e) for e in self.epsilon_set))
        if self.n < 1 or self.R < 1 or self.Q < 1:
            raise ValueError("n, R and Q must all be >= 1")
        if not self.epsilon_set:
            raise ValueError("the perturbation set must not be empty")
        if any(not (np.isfinite(e) and e > 0) for e in self.epsilon_set):
            raise ValueError(f"every epsilon must be positive, got {self.epsilon_set}")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")
        if not 0 <= self.p_flip <= 1:
            raise ValueError("p_flip must lie in [0, 1]")
        if self.n < 63 and self.R > 2**self.n:
            raise ValueError(f"R={self.R} exceeds the 2^{self.n} key space")
        d = self.n // self.bits_per_logit if self.d is None else self.d
        if d * self.bits_per_logit != self.n:
            raise ValueError(f"n={self.n} bits do not fill d={d} logits at {self.bits_per_logit} bits each")
        object.__setattr__(self, "d", d)

    def scheme(self, epsilon: float) -> EncodingScheme:
        if self.bits_per_logit == 1:
            return EncodingScheme.one_bit(epsilon)
        return EncodingScheme.compressed(self.bits_per_logit, epsilon)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epsilon_set"] = list(self.epsilon_set)
        return out


@dataclass
class SynthDataset:
    deltas: np.ndarray      # (R*Q, d) logit differences
    keys: np.ndarray        # (R*Q, n) clean key labels, float 0/1
    device: np.ndarray      # (R*Q,) registry row of each sample
    epsilon: np.ndarray     # (R*Q,) perturbation scale behind each sample

    def __len__(self) -> int:
        return int(self.deltas.shape[0])


def build_synthetic_dataset(cfg: SynthConfig, registry: KeyRegistry) -> SynthDataset:
    """Simulated ``(dz, key)`` pairs, ``Q`` per device for the first ``R`` devices.

    Each sample is ``dz = delta + eta`` with ``eta ~ N(0, sigma^2 I)`` and the
    scale of ``delta`` drawn from the perturbation set. The teacher logits
    ``z_t ~ N(0, I)`` cancel exactly in ``z_s - z_t`` and are not materialised.
    """
    if registry.n != cfg.n:
        raise ValueError(f"registry holds {registry.n}-bit keys, config expects {cfg.n}")
    if len(registry) < cfg.R:
        raise ValueError(f"registry has {len(registry)} devices, config needs {cfg.R}")
    rng = make_rng(cfg.rng_seed, "synth")
    keys = registry.keys[: cfg.R]
    eps_set = np.asarray(cfg.epsilon_set)
    if cfg.epsilon_per == "device":
        eps = np.repeat(rng.choice(eps_set, size=cfg.R), cfg.Q)
    else:
        eps = rng.choice(eps_set, size=cfg.R * cfg.Q)
    sample_keys = np.repeat(keys, cfg.Q, axis=0)
    carried = sample_keys
    if cfg.p_flip > 0:
        mask = (rng.random(sample_keys.shape) < cfg.p_flip).astype(np.uint8)
        carried = np.bitwise_xor(sample_keys, mask)
    # encode at unit scale, then apply each sample's epsilon
    deltas = encode(carried, cfg.scheme(1.0)) * eps[:, None]
    if cfg.sigma > 0:
        deltas += rng.normal(scale=cfg.sigma, size=deltas.shape)
    return SynthDataset(
        deltas=deltas,
        keys=sample_keys.astype(np.float64),
        device=np.repeat(np.arange(cfg.R), cfg.Q),
        epsilon=eps,
    )


DEFAULT_DECODER_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=256, max_epochs=30, early_stop_patience=5)


def build_decoder(d: int, n: int, hidden: Sequence[int] = DEFAULT_HIDDEN, rng_seed: int = 0) -> Network:
    return mlp([d, *hidden, n], rng_seed=rng_seed, output_activation="sigmoid")


def bit_accuracy(decoder: Network, deltas: np.ndarray, keys: np.ndarray) -> float:
    pred = decoder.forward(deltas) > 0.5
    return float(np.mean(pred == (np.asarray(keys) > 0.5)))


def train_decoder(dataset: SynthDataset, config: TrainConfig = DEFAULT_DECODER_TRAIN,
                  hidden: Sequence[int] = DEFAULT_HIDDEN, val_fraction: float = 0.1) -> tuple[Network, float]:
    """Fit the bit-probability MLP with BCE; returns it and its held-out bitwise accuracy."""
    X, Y = dataset.deltas, dataset.keys
    if len(X) < 2:
        raise ValueError("dataset too small to hold out a validation split")
    order = make_rng(config.rng_seed, "decoder-split").permutation(len(X))
    n_val = max(1, int(round(val_fraction * len(X))))
    val, tr = order[:n_val], order[n_val:]
    net = build_decoder(X.shape[1], Y.shape[1], hidden, rng_seed=config.rng_seed)
    train(net, X[tr], Y[tr], "bce", config, validation=(X[val], Y[val]))
    return net, bit_accuracy(net, X[val], Y[val])


def _log_odds(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-7, 1.0 - 1e-7)
    return np.log(p) - np.log1p(-p)


def stage1_predict(decoder: Network, probe_deltas, aggregate: str = DEFAULT_AGGREGATE) -> tuple[PufKey, np.ndarray]:
    """Combine per-probe bit probabilities into one thresholded key.

    ``logodds``
        naive-Bayes pooling: ``sum_j logit(p_j) - (B - 1) * logit(p_0)``,
        where ``p_0`` is the decoder's output at ``dz = 0`` and stands in for
        the key prior it absorbed in training. For one probe this is plain
        thresholding of ``p`` at one half.
    ``mean``
        average the probabilities, then threshold.
    ``majority``
        threshold every probe, then take a per-bit vote.
    ``delta-mean``
        average the logit differences first and decode that single vector;
        suited to decoders trained at the noise level of a batch mean.

    A bit is 1 only when its pooled score is strictly above one half (zero
    for log-odds). Confidence is ``2 * |q - 0.5|`` where ``q`` is the pooled
    probability.
    """
    probes = np.atleast_2d(np.asarray(probe_deltas, dtype=np.float64))
    if probes.shape[0] == 0:
        raise ValueError("probe batch is empty")
    if probes.shape[1] != decoder.input_dim:
        raise ValueError(f"probes have {probes.shape[1]} logits, decoder expects {decoder.input_dim}")
    if aggregate == "delta-mean":
        q = decoder.forward(probes.mean(axis=0, keepdims=True))[0]
        return PufKey((q > 0.5).astype(np.uint8)), np.abs(q - 0.5) * 2.0
    probs = decoder.forward(probes)
    if aggregate == "logodds":
        prior = _log_odds(decoder.forward(np.zeros((1, probes.shape[1])))[0])
        score = _log_odds(probs).sum(axis=0) - (probes.shape[0] - 1) * prior
        bits = score > 0
        q = 0.5 * (1.0 + np.tanh(0.5 * score))
    elif aggregate == "mean":
        q = probs.mean(axis=0)
        bits = q > 0.5
    elif aggregate == "majority":
        q = (probs > 0.5).mean(axis=0)
        bits = q > 0.5
    else:
        raise ValueError(f"aggregate must be one of {AGGREGATIONS}, got {aggregate!r}")
    return PufKey(bits.astype(np.uint8)), np.abs(q - 0.5) * 2.0


@dataclass
class RecoveryResult:
    predicted_raw: PufKey
    recovered: PufKey
    device_id: str
    device_index: int
    distance: int
    tie_flag: bool
    stage1_hamming_to_truth: Optional[int] = None
    confidence: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "predicted_raw": self.predicted_raw.bitstring(),
            "recovered": self.recovered.bitstring(),
            "recovered_hex": self.recovered.hex(),
            "device_id": self.device_id,
            "device_index": self.device_index,
            "distance": self.distance,
            "tie_flag": self.tie_flag,
            "stage1_hamming_to_truth": self.stage1_hamming_to_truth,
        }
        if self.confidence is not None:
            out["confidence"] = [round(float(c), 6) for c in self.confidence]
        return out


def stage2_refine(predicted, registry: KeyRegistry) -> RecoveryResult:
    """Nearest enrolled key in Hamming distance; ties go to the lowest index."""
    if len(registry) == 0:
        raise ValueError("registry is empty")
    bits = as_bits(predicted)
    if bits.size != registry.n:
        raise ValueError(f"predicted key has {bits.size} bits, registry holds {registry.n}-bit keys")
    dist = np.count_nonzero(registry.keys != bits[None, :], axis=1)
    best = int(np.argmin(dist))
    return RecoveryResult(
        predicted_raw=PufKey(bits),
        recovered=registry[best],
        device_id=registry.ids[best],
        device_index=best,
        distance=int(dist[best]),
        tie_flag=bool(np.count_nonzero(dist == dist[best]) > 1),
    )


def recover(decoder: Optional[Network], probe_deltas, registry: KeyRegistry, *,
            scheme: Optional[EncodingScheme] = None, aggregate: str = DEFAULT_AGGREGATE,
            truth=None) -> RecoveryResult:
    """Two-stage recovery of the leaker's key from a batch of logit differences.

    With ``decoder=None`` stage 1 is the analytic inverse of ``scheme`` applied
    to the batch-mean logit difference (the default path for the compressed
    mapping).
    """
    probes = np.atleast_2d(np.asarray(probe_deltas, dtype=np.float64))
    if decoder is None:
        if scheme is None:
            raise ValueError("analytic recovery needs the encoding scheme")
        if probes.shape[0] == 0:
            raise ValueError("probe batch is empty")
        predicted = PufKey(analytic_decode(probes.mean(axis=0), scheme))
        confidence = None
    else:
        predicted, confidence = stage1_predict(decoder, probes, aggregate)
    result = stage2_refine(predicted, registry)
    result.confidence = confidence
    if truth is not None:
        result.stage1_hamming_to_truth = int(np.count_nonzero(predicted.bits != as_bits(truth)))
    return result


def simulate_probes(key, scheme: EncodingScheme, count: int, sigma: float, p_flip: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Logit differences a fingerprinted student would show on ``count`` probes.

    Each probe carries an independently bit-flipped copy of ``key`` plus
    Gaussian student noise, matching the synthetic training model.
    """
    bits = as_bits(key)
    mask = (rng.random((count, bits.size)) < p_flip).astype(np.uint8)
    deltas = encode(np.bitwise_xor(bits[None, :], mask), scheme)
    if sigma > 0:
        deltas = deltas + rng.normal(scale=sigma, size=deltas.shape)
    return deltas


def uses_analytic(scheme: EncodingScheme, compressed_decoder: str = "analytic") -> bool:
    return scheme.variant is Variant.COMPRESSED and compressed_decoder == "analytic"
