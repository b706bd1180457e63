"""Seeded generation of stable second-order plants and Youla parameters.

Every random draw comes from a substream keyed by ``(seed, index)`` through
numpy's ``SeedSequence`` spawn keys, so a sample depends only on its index and
never on how work was scheduled across processes.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .lti import TransferFunction

# Substream domains; keep distinct so dataset, test and training draws never alias.
DOMAIN_DATASET = 0
DOMAIN_TEST = 1
DOMAIN_TRAIN = 2
DOMAIN_SYNTH = 3
DOMAIN_INIT = 4


@dataclass(frozen=True)
class SampleConfig:
    wn_range: tuple = (0.5, 5.0)
    zeta_range: tuple = (0.3, 1.5)
    gain_range: tuple = (0.5, 2.0)
    zero_loc_range: tuple = (0.1, 10.0)
    p_zero: float = 0.5
    q_gain_range: tuple = (0.1, 3.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("wn_range", "zeta_range", "gain_range", "zero_loc_range", "q_gain_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if not 0.0 <= self.p_zero <= 1.0:
            raise ValueError("p_zero must lie in [0, 1]")

    @property
    def p_complex(self):
        """Probability of a complex pole pair, implied by the damping range."""
        lo, hi = self.zeta_range
        return min(max((1.0 - lo) / (hi - lo), 0.0), 1.0) if hi > lo else float(lo < 1.0)

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def derive_stream(seed, index, *path):
    """Independent generator for ``(seed, index, *path)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), *map(int, path)))
    return np.random.Generator(np.random.PCG64(ss))


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _second_order_den(cfg, rng):
    wn = _log_uniform(rng, *cfg.wn_range)
    zeta = rng.uniform(*cfg.zeta_range)
    return np.array([1.0, 2.0 * zeta * wn, wn * wn])


def sample_plant(cfg, rng):
    """Strictly proper ``K wn^2 (s/z + 1)^k / (s^2 + 2 zeta wn s + wn^2)``, ``k`` in {0, 1}.

    DC gain is ``K``; the optional zero sits at ``-z`` (minimum phase).
    """
    den = _second_order_den(cfg, rng)
    gain = rng.uniform(*cfg.gain_range)
    if rng.random() < cfg.p_zero:
        z = _log_uniform(rng, *cfg.zero_loc_range)
        num = gain * den[2] * np.array([0.0, 1.0 / z, 1.0])
    else:
        num = np.array([0.0, 0.0, gain * den[2]])
    return TransferFunction(num, den)


def sample_youla(cfg, rng):
    """Stable proper ``Q`` with monic denominator.

    Numerator is ``gain * prod(s + z_i)`` over 0, 1 or 2 (equally likely)
    negative real zeros.
    """
    den = _second_order_den(cfg, rng)
    gain = rng.uniform(*cfg.q_gain_range)
    nzeros = int(rng.integers(0, 3))
    num = np.array([gain])
    for _ in range(nzeros):
        num = np.convolve(num, [1.0, _log_uniform(rng, *cfg.zero_loc_range)])
    num = np.concatenate([np.zeros(3 - num.size), num])
    return TransferFunction(num, den)


def sample_pair(cfg, seed, index, domain=DOMAIN_DATASET):
    rng = derive_stream(seed, index, domain)
    G = sample_plant(cfg, rng)
    Q = sample_youla(cfg, rng)
    return G, Q
