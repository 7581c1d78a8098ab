import numpy as np
import pytest

from riskseq.model import ModelConfig, init_params


def toy_config(tgt_vocab=6, **overrides):
    base = dict(
        src_vocab_size=6,
        tgt_vocab_size=tgt_vocab,
        embed_dim=3,
        hidden_dim=4,
        attention_dim=3,
        max_len=6,
    )
    base.update(overrides)
    return ModelConfig(**base)


def noisy_params(cfg, seed, scale=0.5):
    """Initialized parameters plus noise everywhere, so the output
    distribution is non-uniform and decoding is non-trivial."""
    params = init_params(cfg, seed)
    rng = np.random.default_rng([seed, 77])
    params.set_flat(params.flat() + scale * rng.normal(size=params.size))
    return params


@pytest.fixture
def toy_model():
    cfg = toy_config()
    return cfg, noisy_params(cfg, seed=0)
