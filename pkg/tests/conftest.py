import numpy as np
import pytest

from surgflow.models import (CAPTION_PROMPT, MGA_PROMPT, ModelConfig,
                             Stage1Model)
from surgflow.rng import SessionRng
from surgflow.vocab import Vocabulary

TINY_TEXTS = [
    "a small red square moves",
    "a blue probe crosses the frame",
    "nothing is happening here",
]


def make_tiny_model(seed: int = 0) -> Stage1Model:
    cfg = ModelConfig(dim=8, n_layers=1, n_heads=2, ff_mult=2, n_frames=2,
                      frame_size=8, patch_size=4, max_text_len=16,
                      contrast_dim=4)
    vocab = Vocabulary.build(TINY_TEXTS + [MGA_PROMPT, CAPTION_PROMPT])
    return Stage1Model(cfg, vocab, SessionRng(seed), feature_dim=4)


def tiny_clips(rng: SessionRng, n: int, frames: int = 3):
    return [rng.uniform(0.0, 1.0, (frames, 8, 8, 3), np.float32)
            for _ in range(n)]


@pytest.fixture
def tiny_model():
    return make_tiny_model()
