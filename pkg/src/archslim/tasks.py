"""Synthetic sequence tasks with deterministic generators.

Three task families cover the architecture pressures the search should
react to:

- sequence-classification: the label is the exclusive-or of two marker
  tokens' presence anywhere in the sequence.  Mean-pooled token counts
  plus one feedforward nonlinearity solve it exactly, while the label is
  not linearly decodable from pooled embeddings; the attention sub-block
  contributes nothing the residual stream does not already carry, so the
  search is free to drop similarity slices or whole heads.
- sequence-tagging: a position is tagged when its token occurs elsewhere
  in the sequence.  Solving it requires content-based matching across
  positions, which only the similarity branch provides.
- masked-token-prediction: one occurrence of the majority token is masked
  and must be recovered from the rest of the sequence.

Generators are pure functions of the task seed; dev sets are disjoint
from training sets by construction (sequences are deduplicated before the
split).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grad import Rng
from .schemas import TaskConfig

MASK_TOKEN = 0
MARKER_A = 1
MARKER_B = 2
FIRST_FILLER = 3


@dataclass
class TaskData:
    config: TaskConfig
    train: list[tuple[np.ndarray, object]]
    dev: list[tuple[np.ndarray, object]]

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def num_classes(self) -> int:
        return self.config.num_classes


def _classification_example(rng: Rng, cfg: TaskConfig):
    length = cfg.seq_len
    tokens = rng.integers(FIRST_FILLER, cfg.vocab_size, size=length).astype(np.int64)
    slots = np.arange(length)
    rng.shuffle(slots)
    cursor = 0
    has_a = int(rng.integers(0, 2))
    has_b = int(rng.integers(0, 2))
    for marker, present in ((MARKER_A, has_a), (MARKER_B, has_b)):
        count = int(rng.integers(1, 4)) if present else 0
        for _ in range(count):
            tokens[slots[cursor]] = marker
            cursor += 1
    return tokens, has_a ^ has_b


def _tagging_example(rng: Rng, cfg: TaskConfig):
    tokens = rng.integers(1, cfg.vocab_size, size=cfg.seq_len).astype(np.int64)
    counts = np.bincount(tokens, minlength=cfg.vocab_size)
    labels = (counts[tokens] > 1).astype(np.int64)
    return tokens, labels


def _masked_example(rng: Rng, cfg: TaskConfig):
    length = cfg.seq_len
    key = int(rng.integers(FIRST_FILLER, cfg.vocab_size))
    tokens = np.empty(length, dtype=np.int64)
    majority = length // 2 + 1
    positions = np.arange(length)
    rng.shuffle(positions)
    tokens[positions[:majority]] = key
    for pos in positions[majority:]:
        t = int(rng.integers(FIRST_FILLER, cfg.vocab_size - 1))
        tokens[pos] = t if t < key else t + 1  # any filler except the key
    masked_pos = int(positions[rng.integers(0, majority)])
    tokens[masked_pos] = MASK_TOKEN
    labels = np.full(length, -1, dtype=np.int64)
    labels[masked_pos] = key
    return tokens, labels


_GENERATORS = {
    "sequence-classification": _classification_example,
    "sequence-tagging": _tagging_example,
    "masked-token-prediction": _masked_example,
}


def expected_classes(cfg: TaskConfig) -> int:
    if cfg.kind == "sequence-classification":
        return 2
    if cfg.kind == "sequence-tagging":
        return 2
    return cfg.vocab_size


def generate_task(cfg: TaskConfig) -> TaskData:
    """Generate disjoint train/dev splits; a pure function of cfg.seed."""
    if cfg.kind not in _GENERATORS:
        raise ConfigError(f"unknown task kind {cfg.kind!r}")
    if cfg.vocab_size <= FIRST_FILLER + 1:
        raise ConfigError("vocab_size must leave room for filler tokens")
    if expected_classes(cfg) != cfg.num_classes:
        raise ConfigError(
            f"{cfg.kind} requires num_classes={expected_classes(cfg)}, got {cfg.num_classes}"
        )
    make = _GENERATORS[cfg.kind]
    rng = Rng(cfg.seed).child(f"task/{cfg.kind}")
    seen: set[bytes] = set()
    examples: list[tuple[np.ndarray, object]] = []
    needed = cfg.train_size + cfg.dev_size
    attempts = 0
    while len(examples) < needed:
        attempts += 1
        if attempts > 50 * needed:
            raise ConfigError("task space too small to draw disjoint train/dev sets")
        tokens, target = make(rng, cfg)
        fingerprint = tokens.tobytes()
        if fingerprint in seen:
            continue
        seen.add(fingerprint)
        examples.append((tokens, target))
    return TaskData(
        config=cfg,
        train=examples[: cfg.train_size],
        dev=examples[cfg.train_size:],
    )


def sample_batch(data: list, batch_size: int, rng: Rng) -> list:
    idx = rng.integers(0, len(data), size=batch_size)
    return [data[int(i)] for i in idx]


def generate_unlabeled(cfg: TaskConfig, count: int, seed_tag: str = "unlabeled") -> list[np.ndarray]:
    """Extra inputs for distillation; labels come from the teacher."""
    make = _GENERATORS[cfg.kind]
    rng = Rng(cfg.seed).child(f"task/{cfg.kind}/{seed_tag}")
    return [make(rng, cfg)[0] for _ in range(count)]
