"""Named, reproducible random streams.

Every consumer of randomness asks for a stream by label (``"init"``,
``"phase1"``, ``"phase2"`` + worker id, ...). A stream is a PCG64 generator
seeded from ``(master_seed, crc32(label), *ids)`` so adding a new consumer
never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _label_code(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


@dataclass
class Stream:
    label: str
    seed_words: tuple[int, ...]
    generator: np.random.Generator

    def state(self) -> dict:
        """JSON-friendly record of the stream (for checkpoints)."""
        return {
            "label": self.label,
            "seed_words": list(self.seed_words),
            "bit_generator": self.generator.bit_generator.state,
        }

    @classmethod
    def from_state(cls, record: dict) -> "Stream":
        stream = make_stream_from_words(record["label"], tuple(record["seed_words"]))
        stream.generator.bit_generator.state = record["bit_generator"]
        return stream


def make_stream_from_words(label: str, words: tuple[int, ...]) -> Stream:
    seq = np.random.SeedSequence(list(words))
    return Stream(label, words, np.random.Generator(np.random.PCG64(seq)))


def make_stream(master_seed: int, label: str, *ids: int) -> Stream:
    if master_seed < 0 or any(i < 0 for i in ids):
        raise ValueError("seeds and stream ids must be non-negative")
    words = (int(master_seed), _label_code(label), *(int(i) for i in ids))
    full_label = label if not ids else label + "/" + "/".join(str(i) for i in ids)
    return make_stream_from_words(full_label, words)
