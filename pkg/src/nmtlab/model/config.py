from __future__ import annotations

from dataclasses import asdict, dataclass

from ..subword import SPECIALS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 512
    max_len: int = 64
    n_langs: int = 2
    dropout: float = 0.1
    tie_embeddings: bool = True

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_ff < 1:
            raise ConfigError("d_ff must be >= 1")
        if self.vocab_size < len(SPECIALS):
            raise ConfigError(f"vocab_size must be >= {len(SPECIALS)} (the special tokens)")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.n_langs < 1:
            raise ConfigError("n_langs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding settings; ``greedy`` is beam search with one beam and alpha 0.

    ``sample`` draws each token from the softmax at ``temperature``; it is
    meant for back-translation and needs a random generator.
    """

    mode: str = "greedy"
    beam_size: int = 1
    length_alpha: float = 0.0
    max_len: int = 64
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in ("greedy", "beam", "sample"):
            raise ConfigError(f"unknown decode mode {self.mode!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ConfigError("decode max_len must be >= 1")

    @classmethod
    def greedy(cls, max_len: int = 64) -> "DecodeConfig":
        return cls("greedy", 1, 0.0, max_len)

    @classmethod
    def beam(cls, beam_size: int = 8, alpha: float = 0.8, max_len: int = 64) -> "DecodeConfig":
        return cls("beam", beam_size, alpha, max_len)

    def to_dict(self) -> dict:
        return asdict(self)
