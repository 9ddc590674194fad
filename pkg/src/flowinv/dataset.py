"""Synthetic conditional distributions with engineered sink and diverse anchors.

Each anchor owns a block of condition tokens. In a diverse anchor every token
maps to its own Gaussian mode, so prompts genuinely steer the target. In a
sink anchor all tokens share one mode: the conditional distribution is
deliberately insensitive to the prompt, reproducing the diversity collapse the
diagnostics are built to detect. A handful of OOD tokens exist in the
embedding table but never appear in training batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import EMPTY_TOKEN, KIND_OOD, KIND_TRUE
from .errors import ConfigError
from .rng import stream


@dataclass(frozen=True)
class Anchor:
    name: str
    tokens: tuple[int, ...]
    modes: tuple[tuple[float, ...], ...]  # one mean per token, possibly all identical
    sink: bool

    def mode_of(self, token: int) -> np.ndarray:
        return np.asarray(self.modes[self.tokens.index(token)], dtype=np.float64)

    def distinct_modes(self) -> int:
        return len({m for m in self.modes})


@dataclass(frozen=True)
class DatasetSpec:
    anchors: tuple[Anchor, ...]
    ood_tokens: tuple[int, ...]
    seed: int
    d: int = 8
    stddev: float = 0.25
    p_uncond: float = 0.15

    def __post_init__(self):
        seen: set[int] = set()
        for anchor in self.anchors:
            if len(anchor.tokens) != len(anchor.modes):
                raise ConfigError(f"anchor {anchor.name}: token/mode count mismatch")
            if anchor.sink:
                if len(anchor.tokens) < 4 or anchor.distinct_modes() != 1:
                    raise ConfigError(f"sink anchor {anchor.name} needs >= 4 tokens sharing 1 mode")
            else:
                if len(anchor.tokens) < 4 or anchor.distinct_modes() < 4:
                    raise ConfigError(
                        f"diverse anchor {anchor.name} needs >= 4 tokens with >= 4 distinct modes"
                    )
            for token in anchor.tokens:
                if token == EMPTY_TOKEN:
                    raise ConfigError("token 0 is reserved for the empty condition")
                if token in seen:
                    raise ConfigError(f"token {token} assigned to more than one anchor")
                seen.add(token)
            for mode in anchor.modes:
                if len(mode) != self.d:
                    raise ConfigError(f"anchor {anchor.name}: mode length != d={self.d}")
        for token in self.ood_tokens:
            if token == EMPTY_TOKEN or token in seen:
                raise ConfigError(f"OOD token {token} collides with an assigned token")
        if self.stddev <= 0 or not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigError("stddev must be positive and p_uncond in [0, 1]")

    @property
    def vocab(self) -> int:
        highest = max([*(t for a in self.anchors for t in a.tokens), *self.ood_tokens])
        return highest + 1

    def trained_tokens(self) -> tuple[int, ...]:
        return tuple(t for a in self.anchors for t in a.tokens)

    def anchor_of(self, token: int) -> Anchor:
        for anchor in self.anchors:
            if token in anchor.tokens:
                return anchor
        raise ConfigError(f"token {token} belongs to no anchor")

    def mode_of(self, token: int) -> np.ndarray:
        return self.anchor_of(token).mode_of(token)

    def all_modes(self) -> Iterator[tuple[str, int, np.ndarray]]:
        """(anchor name, representative token, mode mean) over every distinct mode."""
        seen: set[tuple[float, ...]] = set()
        for anchor in self.anchors:
            for token, mode in zip(anchor.tokens, anchor.modes):
                if mode not in seen:
                    seen.add(mode)
                    yield anchor.name, token, np.asarray(mode, dtype=np.float64)

    def token_kinds(self) -> dict[int, str]:
        kinds = {t: KIND_TRUE for t in self.trained_tokens()}
        kinds.update({t: KIND_OOD for t in self.ood_tokens})
        return kinds

    def approximate_token(self, token: int) -> int:
        """Near-but-wrong prompt for `token`.

        Diverse anchors: another token of the same anchor with a different
        mode. Sink anchors: the first token of the next anchor (any same-anchor
        token maps to the same mode, so "approximate" must leave the anchor).
        """
        anchor = self.anchor_of(token)
        if not anchor.sink:
            own = anchor.mode_of(token)
            for other in anchor.tokens:
                if other != token and not np.array_equal(anchor.mode_of(other), own):
                    return other
        idx = self.anchors.index(anchor)
        return self.anchors[(idx + 1) % len(self.anchors)].tokens[0]

    def to_dict(self) -> dict:
        return {
            "anchors": [
                {"name": a.name, "tokens": list(a.tokens),
                 "modes": [list(m) for m in a.modes], "sink": a.sink}
                for a in self.anchors
            ],
            "ood_tokens": list(self.ood_tokens),
            "seed": self.seed,
            "d": self.d,
            "stddev": self.stddev,
            "p_uncond": self.p_uncond,
        }

    @staticmethod
    def from_dict(data: dict) -> "DatasetSpec":
        anchors = tuple(
            Anchor(
                name=a["name"], tokens=tuple(a["tokens"]),
                modes=tuple(tuple(m) for m in a["modes"]), sink=a["sink"],
            )
            for a in data["anchors"]
        )
        return DatasetSpec(
            anchors=anchors, ood_tokens=tuple(data["ood_tokens"]), seed=data["seed"],
            d=data["d"], stddev=data["stddev"], p_uncond=data["p_uncond"],
        )


def default_spec(seed: int = 0, d: int = 8) -> DatasetSpec:
    """Two diverse anchors (8 tokens, 8 modes each), two sink anchors (8 tokens,
    1 mode each), 6 OOD tokens; modes seeded on the radius-3 sphere."""
    rng = stream(seed, "dataset", "modes")
    raw = rng.standard_normal((18, d))
    modes = 3.0 * raw / np.linalg.norm(raw, axis=1, keepdims=True)
    as_tuple = [tuple(m) for m in modes]

    anchors = (
        Anchor("critters", tokens=tuple(range(1, 9)), modes=tuple(as_tuple[0:8]), sink=False),
        Anchor("vehicles", tokens=tuple(range(9, 17)), modes=tuple(as_tuple[8:16]), sink=False),
        Anchor("mascot", tokens=tuple(range(17, 25)), modes=(as_tuple[16],) * 8, sink=True),
        Anchor("statue", tokens=tuple(range(25, 33)), modes=(as_tuple[17],) * 8, sink=True),
    )
    return DatasetSpec(anchors=anchors, ood_tokens=tuple(range(33, 39)), seed=seed, d=d)


def draw_mode_sample(spec: DatasetSpec, token: int, rng: np.random.Generator) -> np.ndarray:
    """One data-space sample from a trained token's mode."""
    return spec.mode_of(token) + spec.stddev * rng.standard_normal(spec.d)


def sample_pair(spec: DatasetSpec, rng: np.random.Generator) -> tuple[np.ndarray, int, np.ndarray]:
    """Draw (x0, token, x1): data point from the token's mode, noise from N(0, I).

    The emitted token drops to 0 with probability p_uncond so the unconditional
    branch sees the full data marginal during training.
    """
    tokens = spec.trained_tokens()
    token = int(tokens[rng.integers(len(tokens))])
    x0 = draw_mode_sample(spec, token, rng)
    x1 = rng.standard_normal(spec.d)
    emitted = EMPTY_TOKEN if rng.random() < spec.p_uncond else token
    return x0, emitted, x1
