"""Baseline decoding strategies: full-step selection rules and threshold mode.

Note on the entropy rule: the selection score is the signed sum p*log(p)
(larger = more confident), so its argmax picks the *lowest*-entropy position.
The conventional name "highest entropy" for this rule conflicts with that
formula; the formula is what is implemented here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import MaskedSequence, Trajectory
from .denoiser import LOG_FLOOR, DenoiserOutput

RULES = ("prob", "margin", "negentropy")

__all__ = ["RULES", "DecodeConfig", "position_score", "select_positions", "decode", "categorical_sample"]


@dataclass(frozen=True)
class DecodeConfig:
    """Configuration of a baseline decode.

    threshold is None for full-step mode (one token per step); temperature is
    None for greedy token commitment.
    """

    rule: str = "prob"
    threshold: Optional[float] = None
    temperature: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}, expected one of {RULES}")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def sampler_name(self) -> str:
        return "full" if self.threshold is None else "threshold"


def position_score(row: np.ndarray, rule: str) -> float:
    """Confidence score of one probability row; larger means more confident."""
    row = np.asarray(row)
    if abs(row.sum() - 1.0) > 1e-6 or np.any(row < 0):
        raise ValueError("row is not a normalized distribution")
    if rule == "prob":
        return float(row.max())
    if rule == "margin":
        top2 = np.partition(row, -2)[-2:]
        return float(top2[1] - top2[0])
    if rule == "negentropy":
        return float(np.sum(row * np.log(np.maximum(row, LOG_FLOOR))))
    raise ValueError(f"unknown rule {rule!r}")


def _best_position(out: DenoiserOutput, rule: str) -> int:
    # ties break toward the lowest position index
    best_pos, best_score = None, -np.inf
    for j, pos in enumerate(out.positions):
        score = position_score(out.dists[j], rule)
        if score > best_score:
            best_pos, best_score = pos, score
    return best_pos


def select_positions(out: DenoiserOutput, cfg: DecodeConfig) -> list:
    """Absolute positions to reveal this step.

    Full-step mode picks the single best-scoring position. Threshold mode
    picks every position whose top-1 probability is >= the threshold, falling
    back to the single best-scoring position so that progress is guaranteed.
    """
    if not out.positions:
        raise ValueError("no masked positions to select from")
    if cfg.threshold is None:
        return [_best_position(out, cfg.rule)]
    chosen = [
        pos
        for j, pos in enumerate(out.positions)
        if out.dists[j].max() >= cfg.threshold
    ]
    if not chosen:
        chosen = [_best_position(out, cfg.rule)]
    return chosen


def categorical_sample(row: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Sample a token from softmax(log row / temperature)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logp = np.log(np.maximum(np.asarray(row, dtype=np.float64), 1e-300)) / temperature
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum()
    return int(rng.choice(p.shape[0], p=p))


def commit_token(row: np.ndarray, temperature: Optional[float], rng) -> int:
    """Greedy argmax (ties toward the lower id) or a categorical sample."""
    if temperature is None:
        return int(np.argmax(row))
    return categorical_sample(row, temperature, rng)


def decode(denoiser, prompt, gen_len: int, cfg: DecodeConfig) -> Trajectory:
    """Run a baseline decode to completion and return its trajectory."""
    if gen_len < 1:
        raise ValueError("gen_len must be >= 1")
    state = MaskedSequence.fully_masked(prompt, gen_len, denoiser.vocab)
    rng = np.random.default_rng(cfg.seed)
    steps = []
    for _ in range(gen_len):
        if not state.masked_positions():
            break
        out = denoiser.query(state)
        positions = select_positions(out, cfg)
        step = frozenset(
            (pos - state.prompt_len, commit_token(out.row(pos), cfg.temperature, rng))
            for pos in sorted(positions)
        )
        steps.append(step)
        state = state.reveal(sorted(step))
    if state.masked_positions():
        raise RuntimeError("decode exceeded its step budget; sampler made no progress")
    meta = {
        "sampler": cfg.sampler_name,
        "rule": cfg.rule,
        "seed": cfg.seed,
        "denoiser": denoiser.config_id,
    }
    if cfg.threshold is not None:
        meta["threshold"] = cfg.threshold
    return Trajectory(tuple(steps), meta=meta)
