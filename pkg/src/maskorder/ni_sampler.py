"""Indicator-gated decoding.

Each iteration makes exactly one denoiser query: the base sampler's selection
guarantees progress, and the indicator then scores every remaining masked
position using features from that same query, revealing all positions whose
score reaches the gate threshold. Both reveal groups form one trajectory step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import MaskedSequence, Trajectory, apply_steps
from .denoiser import LOG_FLOOR, extract_features
from .merge import count_mergeable
from .orders import DecodeConfig, commit_token, select_positions

__all__ = ["NIConfig", "ConstantIndicator", "ni_decode", "oracle_indicator_decode"]


@dataclass(frozen=True)
class NIConfig:
    base: DecodeConfig = field(default_factory=lambda: DecodeConfig(threshold=0.9))
    eps_phi: float = 0.9
    k1: int = 4
    k2: int = 8
    temperature: Optional[float] = None  # None = greedy, float = random mode

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps_phi <= 1.0:
            raise ValueError(f"eps_phi must be in [0, 1], got {self.eps_phi}")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError("temperature must be positive")


class ConstantIndicator:
    """Stub indicator returning a fixed score; useful for gate identities."""

    def __init__(self, value: float):
        self.value = value

    def score_bundles(self, bundles) -> np.ndarray:
        return np.full(len(bundles), self.value)


def _bundle_for(out, pos, cfg: NIConfig, sampled_token=None):
    bundle = extract_features(out, pos, cfg.k1, cfg.k2)
    if sampled_token is None:
        return bundle
    # random mode: the actually sampled token and its log-probability take the
    # top-1 slots; the other ranked slots are kept as-is
    top_tokens = (sampled_token,) + bundle.top_tokens[1:]
    top_logits = bundle.top_logits.copy()
    top_logits[0] = np.log(max(float(out.row(pos)[sampled_token]), LOG_FLOOR))
    return type(bundle)(top_tokens, top_logits, bundle.hidden)


def ni_decode(denoiser, indicator, prompt, gen_len: int, cfg: NIConfig) -> Trajectory:
    """Decode with the base sampler plus indicator-gated parallel reveals."""
    if gen_len < 1:
        raise ValueError("gen_len must be >= 1")
    state = MaskedSequence.fully_masked(prompt, gen_len, denoiser.vocab)
    rng = np.random.default_rng(cfg.base.seed)
    P = state.prompt_len
    random_mode = cfg.temperature is not None
    steps = []
    for _ in range(gen_len):
        if not state.masked_positions():
            break
        out = denoiser.query(state)
        base_positions = sorted(select_positions(out, cfg.base))
        reveals = {
            pos: commit_token(out.row(pos), cfg.temperature, rng) for pos in base_positions
        }
        remaining = [p for p in state.masked_positions() if p not in reveals]
        if remaining:
            sampled = {}
            bundles = []
            for pos in remaining:
                if random_mode:
                    sampled[pos] = commit_token(out.row(pos), cfg.temperature, rng)
                    bundles.append(_bundle_for(out, pos, cfg, sampled[pos]))
                else:
                    bundles.append(_bundle_for(out, pos, cfg))
            scores = indicator.score_bundles(bundles)
            for pos, score in zip(remaining, scores):
                if score >= cfg.eps_phi:
                    reveals[pos] = (
                        sampled[pos] if random_mode else int(np.argmax(out.row(pos)))
                    )
        step = frozenset((pos - P, tok) for pos, tok in reveals.items())
        steps.append(step)
        state = state.reveal(sorted(step))
    if state.masked_positions():
        raise RuntimeError("ni_decode exceeded its step budget")
    return Trajectory(
        tuple(steps),
        meta={
            "sampler": "ni",
            "seed": cfg.base.seed,
            "eps_phi": cfg.eps_phi,
            "denoiser": denoiser.config_id,
        },
    )


def oracle_indicator_decode(denoiser, record, cfg: Optional[NIConfig] = None) -> Trajectory:
    """Decode gated by the exact mergeability oracle against a known reference.

    At each visited state (which must stay aligned with the reference
    trajectory) the positions revealed are exactly those that trajectory-
    preserving labeling marks positive with no probability floor.
    """
    traj = record.trajectory
    base = record.base()
    state = base
    k = 1
    steps = []
    while k <= traj.n:
        expected = apply_steps(base, traj, k)
        if state.tokens != expected.tokens:
            raise AssertionError("oracle decode diverged from the reference trajectory")
        idx = count_mergeable(traj, k, state, denoiser)
        step = frozenset().union(*traj.steps[k - 1 : idx - 1])
        steps.append(step)
        state = state.reveal(sorted(step))
        k = idx
    return Trajectory(
        tuple(steps),
        meta={**traj.meta, "sampler": "oracle-indicator"},
    )
