"""Shared fixtures and independent oracles for the test suite.

The brute-force posterior and the naive merge re-simulation below are kept
deliberately separate from the library implementations so they can serve as
independent cross-checks.
"""

import itertools

import numpy as np
import pytest

from maskorder.core import MaskedSequence, SampleRecord, Vocabulary
from maskorder.denoiser import MarkovDenoiser, MarkovModel, TemperedDenoiser
from maskorder.orders import DecodeConfig, decode


def sticky_chain(V: int, stay: float) -> MarkovModel:
    """Chain that keeps its current token with probability `stay`."""
    T = np.full((V, V), (1.0 - stay) / (V - 1))
    np.fill_diagonal(T, stay)
    return MarkovModel(np.full(V, 1.0 / V), T)


def random_chain(V: int, rng: np.random.Generator, diag_boost: float = 0.0) -> MarkovModel:
    T = rng.dirichlet(np.ones(V), size=V)
    if diag_boost:
        T = T + diag_boost * np.eye(V)
        T /= T.sum(axis=1, keepdims=True)
    return MarkovModel(rng.dirichlet(np.ones(V)), T)


def permutation_chain(V: int) -> MarkovModel:
    """Deterministic dynamics: each token maps to the next one cyclically."""
    T = np.zeros((V, V))
    for i in range(V):
        T[i, (i + 1) % V] = 1.0
    return MarkovModel(np.full(V, 1.0 / V), T)


def brute_force_posterior(model: MarkovModel, seq: MaskedSequence) -> dict:
    """Posterior marginals by enumerating every completion of the masked slots."""
    V = model.V
    masked = seq.masked_positions()
    M = len(masked)
    completions = np.array(list(itertools.product(range(V), repeat=M)), dtype=np.int64)
    full = np.tile(np.asarray(seq.tokens), (len(completions), 1))
    full[:, masked] = completions
    probs = model.initial[full[:, 0]].copy()
    for i in range(len(seq) - 1):
        probs *= model.transition[full[:, i], full[:, i + 1]]
    total = probs.sum()
    out = {}
    for j, pos in enumerate(masked):
        marg = np.bincount(completions[:, j], weights=probs, minlength=V)
        out[pos] = marg / total
    return out


def resimulate_merge(record: SampleRecord, denoiser):
    """Naive replay of the step-merging loop with a fresh query per group.

    Returns the list of merged (start, end) reference ranges.
    """
    traj = record.trajectory
    P = len(record.prompt)
    state = record.base()
    groups = []
    k = 1
    while k <= traj.n:
        out = denoiser.query(state)
        j = k + 1
        while j <= traj.n and all(
            int(np.argmax(out.row(P + pos))) == tok for pos, tok in traj.steps[j - 1]
        ):
            j += 1
        for step in traj.steps[k - 1 : j - 1]:
            state = state.reveal(sorted(step))
        groups.append((k, j - 1))
        k = j
    return groups


def make_instance(seed: int):
    """One seeded (denoiser, reference record) pair for the merge suites.

    Alternates V in {4, 8} and gen_len in {32, 64} and applies a seeded
    temper wrapper, so merge analyses see imperfect predictions. The noise
    ceiling keeps the denoiser in the regime where the final-results-
    preserving order stays at least as fast as the trajectory-preserving
    merge; that ordering is an empirical property, not a theorem, and very
    noisy denoisers can occasionally invert it.
    """
    rng = np.random.default_rng(seed)
    V = (4, 8)[seed % 2]
    gen_len = (32, 64)[(seed // 2) % 2]
    model = random_chain(V, rng, diag_boost=rng.uniform(0.5, 4.0))
    den = TemperedDenoiser(
        MarkovDenoiser(model),
        temperature=rng.uniform(0.9, 1.4),
        noise_scale=rng.uniform(0.0, 0.3),
        seed=seed,
    )
    prompt = model.sample_sequence(6, rng)
    cfg = DecodeConfig(threshold=0.8, seed=seed) if seed % 3 else DecodeConfig(seed=seed)
    traj = decode(den, prompt, gen_len, cfg)
    record = SampleRecord(f"inst-{seed}", Vocabulary(V), prompt, gen_len, traj)
    return den, record


@pytest.fixture(scope="session")
def merge_instances():
    return [make_instance(seed) for seed in range(100)]
