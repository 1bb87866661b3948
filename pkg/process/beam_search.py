"""Beam search, constraint rescoring of finished candidates, and target jitter."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from errors import EmptyCandidates, NoCompleteCandidate


@dataclass(frozen=True)
class BeamCandidate:
    tokens: Tuple[int, ...]   # [BEGIN] ... [END]
    score: float              # cumulative log-likelihood, <= 0


@dataclass(frozen=True)
class RescoredCandidate:
    candidate: BeamCandidate
    s_pn: float
    s_sn: float

    @property
    def total(self) -> float:
        return self.candidate.score + self.s_pn + self.s_sn


class StepScorer(Protocol):
    def log_probs(self, prefixes: np.ndarray) -> np.ndarray:
        """(N, t) equal-length prefixes -> (N, V) next-token log-probabilities."""


class CandidateScorer(Protocol):
    def properties(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        ...

    def similarity(self, x_tokens: Sequence[int], seqs: Sequence[Sequence[int]]) -> np.ndarray:
        ...


def _rank_key(score: float, tokens: Tuple[int, ...]):
    return (-score, tokens)


class CachedStepScorer:
    """Memoises per-prefix rows so repeated passes over one input query each prefix once."""

    def __init__(self, scorer: StepScorer):
        self.scorer = scorer
        self._rows: Dict[Tuple[int, ...], np.ndarray] = {}

    def log_probs(self, prefixes: np.ndarray) -> np.ndarray:
        keys = [tuple(int(t) for t in p) for p in prefixes]
        missing = list(dict.fromkeys(k for k in keys if k not in self._rows))
        if missing:
            rows = self.scorer.log_probs(np.array(missing, dtype=np.int64))
            self._rows.update(zip(missing, rows))
        return np.stack([self._rows[k] for k in keys])


def _beam_pass(scorer: StepScorer, begin_id: int, end_id: int, width: int, max_len: int,
               banned: Set[int]) -> Dict[Tuple[int, ...], float]:
    """One fixed-width pass; every expansion that lands on [END] within the width is kept."""
    live: List[Tuple[Tuple[int, ...], float]] = [((begin_id,), 0.0)]
    finished: Dict[Tuple[int, ...], float] = {}

    for _ in range(max_len - 1):
        if not live:
            break
        prefixes = np.array([tokens for tokens, _ in live], dtype=np.int64)
        log_probs = scorer.log_probs(prefixes)
        allowed = [v for v in range(log_probs.shape[1]) if v not in banned]

        expansions = []
        for row, (tokens, score) in enumerate(live):
            for v in allowed:
                expansions.append((score + float(log_probs[row, v]), tokens + (v,)))
        expansions.sort(key=lambda e: _rank_key(*e))

        live = []
        for score, tokens in expansions[:width]:
            if tokens[-1] == end_id:
                finished[tokens] = score
            else:
                live.append((tokens, score))
    return finished


def beam_search(scorer: StepScorer, begin_id: int, end_id: int, beam_width: int, max_len: int,
                banned: Iterable[int] = (), length_norm: bool = False) -> List[BeamCandidate]:
    """Keep the ``beam_width`` best expansions per step; [END] expansions retire.

    The finished pool of width ``b`` is the union of the pools of the passes at
    widths ``1..b``; its best score is non-decreasing in ``b``. Returns
    at most ``beam_width`` candidates best first, ties broken by lexicographic
    token order. Sequences that reach ``max_len`` without [END] are dropped.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    banned = set(banned)
    cached = CachedStepScorer(scorer)
    pool: Dict[Tuple[int, ...], float] = {}
    for width in range(1, beam_width + 1):
        pool.update(_beam_pass(cached, begin_id, end_id, width, max_len, banned))

    if not pool:
        raise NoCompleteCandidate(f"no sequence reached [END] within {max_len} tokens")
    finished = [BeamCandidate(tokens, score) for tokens, score in pool.items()]
    if length_norm:
        finished = [BeamCandidate(c.tokens, c.score / (len(c.tokens) - 1)) for c in finished]
    finished.sort(key=lambda c: _rank_key(c.score, c.tokens))
    return finished[:beam_width]


def rescore(candidates: Sequence[BeamCandidate], x_tokens: Sequence[int], p_y, scorer: CandidateScorer,
            use_propnet: bool = True, use_simnet: bool = True) -> List[RescoredCandidate]:
    """Attach s_pn = mean(1 - |p_y - p̂|) and s_sn = SimNet(x, c) to every candidate."""
    if not candidates:
        raise EmptyCandidates("nothing to rescore")
    seqs = [list(c.tokens) for c in candidates]
    n = len(seqs)
    s_pn = np.zeros(n)
    s_sn = np.zeros(n)
    if use_propnet:
        p_hat = np.asarray(scorer.properties(seqs), dtype=np.float64)
        s_pn = np.mean(1.0 - np.abs(np.asarray(p_y, dtype=np.float64)[None, :] - p_hat), axis=1)
    if use_simnet:
        s_sn = np.asarray(scorer.similarity(list(x_tokens), seqs), dtype=np.float64).reshape(n)
    return [RescoredCandidate(c, float(a), float(b)) for c, a, b in zip(candidates, s_pn, s_sn)]


def select_best(rescored: Sequence[RescoredCandidate]) -> RescoredCandidate:
    if not rescored:
        raise EmptyCandidates("nothing to select from")
    return min(rescored, key=lambda r: _rank_key(r.total, r.candidate.tokens))


def rescore_select(candidates: Sequence[BeamCandidate], x_tokens: Sequence[int], p_y,
                   scorer: CandidateScorer, use_propnet: bool = True,
                   use_simnet: bool = True) -> RescoredCandidate:
    """Constraint-aware selection: argmax of s_i + s_pn + s_sn."""
    return select_best(rescore(candidates, x_tokens, p_y, scorer, use_propnet, use_simnet))


class DiversifyConfig(BaseModel):
    sigma: Tuple[float, ...] = (0.0, 0.0, 0.0)
    n_samples: int = Field(20, ge=1)

    @field_validator("sigma")
    @classmethod
    def _non_negative(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("sigma entries must be non-negative")
        return v


def diversify_targets(p_y, cfg: DiversifyConfig, seed: Optional[int] = 0) -> np.ndarray:
    """``n_samples`` copies of ``p_y`` with independent N(0, sigma_k) noise per dimension."""
    p_y = np.asarray(p_y, dtype=np.float64)
    sigma = np.asarray(cfg.sigma, dtype=np.float64)
    if sigma.shape != p_y.shape:
        raise ValueError(f"sigma has {sigma.size} entries for {p_y.size} properties")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((cfg.n_samples, p_y.size))
    return p_y[None, :] + noise * sigma[None, :]
