"""Corpus curation: holdout exclusion, similarity pair mining, SimNet sampling, splits.

Pair mining uses an inverted bit -> molecule index: two molecules without a
shared fingerprint bit have Tanimoto 0, so only molecules appearing in one of
X's posting lists are ever scored.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple, TypeVar

import numpy as np
import pandas as pd
from tqdm import tqdm

from chem.fingerprint import DEFAULT_N_BITS, DEFAULT_RADIUS, Fingerprint, morgan_fingerprint, tanimoto
from chem.properties import PropertyVector
from chem.smiles import parse_graph
from config import PROPERTY_NAMES
from errors import InsufficientNegatives, MissingProperties, ParseError, TooFewRows

logger = logging.getLogger(__name__)

T = TypeVar("T")

PX_COLUMNS = ["px1", "px2", "px3"]
PY_COLUMNS = ["py1", "py2", "py3"]
PAIR_COLUMNS = ["x_smiles", "y_smiles", "similarity"] + PX_COLUMNS + PY_COLUMNS


@dataclass(frozen=True)
class MoleculeRecord:
    smiles: str
    properties: Optional[PropertyVector]
    fingerprint: Fingerprint


@dataclass(frozen=True)
class PairRecord:
    x: MoleculeRecord
    y: MoleculeRecord
    similarity: float


@dataclass(frozen=True)
class LabeledPair:
    pair: PairRecord
    label: int


class MiningStats(NamedTuple):
    visited: int      # posting-list entries
    evaluated: int    # candidate pairs scored
    emitted: int


def build_records(smiles: Sequence[str], properties: Optional[Mapping[str, PropertyVector]] = None,
                  radius: int = DEFAULT_RADIUS, n_bits: int = DEFAULT_N_BITS,
                  require_properties: bool = True) -> List[MoleculeRecord]:
    records = []
    missing = []
    for s in smiles:
        props = properties.get(s) if properties is not None else None
        if props is None and require_properties:
            missing.append(s)
            continue
        records.append(MoleculeRecord(s, props, morgan_fingerprint(parse_graph(s), radius, n_bits)))
    if missing:
        raise MissingProperties(f"{len(missing)} molecules have no properties, e.g. {missing[0]!r}")
    return records


def exclude_molecules(corpus: Sequence[str], holdouts: Iterable[Iterable[str]]) -> Tuple[List[str], int]:
    """Drop every corpus entry that appears verbatim in any holdout set."""
    banned: Set[str] = set()
    for h in holdouts:
        banned.update(h)
    kept = [s for s in corpus if s not in banned]
    return kept, len(corpus) - len(kept)


def build_bit_index(records: Sequence[MoleculeRecord]) -> Dict[int, np.ndarray]:
    postings: Dict[int, List[int]] = {}
    for i, r in enumerate(records):
        for b in r.fingerprint.bits:
            postings.setdefault(b, []).append(i)
    return {b: np.asarray(ids, dtype=np.int64) for b, ids in postings.items()}


def mine_pairs(records: Sequence[MoleculeRecord], delta: float, threads: int = 1, ordered: bool = True,
               progress: bool = False) -> Tuple[List[PairRecord], MiningStats]:
    """All pairs with Tanimoto >= delta, sorted by (index of X, index of Y).

    ``ordered`` emits both (X, Y) and (Y, X); otherwise only X before Y.
    """
    n = len(records)
    if n == 0:
        return [], MiningStats(0, 0, 0)
    sizes = np.array([len(r.fingerprint) for r in records], dtype=np.int64)
    index = build_bit_index(records)

    def work(block: np.ndarray):
        found = []
        visited = evaluated = 0
        for i in block:
            bits = records[i].fingerprint.bits
            if not bits:
                continue
            postings = np.concatenate([index[b] for b in bits])
            visited += postings.size
            cand, shared = np.unique(postings, return_counts=True)
            keep = cand > i if not ordered else cand != i
            cand, shared = cand[keep], shared[keep]
            evaluated += cand.size
            sim = shared / (sizes[i] + sizes[cand] - shared)
            hit = sim >= delta
            found.extend((int(i), int(j), float(s)) for j, s in zip(cand[hit], sim[hit]))
        return found, visited, evaluated

    blocks = [b for b in np.array_split(np.arange(n), max(1, threads * 4)) if b.size]
    hits: List[Tuple[int, int, float]] = []
    visited = evaluated = 0
    with ThreadPoolExecutor(max_workers=threads) as executor:
        for found, p, e in tqdm(executor.map(work, blocks), total=len(blocks), desc="Mining",
                                disable=not progress):
            hits.extend(found)
            visited += p
            evaluated += e
    hits.sort(key=lambda h: (h[0], h[1]))
    pairs = [PairRecord(records[i], records[j], s) for i, j, s in hits]
    stats = MiningStats(visited, evaluated, len(pairs))
    logger.info("Mined %d pairs from %d molecules (%d candidates scored)", len(pairs), n, evaluated)
    return pairs, stats


def naive_mine_pairs(records: Sequence[MoleculeRecord], delta: float, ordered: bool = True) -> List[PairRecord]:
    """Reference O(n^2) double loop."""
    pairs = []
    for i, x in enumerate(records):
        for j, y in enumerate(records):
            if i == j or (not ordered and j < i):
                continue
            s = tanimoto(x.fingerprint, y.fingerprint)
            if s >= delta:
                pairs.append(PairRecord(x, y, s))
    return pairs


def sample_negative_pairs(records: Sequence[MoleculeRecord], delta: float, cap: int,
                          seed: int = 0) -> List[PairRecord]:
    """Random partners per molecule, kept when Tanimoto < delta; at most ``cap`` draws each."""
    n = len(records)
    if n < 2:
        return []
    rng = np.random.default_rng(seed)
    seen = set()
    negatives = []
    for i in range(n):
        draws = rng.choice(n - 1, size=min(cap, n - 1), replace=False)
        for d in draws:
            j = int(d) + (1 if d >= i else 0)
            if (i, j) in seen:
                continue
            seen.add((i, j))
            s = tanimoto(records[i].fingerprint, records[j].fingerprint)
            if s < delta:
                negatives.append(PairRecord(records[i], records[j], s))
    return negatives


def _largest_remainder(total: int, weights: Sequence[int]) -> List[int]:
    weights = np.asarray(weights, dtype=np.float64)
    exact = total * weights / weights.sum()
    quotas = np.floor(exact).astype(int)
    short = total - quotas.sum()
    order = np.argsort(-(exact - quotas), kind="stable")
    quotas[order[:short]] += 1
    return quotas.tolist()


def _stratified(pairs: Sequence[PairRecord], n: int, bins: int, rng: np.random.Generator) -> List[PairRecord]:
    """Sample ``n`` pairs keeping the similarity histogram over ``bins`` uniform bins."""
    if n >= len(pairs):
        return list(pairs)
    groups: List[List[PairRecord]] = [[] for _ in range(bins)]
    for p in pairs:
        groups[min(int(p.similarity * bins), bins - 1)].append(p)
    quotas = _largest_remainder(n, [len(g) for g in groups])
    chosen = []
    for group, quota in zip(groups, quotas):
        if quota:
            picks = np.sort(rng.choice(len(group), size=quota, replace=False))
            chosen.extend(group[k] for k in picks)
    return chosen


def subsample_simnet(pairs: Sequence[PairRecord], fraction: float, target_positive_ratio: float,
                     bins: int = 10, seed: int = 0, delta: float = 0.4) -> List[LabeledPair]:
    """Labelled SimNet sample with the requested positive ratio and per-class similarity histograms.

    The sample shrinks below ``fraction`` when either class runs short.
    ``InsufficientNegatives`` means the ratio cannot be met within 0.01.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not 0.0 < target_positive_ratio < 1.0:
        raise ValueError(f"positive ratio must be in (0, 1), got {target_positive_ratio}")
    positives = [p for p in pairs if p.similarity >= delta]
    negatives = [p for p in pairs if p.similarity < delta]
    total = int(round(fraction * len(pairs)))
    n_pos = int(round(target_positive_ratio * total))
    if n_pos > len(positives):
        n_pos = len(positives)
        total = int(round(n_pos / target_positive_ratio))
    n_neg = total - n_pos
    if n_neg > len(negatives):
        n_neg = len(negatives)
        n_pos = min(n_pos, int(round(n_neg * target_positive_ratio / (1.0 - target_positive_ratio))))
    total = n_pos + n_neg
    if total == 0 or abs(n_pos / total - target_positive_ratio) > 0.01:
        raise InsufficientNegatives(f"{n_pos} positive and {n_neg} negative pairs cannot reach "
                                    f"positive ratio {target_positive_ratio}")

    rng = np.random.default_rng(seed)
    sample = ([LabeledPair(p, 1) for p in _stratified(positives, n_pos, bins, rng)]
              + [LabeledPair(p, 0) for p in _stratified(negatives, n_neg, bins, rng)])
    order = rng.permutation(len(sample))
    sample = [sample[k] for k in order]
    logger.info("SimNet sample: %d pairs, positive ratio %.4f", len(sample), n_pos / max(len(sample), 1))
    return sample


def split(rows: Sequence[T], ratio: float, seed: int = 0) -> Tuple[List[T], List[T]]:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(round(ratio * len(rows)))
    if n_train == 0 or n_train == len(rows):
        raise TooFewRows(f"cannot split {len(rows)} rows at ratio {ratio}")
    order = np.random.default_rng(seed).permutation(len(rows))
    return [rows[k] for k in order[:n_train]], [rows[k] for k in order[n_train:]]


def audit_leakage(pairs: Iterable[PairRecord], holdouts: Iterable[Iterable[str]]) -> List[str]:
    """Molecules from the pairs that also occur in a holdout set."""
    banned: Set[str] = set()
    for h in holdouts:
        banned.update(h)
    found = set()
    for p in pairs:
        found.update(s for s in (p.x.smiles, p.y.smiles) if s in banned)
    return sorted(found)


# TSV artifacts

def write_tsv(path, frame: pd.DataFrame, header: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if header:
            f.write(f"# {header}\n")
        frame.to_csv(f, sep="\t", index=False, lineterminator="\n", float_format=None)
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def read_tsv(path, required: Sequence[str] = ()) -> pd.DataFrame:
    """Read a TSV artifact; leading ``#`` lines are comments (``#`` is also a SMILES bond, so no inline comments)."""
    path = Path(path)
    skip = 0
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            skip += 1
    frame = pd.read_csv(path, sep="\t", skiprows=skip, dtype=str, keep_default_na=False)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(f"missing columns {missing}", skip + 1, path)
    return frame


def _float_column(frame: pd.DataFrame, column: str, path) -> np.ndarray:
    try:
        return frame[column].astype(np.float64).to_numpy()
    except ValueError:
        bad = next(k for k, v in enumerate(frame[column]) if not _is_float(v))
        raise ParseError(f"non-numeric {column} value {frame[column].iloc[bad]!r}", bad + 2, path) from None


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def pair_frame(pairs: Sequence[PairRecord], labels: Optional[Sequence[int]] = None) -> pd.DataFrame:
    rows = []
    for k, p in enumerate(pairs):
        px = p.x.properties.as_array() if p.x.properties is not None else np.full(3, np.nan)
        py = p.y.properties.as_array() if p.y.properties is not None else np.full(3, np.nan)
        row = [p.x.smiles, p.y.smiles, repr(p.similarity)] + [repr(float(v)) for v in px] + [repr(float(v)) for v in py]
        if labels is not None:
            row.append(int(labels[k]))
        rows.append(row)
    columns = PAIR_COLUMNS + (["label"] if labels is not None else [])
    return pd.DataFrame(rows, columns=columns)


class PairTable(NamedTuple):
    x: List[str]
    y: List[str]
    similarity: np.ndarray
    p_x: np.ndarray
    p_y: np.ndarray
    labels: Optional[np.ndarray]

    def __len__(self) -> int:
        return len(self.x)


def read_pairs(path) -> PairTable:
    frame = read_tsv(path, PAIR_COLUMNS)
    labels = _float_column(frame, "label", path).astype(int) if "label" in frame.columns else None
    return PairTable(
        frame["x_smiles"].tolist(),
        frame["y_smiles"].tolist(),
        _float_column(frame, "similarity", path),
        np.stack([_float_column(frame, c, path) for c in PX_COLUMNS], axis=1) if len(frame) else np.zeros((0, 3)),
        np.stack([_float_column(frame, c, path) for c in PY_COLUMNS], axis=1) if len(frame) else np.zeros((0, 3)),
        labels,
    )


def molecule_frame(records: Sequence[MoleculeRecord]) -> pd.DataFrame:
    rows = [[r.smiles] + [repr(float(v)) for v in r.properties.as_array()] for r in records]
    return pd.DataFrame(rows, columns=["smiles", *PROPERTY_NAMES])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
