"""Circular (Morgan/ECFP-style) fingerprints and Tanimoto similarity."""

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import FrozenSet, Iterable

import numpy as np

from chem.smiles import ATOMIC_NUMBER, MolecularGraph, parse_graph
from errors import DegenerateSimilarityWarning, EmptyGraph, WidthMismatch

DEFAULT_RADIUS = 2
DEFAULT_N_BITS = 2048

MASK64 = (1 << 64) - 1
_HASH_SEED = 0x84222325CBF29CE4


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash_sequence(values: Iterable[int]) -> int:
    """Fixed 64-bit mixing of an integer sequence (independent of PYTHONHASHSEED)."""
    h = _HASH_SEED
    for v in values:
        h = _splitmix64(h ^ (int(v) & MASK64))
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: FrozenSet[int]
    n_bits: int = DEFAULT_N_BITS
    radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        if any(b < 0 or b >= self.n_bits for b in self.bits):
            raise ValueError("fingerprint bit outside [0, n_bits)")

    def __len__(self) -> int:
        return len(self.bits)

    def to_array(self) -> np.ndarray:
        arr = np.zeros(self.n_bits, dtype=np.uint8)
        if self.bits:
            arr[np.fromiter(self.bits, dtype=np.int64)] = 1
        return arr


def _initial_invariant(graph: MolecularGraph, idx: int) -> int:
    atom = graph.atoms[idx]
    return hash_sequence((
        ATOMIC_NUMBER.get(atom.element, 0),
        int(atom.aromatic),
        atom.charge,
        atom.hydrogens,
        graph.degree(idx),
    ))


def morgan_identifiers(graph: MolecularGraph, radius: int = DEFAULT_RADIUS) -> FrozenSet[int]:
    """Unfolded environment identifiers, one per distinct atom neighbourhood."""
    if len(graph) == 0:
        raise EmptyGraph("cannot fingerprint an empty graph")
    if radius < 0:
        raise ValueError("radius must be non-negative")

    n = len(graph)
    invariants = [_initial_invariant(graph, i) for i in range(n)]
    identifiers = set(invariants)

    empty: FrozenSet = frozenset()
    envs = [empty] * n
    seen_envs = {empty}
    for r in range(1, radius + 1):
        next_inv = []
        next_envs = []
        for a in range(n):
            neighbours = graph.neighbors(a)
            env = set(envs[a])
            for nbr, _ in neighbours:
                env.add(frozenset((a, nbr)))
                env.update(envs[nbr])
            next_envs.append(frozenset(env))
            shell = sorted((order, invariants[nbr]) for nbr, order in neighbours)
            next_inv.append(hash_sequence([r, invariants[a]] + [x for pair in shell for x in pair]))

        # one identifier per distinct bond environment; ties keep the smallest invariant
        kept = {}
        for env, inv in zip(next_envs, next_inv):
            if env in seen_envs:
                continue
            if env not in kept or inv < kept[env]:
                kept[env] = inv
        identifiers.update(kept.values())
        seen_envs.update(kept)

        invariants, envs = next_inv, next_envs
    return frozenset(identifiers)


def morgan_fingerprint(graph: MolecularGraph, radius: int = DEFAULT_RADIUS,
                       n_bits: int = DEFAULT_N_BITS) -> Fingerprint:
    if n_bits <= 0 or n_bits & (n_bits - 1):
        raise ValueError(f"n_bits must be a power of two, got {n_bits}")
    ids = morgan_identifiers(graph, radius)
    return Fingerprint(frozenset(i % n_bits for i in ids), n_bits, radius)


@lru_cache(maxsize=65536)
def smiles_fingerprint(smiles: str, radius: int = DEFAULT_RADIUS,
                       n_bits: int = DEFAULT_N_BITS) -> Fingerprint:
    return morgan_fingerprint(parse_graph(smiles), radius, n_bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|A ∩ B| / |A ∪ B|; 0.0 (with a DegenerateSimilarityWarning) when both are empty."""
    if a.n_bits != b.n_bits:
        raise WidthMismatch(a.n_bits, b.n_bits)
    inter = len(a.bits & b.bits)
    union = len(a.bits) + len(b.bits) - inter
    if union == 0:
        warnings.warn("tanimoto of two empty fingerprints", DegenerateSimilarityWarning, stacklevel=2)
        return 0.0
    return inter / union
