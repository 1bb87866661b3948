"""SMILES vocabulary, character tokenizer and grammar-level graph parser.

The parser builds a :class:`MolecularGraph` (atoms, bonds) without any
valence or aromaticity perception: lowercase atoms are flagged aromatic and
bonds between two aromatic atoms default to the aromatic order.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    BadBracketAtom,
    EmptyGraph,
    MalformedSequence,
    SmilesError,
    SmilesSyntaxError,
    TooLong,
    UnclosedRing,
    UnknownCharacter,
)

logger = logging.getLogger(__name__)

PAD, BEGIN, END = "[PAD]", "[BEGIN]", "[END]"
SPECIAL_TOKENS = (PAD, BEGIN, END)

SMILES_ALPHABET = (
    "#$%()*+-./0123456789:=@"
    "ABCDEFGHIKLMNOPRSTUVWXYZ"
    "[\\]"
    "abcdefghiklmnoprstuy"
)

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu "
    "Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba "
    "La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi "
    "Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds "
    "Rg Cn Nh Fl Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {symbol: z for z, symbol in enumerate(ELEMENTS, start=1)}
ATOMIC_NUMBER["*"] = 0

DIGITS = "0123456789"
ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")

BRACKET_ATOM = re.compile(
    r"^(?P<isotope>\d+)?"
    r"(?P<symbol>se|as|te|[bcnops]|[A-Z][a-z]?|\*)"
    r"(?P<chirality>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>\+\+?|--?|[+-]\d+)?"
    r"(?::\d+)?\Z",
    re.ASCII,
)


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4
    QUADRUPLE = 5


BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    "$": BondOrder.QUADRUPLE,
    ":": BondOrder.AROMATIC,
}


class Vocabulary:
    """Character-level vocabulary: one id per SMILES character plus [PAD], [BEGIN], [END]."""

    def __init__(self, alphabet: Iterable[str] = SMILES_ALPHABET):
        chars = sorted(set(alphabet))
        for ch in chars:
            if len(ch) != 1 or ch.isspace():
                raise ValueError(f"vocabulary entries must be single non-space characters: {ch!r}")
        self.tokens: List[str] = list(SPECIAL_TOKENS) + chars
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_smiles(cls, corpus: Iterable[str]) -> "Vocabulary":
        chars = set()
        for s in corpus:
            chars.update(s)
        return cls(chars)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def begin_id(self) -> int:
        return 1

    @property
    def end_id(self) -> int:
        return 2

    @property
    def alphabet(self) -> str:
        return "".join(self.tokens[len(SPECIAL_TOKENS):])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(tuple(self.tokens))

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    def index(self, char: str) -> Optional[int]:
        return self._index.get(char)

    def token(self, idx: int) -> str:
        return self.tokens[idx]


def tokenize(s: str, vocab: Vocabulary, max_len: Optional[int] = None) -> List[int]:
    """Map a SMILES string to [BEGIN] c_1 ... c_n [END]."""
    if not s:
        raise SmilesSyntaxError("empty SMILES")
    if max_len is not None and len(s) + 2 > max_len:
        raise TooLong(len(s) + 2, max_len)
    ids = [vocab.begin_id]
    for pos, ch in enumerate(s):
        idx = vocab.index(ch)
        if idx is None:
            raise UnknownCharacter(ch, pos)
        ids.append(idx)
    ids.append(vocab.end_id)
    return ids


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    ids = [int(i) for i in ids]
    if not ids or ids[0] != vocab.begin_id:
        raise MalformedSequence("sequence does not start with [BEGIN]")
    try:
        end = ids.index(vocab.end_id)
    except ValueError:
        raise MalformedSequence("sequence has no [END] token") from None
    if any(i != vocab.pad_id for i in ids[end + 1:]):
        raise MalformedSequence("non-pad tokens after [END]")
    body = ids[1:end]
    if not body:
        raise MalformedSequence("empty molecule")
    chars = []
    for i in body:
        if i < len(SPECIAL_TOKENS) or i >= len(vocab):
            raise MalformedSequence(f"unexpected token id {i} inside sequence")
        chars.append(vocab.token(i))
    return "".join(chars)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0, length: Optional[int] = None) -> np.ndarray:
    width = length if length is not None else max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for row, seq in enumerate(seqs):
        out[row, :len(seq)] = seq
    return out


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    hydrogens: int = 0


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE


@dataclass(frozen=True)
class MolecularGraph:
    atoms: Tuple[Atom, ...]
    bonds: Tuple[Bond, ...]
    _adjacency: Tuple[Tuple[Tuple[int, int], ...], ...] = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        adjacency = [[] for _ in range(n)]
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n) or bond.a == bond.b:
                raise SmilesSyntaxError(f"invalid bond endpoints ({bond.a}, {bond.b})")
            pair = frozenset((bond.a, bond.b))
            if pair in seen:
                raise SmilesSyntaxError(f"duplicate bond between atoms {bond.a} and {bond.b}")
            seen.add(pair)
            adjacency[bond.a].append((bond.b, int(bond.order)))
            adjacency[bond.b].append((bond.a, int(bond.order)))
        object.__setattr__(self, "_adjacency", tuple(tuple(a) for a in adjacency))

    def __len__(self) -> int:
        return len(self.atoms)

    def neighbors(self, idx: int) -> Tuple[Tuple[int, int], ...]:
        """(neighbor index, bond order) pairs of atom ``idx``."""
        return self._adjacency[idx]

    def degree(self, idx: int) -> int:
        return len(self._adjacency[idx])

    def n_components(self) -> int:
        seen = [False] * len(self.atoms)
        count = 0
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                cur = stack.pop()
                for nbr, _ in self._adjacency[cur]:
                    if not seen[nbr]:
                        seen[nbr] = True
                        stack.append(nbr)
        return count

    def n_rings(self) -> int:
        # cyclomatic number
        return len(self.bonds) - len(self.atoms) + self.n_components()

    def permuted(self, order: Sequence[int], bond_order: Optional[Sequence[int]] = None) -> "MolecularGraph":
        """Relabel atoms so that new atom i is old atom ``order[i]``.

        Bonds are listed in ``bond_order`` (indexes into ``self.bonds``) when
        given, otherwise in their current order; endpoints are swapped.
        """
        if sorted(order) != list(range(len(self.atoms))):
            raise ValueError("order must be a permutation of the atom indexes")
        if bond_order is None:
            bond_order = range(len(self.bonds))
        elif sorted(bond_order) != list(range(len(self.bonds))):
            raise ValueError("bond_order must be a permutation of the bond indexes")
        new_index = {old: new for new, old in enumerate(order)}
        atoms = tuple(self.atoms[old] for old in order)
        bonds = tuple(Bond(new_index[self.bonds[k].b], new_index[self.bonds[k].a], self.bonds[k].order)
                      for k in bond_order)
        return MolecularGraph(atoms, bonds)


def _parse_charge(text: Optional[str]) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    if len(text) > 1 and text[1].isdigit():
        return sign * int(text[1:])
    return sign * len(text)


def _bracket_atom(content: str, position: int) -> Atom:
    match = BRACKET_ATOM.match(content)
    if match is None:
        raise BadBracketAtom(content, position)
    symbol = match.group("symbol")
    aromatic = symbol.islower()
    element = symbol.capitalize() if aromatic else symbol
    if element not in ATOMIC_NUMBER:
        raise BadBracketAtom(content, position)
    hcount = match.group("hcount")
    hydrogens = 0
    if hcount:
        hydrogens = int(hcount[1:]) if len(hcount) > 1 else 1
    return Atom(element, aromatic, _parse_charge(match.group("charge")), hydrogens)


def parse_graph(s: str) -> MolecularGraph:
    """Parse a SMILES string into atoms and bonds.

    Raises SmilesSyntaxError, UnclosedRing or BadBracketAtom on grammar errors.
    """
    if not s:
        raise SmilesSyntaxError("empty SMILES")

    atoms: List[Atom] = []
    bonds: dict = {}
    branches: List[int] = []
    rings: dict = {}  # label -> (atom index, bond order or None, position)

    prev: Optional[int] = None
    pending: Optional[BondOrder] = None
    after_open = False  # directly after '(' : only a bond or an atom may follow

    def connect(a: int, b: int, order: Optional[BondOrder], pos: int):
        if a == b:
            raise SmilesSyntaxError("ring closure to the same atom", pos)
        key = frozenset((a, b))
        if key in bonds:
            raise SmilesSyntaxError("duplicate bond", pos)
        if order is None:
            both_aromatic = atoms[a].aromatic and atoms[b].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        bonds[key] = Bond(a, b, order)

    def add_atom(atom: Atom, pos: int):
        nonlocal prev, pending, after_open
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            connect(prev, idx, pending, pos)
        elif pending is not None:
            raise SmilesSyntaxError("bond symbol without a preceding atom", pos)
        prev, pending, after_open = idx, None, False

    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if ch == "[":
            close = s.find("]", i + 1)
            if close < 0:
                raise BadBracketAtom(s[i + 1:], i)
            add_atom(_bracket_atom(s[i + 1:close], i), i)
            i = close + 1
            continue
        if ch.isalpha() or ch == "*":
            symbol = next(
                (sym for sym in ORGANIC_SUBSET + AROMATIC_ORGANIC + ("*",) if s.startswith(sym, i)),
                None,
            )
            if symbol is None:
                raise SmilesSyntaxError(f"unknown atom symbol {ch!r}", i)
            aromatic = symbol in AROMATIC_ORGANIC
            add_atom(Atom(symbol.upper() if aromatic else symbol, aromatic), i)
            i += len(symbol)
            continue
        if ch == "(":
            if prev is None or after_open:
                raise SmilesSyntaxError("branch without a preceding atom", i)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond before branch", i)
            branches.append(prev)
            after_open = True
        elif ch == ")":
            if not branches:
                raise SmilesSyntaxError("unbalanced ')'", i)
            if after_open:
                raise SmilesSyntaxError("empty branch", i)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond at end of branch", i)
            prev = branches.pop()
        elif ch in BOND_SYMBOLS:
            if prev is None or pending is not None:
                raise SmilesSyntaxError(f"misplaced bond symbol {ch!r}", i)
            pending = BOND_SYMBOLS[ch]
            after_open = False
        elif ch in DIGITS or ch == "%":
            if ch == "%":
                digits = s[i + 1:i + 3]
                if len(digits) != 2 or any(c not in DIGITS for c in digits):
                    raise SmilesSyntaxError("'%' must be followed by two digits", i)
                label, width = int(digits), 3
            else:
                label, width = int(ch), 1
            if prev is None or after_open:
                raise SmilesSyntaxError("ring closure without a preceding atom", i)
            if label in rings:
                other, open_order, _ = rings.pop(label)
                if pending is not None and open_order is not None and pending != open_order:
                    raise SmilesSyntaxError("conflicting ring-closure bond orders", i)
                connect(other, prev, pending if pending is not None else open_order, i)
            else:
                rings[label] = (prev, pending, i)
            pending = None
            i += width
            continue
        elif ch == ".":
            if prev is None or pending is not None or after_open:
                raise SmilesSyntaxError("misplaced '.'", i)
            prev = None
        else:
            raise SmilesSyntaxError(f"unexpected character {ch!r}", i)
        i += 1

    if branches:
        raise SmilesSyntaxError("unbalanced '('")
    if pending is not None:
        raise SmilesSyntaxError("dangling bond at end of SMILES")
    if rings:
        raise UnclosedRing(rings.keys())
    if prev is None:
        raise SmilesSyntaxError("SMILES ends without an atom")
    if not atoms:
        raise EmptyGraph("no atoms")
    return MolecularGraph(tuple(atoms), tuple(bonds.values()))


def validate(s: str) -> bool:
    """True iff ``parse_graph(s)`` succeeds."""
    try:
        parse_graph(s)
    except SmilesError:
        return False
    except EmptyGraph:
        return False
    return True


def read_molecule_list(path) -> List[str]:
    """One SMILES per line; blank and '#' lines skipped, trailing name columns ignored."""
    molecules = []
    with open(Path(path), "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            molecules.append(line.split()[0])
    return molecules
