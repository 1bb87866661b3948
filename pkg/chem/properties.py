"""Property vectors (PlogP, QED, DRD2), normalisation, TSV ingestion and surrogates.

Real property values come from files computed by an external chemistry
toolkit. The surrogate formulas below are deterministic desk-scale stand-ins
so the whole pipeline can run without one; they are not chemistry.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Protocol, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from chem.smiles import MolecularGraph, parse_graph
from config import N_PROPERTIES, PROPERTY_NAMES
from errors import EmptyGraph, ParseError, RangeError, SmilesError, UnfittedScaler

logger = logging.getLogger(__name__)


class PropertyVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    plogp: float
    qed: float
    drd2: float

    @field_validator("plogp", "qed", "drd2")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("property values must be finite")
        return v

    @field_validator("qed", "drd2")
    @classmethod
    def _unit_interval(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"value {v} outside [0, 1]")
        return v

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "PropertyVector":
        if len(values) != N_PROPERTIES:
            raise ValueError(f"expected {N_PROPERTIES} properties, got {len(values)}")
        return cls(**dict(zip(PROPERTY_NAMES, (float(v) for v in values))))

    def as_array(self) -> np.ndarray:
        return np.array([self.plogp, self.qed, self.drd2], dtype=np.float64)


class PropertyScaler(BaseModel):
    """Per-dimension shift/scale fitted on the training corpus."""

    shift: Optional[List[float]] = None
    scale: Optional[List[float]] = None

    @classmethod
    def fit(cls, vectors: Sequence) -> "PropertyScaler":
        data = np.array([v.as_array() if isinstance(v, PropertyVector) else v for v in vectors],
                        dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != N_PROPERTIES:
            raise ValueError("cannot fit a scaler on an empty property set")
        std = data.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(shift=data.mean(axis=0).tolist(), scale=std.tolist())

    @classmethod
    def identity(cls) -> "PropertyScaler":
        return cls(shift=[0.0] * N_PROPERTIES, scale=[1.0] * N_PROPERTIES)

    def _params(self):
        if self.shift is None or self.scale is None:
            raise UnfittedScaler("property scaler has not been fitted")
        return np.asarray(self.shift), np.asarray(self.scale)

    def normalize(self, p) -> np.ndarray:
        shift, scale = self._params()
        arr = p.as_array() if isinstance(p, PropertyVector) else np.asarray(p, dtype=np.float64)
        return (arr - shift) / scale

    def denormalize(self, z) -> np.ndarray:
        shift, scale = self._params()
        return np.asarray(z, dtype=np.float64) * scale + shift

    def save(self, path) -> None:
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PropertyScaler":
        return cls.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))


class PropertyTable(NamedTuple):
    values: Dict[str, PropertyVector]
    duplicates: int


def load_properties(path) -> PropertyTable:
    """Read `smiles<TAB>plogp<TAB>qed<TAB>drd2` rows; the header row is optional."""
    path = Path(path)
    width = 1 + N_PROPERTIES
    try:
        # one row per physical line, so row k is line k + 1; the spare column catches overlong rows
        frame = pd.read_csv(path, sep="\t", header=None, names=list(range(width + 1)), index_col=False,
                            dtype=str, keep_default_na=False, skip_blank_lines=False, quoting=csv.QUOTE_NONE)
    except pd.errors.EmptyDataError:
        return PropertyTable({}, 0)
    except pd.errors.ParserError as e:
        raise ParseError(f"unreadable property table: {e}", 1, path) from None

    values: Dict[str, PropertyVector] = {}
    duplicates = 0
    first = True
    for row in frame.itertuples(index=True, name=None):
        lineno, fields = row[0] + 1, row[1:]
        head = fields[0] if isinstance(fields[0], str) else ""
        present = [f for f in fields if isinstance(f, str)]
        if not "".join(present).strip() or head.lstrip().startswith("#"):
            continue
        if first:
            first = False
            if head.strip().lower() == "smiles":
                continue
        if len(present) != width:
            got = len(present) if len(present) <= width else f"more than {width}"
            raise ParseError(f"expected {width} tab-separated fields, got {got}", lineno, path)
        smiles = head.strip()
        if not smiles:
            raise ParseError("empty SMILES field", lineno, path)
        try:
            numbers = [float(x) for x in fields[1:width]]
        except ValueError:
            raise ParseError(f"non-numeric property value in {list(fields[1:width])}", lineno, path) from None
        if not all(math.isfinite(x) for x in numbers):
            raise ParseError("non-finite property value", lineno, path)
        for name, x in zip(PROPERTY_NAMES[1:], numbers[1:]):
            if not 0.0 <= x <= 1.0:
                raise RangeError(f"{path}:{lineno}: {name}={x} outside [0, 1]")
        if smiles in values:
            duplicates += 1
        values[smiles] = PropertyVector.from_array(numbers)
    if duplicates:
        logger.warning("%s: %d duplicate SMILES rows, last value kept", path, duplicates)
    return PropertyTable(values, duplicates)


def write_properties(path, values: Dict[str, PropertyVector]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("smiles\t" + "\t".join(PROPERTY_NAMES) + "\n")
        for smiles, p in values.items():
            f.write(f"{smiles}\t{p.plogp!r}\t{p.qed!r}\t{p.drd2!r}\n")


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def surrogate_properties(graph: MolecularGraph) -> PropertyVector:
    """Deterministic stand-ins computed from graph counts (not real PlogP/QED/DRD2)."""
    if len(graph) == 0:
        raise EmptyGraph("cannot score an empty graph")
    carbons = sum(1 for a in graph.atoms if a.element == "C")
    hetero = sum(1 for a in graph.atoms if a.element in ("N", "O"))
    heavy = sum(1 for a in graph.atoms if a.element != "H")
    aromatic = sum(1 for a in graph.atoms if a.aromatic)
    return PropertyVector(
        plogp=0.4 * carbons - 0.6 * hetero - 0.3 * graph.n_rings(),
        qed=_logistic(1.5 - 0.1 * abs(heavy - 25)),
        drd2=_logistic(0.5 * aromatic - 4.0),
    )


class PropertyOracle(Protocol):
    def __call__(self, smiles: str) -> Optional[PropertyVector]:
        ...


class SurrogateOracle:
    """Scores any parseable SMILES with :func:`surrogate_properties`."""

    def __call__(self, smiles: str) -> Optional[PropertyVector]:
        try:
            return surrogate_properties(parse_graph(smiles))
        except (SmilesError, EmptyGraph):
            return None


class TableOracle:
    """Looks properties up in a pre-computed table (e.g. from :func:`load_properties`)."""

    def __init__(self, values: Dict[str, PropertyVector]):
        self.values = values

    def __call__(self, smiles: str) -> Optional[PropertyVector]:
        return self.values.get(smiles)
