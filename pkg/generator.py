import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from chem.fingerprint import smiles_fingerprint, tanimoto
from chem.properties import PropertyOracle, PropertyVector
from chem.smiles import detokenize, tokenize, validate
from cmg_model import CMGModel, ConstraintScorer, TranslatorScorer, encode_input
from config import PROPERTY_NAMES, DecodeConfig
from data_pipeline import write_tsv
from errors import CMGError, ConfigError, MalformedSequence, NoCompleteCandidate
from process.beam_search import (DiversifyConfig, RescoredCandidate, beam_search, diversify_targets,
                                 rescore, select_best)

logger = logging.getLogger(__name__)

GENERATION_COLUMNS = ["input_smiles", "jitter_index", "output_smiles", "valid", "tanimoto",
                      "s_beam", "s_pn", "s_sn"]


def parse_target(text: str, p_x) -> np.ndarray:
    """Resolve a target such as ``plogp+1,qed=keep,drd2=0.6`` against the input's properties.

    Per property: ``keep`` (or ``=keep``) copies p_X, ``=v`` is absolute and
    ``+v``/``-v`` is relative to p_X. Unnamed properties are kept.
    """
    target = np.asarray(p_x, dtype=np.float64).copy()
    seen = set()
    for item in (part.strip() for part in text.split(",")):
        if not item:
            continue
        name = next((n for n in PROPERTY_NAMES if item.lower().startswith(n)), None)
        if name is None:
            raise ConfigError(f"unknown property in target {item!r}; expected one of {PROPERTY_NAMES}")
        if name in seen:
            raise ConfigError(f"property {name} given twice in target")
        seen.add(name)
        rule = item[len(name):].strip()
        idx = PROPERTY_NAMES.index(name)
        try:
            if rule in ("keep", "=keep", ""):
                continue
            if rule.startswith("="):
                target[idx] = float(rule[1:])
            elif rule[0] in "+-":
                target[idx] = target[idx] + float(rule)
            else:
                raise ValueError(rule)
        except ValueError:
            raise ConfigError(f"cannot parse target rule {item!r}") from None
        if not math.isfinite(target[idx]):
            raise ConfigError(f"non-finite target in {item!r}")
    return target


@dataclass
class GeneratedMolecule:
    jitter_index: int
    smiles: str
    valid: bool
    tanimoto: Optional[float]
    s_beam: float
    s_pn: float
    s_sn: float
    predicted: np.ndarray
    properties: Optional[PropertyVector] = None


@dataclass
class GenerationRun:
    input_smiles: str
    outputs: List[GeneratedMolecule] = field(default_factory=list)
    failures: List[Tuple[int, str]] = field(default_factory=list)


class MoleculeGenerator:
    """Beam search plus constraint rescoring over jittered property targets."""

    def __init__(self, model: CMGModel, decode_cfg: DecodeConfig, oracle: Optional[PropertyOracle] = None,
                 threads: int = 1, progress: bool = False, radius: int = 2, n_bits: int = 2048):
        self.model = model
        self.cfg = decode_cfg
        self.oracle = oracle
        self.threads = threads
        self.progress = progress
        self.radius = radius
        self.n_bits = n_bits
        self.constraints = ConstraintScorer(model)
        vocab = model.vocab
        self.banned = (vocab.pad_id, vocab.begin_id)
        self.max_len = min(decode_cfg.max_len, model.max_len)

    def _decode_one(self, x_smiles: str, x_tokens: List[int], p_x_norm: np.ndarray,
                    target: np.ndarray) -> RescoredCandidate:
        p_y_norm = self.model.scaler.normalize(target)
        enc = encode_input(self.model, x_smiles, p_x_norm, p_y_norm)
        vocab = self.model.vocab
        candidates = beam_search(TranslatorScorer(self.model, enc), vocab.begin_id, vocab.end_id,
                                 self.cfg.beam_width, self.max_len, banned=self.banned,
                                 length_norm=self.cfg.length_norm)
        scored = rescore(candidates, x_tokens, p_y_norm, self.constraints,
                         use_propnet=self.cfg.use_propnet, use_simnet=self.cfg.use_simnet)
        if self.cfg.modified_beam:
            return select_best(scored)
        return scored[0]

    def _describe(self, jitter_index: int, x_smiles: str, choice: RescoredCandidate) -> GeneratedMolecule:
        try:
            smiles = detokenize(choice.candidate.tokens, self.model.vocab)
        except MalformedSequence:
            smiles = ""
        valid = bool(smiles) and validate(smiles)
        sim = None
        props = None
        if valid:
            sim = tanimoto(smiles_fingerprint(x_smiles, self.radius, self.n_bits),
                           smiles_fingerprint(smiles, self.radius, self.n_bits))
            if self.oracle is not None:
                props = self.oracle(smiles)
        predicted = self.model.scaler.denormalize(
            self.constraints.properties([list(choice.candidate.tokens)])[0])
        return GeneratedMolecule(jitter_index, smiles, valid, sim, choice.candidate.score,
                                 choice.s_pn, choice.s_sn, predicted, props)

    def generate(self, x_smiles: str, p_x, p_y_base, seed: int = 0) -> GenerationRun:
        """One selected molecule per jittered target; a jitter that never reaches [END] is recorded."""
        p_x = p_x.as_array() if isinstance(p_x, PropertyVector) else np.asarray(p_x, dtype=np.float64)
        x_tokens = tokenize(x_smiles, self.model.vocab, self.model.max_len)
        p_x_norm = self.model.scaler.normalize(p_x)
        jitter = DiversifyConfig(sigma=tuple(self.cfg.sigma), n_samples=self.cfg.n_samples)
        targets = diversify_targets(p_y_base, jitter, seed)

        def work(j: int):
            try:
                return j, self._decode_one(x_smiles, x_tokens, p_x_norm, targets[j]), None
            except NoCompleteCandidate as e:
                return j, None, str(e)

        run = GenerationRun(x_smiles)
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            results = list(executor.map(work, range(len(targets))))
        for j, choice, error in results:
            if choice is None:
                logger.warning("%s: jitter %d dropped (%s)", x_smiles, j, error)
                run.failures.append((j, error))
                continue
            run.outputs.append(self._describe(j, x_smiles, choice))
        return run

    def generate_many(self, inputs: Sequence[Tuple[str, np.ndarray, np.ndarray]], seed: int = 0) -> List[GenerationRun]:
        runs = []
        for i, (x_smiles, p_x, p_y) in enumerate(tqdm(inputs, desc="Generating", disable=not self.progress)):
            try:
                runs.append(self.generate(x_smiles, p_x, p_y, seed=seed + i))
            except CMGError as e:
                logger.warning("skipping input %s: %s", x_smiles, e)
                runs.append(GenerationRun(x_smiles, failures=[(-1, str(e))]))
        return runs


def generation_frame(runs: Sequence[GenerationRun]) -> pd.DataFrame:
    rows = []
    for run in runs:
        for out in run.outputs:
            rows.append({
                "input_smiles": run.input_smiles,
                "jitter_index": out.jitter_index,
                "output_smiles": out.smiles,
                "valid": int(out.valid),
                "tanimoto": "" if out.tanimoto is None else repr(out.tanimoto),
                "s_beam": repr(out.s_beam),
                "s_pn": repr(out.s_pn),
                "s_sn": repr(out.s_sn),
            })
    return pd.DataFrame(rows, columns=GENERATION_COLUMNS)


def write_generations(path, runs: Sequence[GenerationRun], header: str = "") -> Path:
    return write_tsv(path, generation_frame(runs), header)
