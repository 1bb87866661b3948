"""Evaluation metrics over generation results and report rendering."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from chem.fingerprint import DEFAULT_N_BITS, DEFAULT_RADIUS, smiles_fingerprint, tanimoto
from chem.properties import PropertyOracle, PropertyVector
from config import PROPERTY_NAMES, MooCriteria
from data_pipeline import MoleculeRecord, read_tsv
from errors import MissingProperties, ParseError

logger = logging.getLogger(__name__)

DIVERSITY_NOTE = ("diversity = mean pairwise Tanimoto distance among distinct valid outputs "
                  "meeting the similarity threshold (stand-in formula)")


@dataclass
class ScoredOutput:
    smiles: str
    valid: bool
    tanimoto: Optional[float] = None
    properties: Optional[PropertyVector] = None


@dataclass
class GenerationResult:
    input: str
    input_properties: Optional[PropertyVector] = None
    outputs: List[ScoredOutput] = field(default_factory=list)


def moo_success(x: MoleculeRecord, y: MoleculeRecord, c: MooCriteria = MooCriteria()) -> bool:
    if x.properties is None or y.properties is None:
        raise MissingProperties("moo_success needs properties on both molecules")
    sim = tanimoto(x.fingerprint, y.fingerprint)
    return _moo_pass(sim, x.properties, y.properties, c)


def _moo_pass(sim: float, px: PropertyVector, py: PropertyVector, c: MooCriteria) -> bool:
    return (sim >= c.delta
            and (py.plogp - px.plogp) >= c.min_plogp_gain
            and py.qed >= c.min_qed
            and py.drd2 > c.min_drd2)


def _qualifying(result: GenerationResult, delta: float) -> List[ScoredOutput]:
    return [o for o in result.outputs if o.valid and o.tanimoto is not None and o.tanimoto >= delta]


def metric_improvement(results: Sequence[GenerationResult], property_index: int = 0,
                       delta: float = 0.4) -> tuple:
    """(mean, population std) of each input's best increment; inputs with no qualifying output count 0."""
    if not results:
        return 0.0, 0.0
    name = PROPERTY_NAMES[property_index]
    best = []
    for r in results:
        candidates = _qualifying(r, delta)
        if not candidates:
            best.append(0.0)
            continue
        if r.input_properties is None or any(o.properties is None for o in candidates):
            raise MissingProperties(f"{r.input}: outputs lack {name} values")
        base = getattr(r.input_properties, name)
        best.append(max(getattr(o.properties, name) - base for o in candidates))
    arr = np.array(best)
    return float(arr.mean()), float(arr.std())


def metric_diversity(results: Sequence[GenerationResult], delta: float = 0.4, radius: int = DEFAULT_RADIUS,
                     n_bits: int = DEFAULT_N_BITS) -> float:
    if not results:
        return 0.0
    scores = []
    for r in results:
        distinct = sorted({o.smiles for o in _qualifying(r, delta)})
        if len(distinct) < 2:
            scores.append(0.0)
            continue
        fps = [smiles_fingerprint(s, radius, n_bits) for s in distinct]
        dists = [1.0 - tanimoto(fps[i], fps[j]) for i in range(len(fps)) for j in range(i + 1, len(fps))]
        scores.append(float(np.mean(dists)))
    return float(np.mean(scores))


def metric_moo_success_rate(results: Sequence[GenerationResult], criteria: MooCriteria = MooCriteria(),
                            sample: Optional[int] = None, seed: int = 0) -> float:
    """Percentage of inputs with at least one output passing :func:`moo_success`."""
    results = list(results)
    if sample is not None and sample < len(results):
        # sample on the sorted input list so the subset does not depend on input order
        results = sorted(results, key=lambda r: r.input)
        picks = np.sort(np.random.default_rng(seed).choice(len(results), size=sample, replace=False))
        results = [results[k] for k in picks]
    if not results:
        return 0.0
    hits = 0
    for r in results:
        for o in r.outputs:
            if not o.valid or o.tanimoto is None:
                continue
            if r.input_properties is None or o.properties is None:
                raise MissingProperties(f"{r.input}: MOO evaluation needs properties")
            if _moo_pass(o.tanimoto, r.input_properties, o.properties, criteria):
                hits += 1
                break
    return 100.0 * hits / len(results)


def load_generation_results(path, oracle: PropertyOracle, threads: int = 1) -> List[GenerationResult]:
    """Group a generation TSV by input (first-appearance order) and score it with ``oracle``."""
    frame = read_tsv(path, ["input_smiles", "output_smiles", "valid", "tanimoto"])
    grouped: Dict[str, List[tuple]] = {}
    for lineno, row in enumerate(frame.itertuples(index=False), start=2):
        if row.valid not in ("0", "1"):
            raise ParseError(f"valid must be 0 or 1, got {row.valid!r}", lineno, path)
        grouped.setdefault(row.input_smiles, []).append((row.output_smiles, row.valid == "1", row.tanimoto))

    def score(item):
        x, outputs = item
        scored = []
        for smiles, valid, sim in outputs:
            props = oracle(smiles) if valid else None
            scored.append(ScoredOutput(smiles, valid, float(sim) if valid and sim else None, props))
        return GenerationResult(x, oracle(x), scored)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(score, grouped.items()))


def evaluate(results: Sequence[GenerationResult], mode: str, criteria: MooCriteria = MooCriteria(),
             sample: Optional[int] = None, seed: int = 0) -> pd.DataFrame:
    """One row per metric: (metric, value, std)."""
    rows = []
    if mode in ("soo", "all"):
        for k, name in enumerate(PROPERTY_NAMES):
            mean, std = metric_improvement(results, k, criteria.delta)
            rows.append({"metric": f"improvement_{name}", "value": mean, "std": std})
    if mode in ("diversity", "all"):
        rows.append({"metric": "diversity", "value": metric_diversity(results, criteria.delta), "std": 0.0})
    if mode in ("moo", "all"):
        rows.append({"metric": "moo_success_rate", "value": metric_moo_success_rate(results, criteria), "std": 0.0})
        if sample is not None:
            rows.append({"metric": f"moo_success_rate_sample{sample}",
                         "value": metric_moo_success_rate(results, criteria, sample, seed), "std": 0.0})
    valid = [o.valid for r in results for o in r.outputs]
    rows.append({"metric": "validity", "value": float(np.mean(valid)) if valid else 0.0, "std": 0.0})
    return pd.DataFrame(rows, columns=["metric", "value", "std"])


def format_metric(metric: str, value: float, std: float) -> str:
    if metric.startswith("moo_success_rate"):
        return f"{metric}: {value:.2f}%"
    if metric.startswith("improvement_"):
        return f"{metric}: {value:.4f} ± {std:.4f}"
    return f"{metric}: {value:.4f}"


def render_report(metrics: pd.DataFrame, out_dir, training: Sequence[pd.DataFrame] = (),
                  header: str = "") -> Dict[str, str]:
    """Write ``metrics.tsv``, ``summary.txt`` and ``summary.html`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv_path, txt_path, html_path = out / "metrics.tsv", out / "summary.txt", out / "summary.html"

    metrics.to_csv(tsv_path, sep="\t", index=False, lineterminator="\n")

    lines = [header] if header else []
    lines += [format_metric(r.metric, float(r.value), float(r.std)) for r in metrics.itertuples(index=False)]
    if (metrics["metric"] == "diversity").any():
        lines.append(f"note: {DIVERSITY_NOTE}")
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    parts = ["<html><body>", f"<h1>CMG report</h1><p>{header}</p>", metrics.to_html(index=False)]
    for frame in training:
        parts.append(frame.to_html(index=False))
    parts.append(f"<p>{DIVERSITY_NOTE}</p></body></html>")
    html_path.write_text("\n".join(parts) + "\n", encoding="utf-8")

    logger.info("Report written to %s", out)
    return {"metrics": str(tsv_path), "summary_txt": str(txt_path), "summary_html": str(html_path)}
