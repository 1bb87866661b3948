"""Command-line entry point: curate, pretrain-propnet, pretrain-simnet, train, generate, evaluate, report."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from chem.properties import PropertyScaler, SurrogateOracle, TableOracle, load_properties, surrogate_properties
from chem.smiles import Vocabulary, parse_graph, read_molecule_list, validate
from cmg_model import CMGModel, assemble_cmg, build_translator_for, load_constraint_net, save_constraint_net
from config import (DataConfig, DecodeConfig, ModelConfig, MooCriteria, RuntimeConfig, TrainConfig,
                    build_settings, config_hash, load_config_file)
from data_pipeline import (audit_leakage, build_records, exclude_molecules, file_digest, mine_pairs,
                           molecule_frame, pair_frame, read_pairs, read_tsv, sample_negative_pairs, split,
                           subsample_simnet, write_tsv)
from errors import CMGError, ConfigError, DataError, MissingProperties
from generator import MoleculeGenerator, parse_target, write_generations
from metrics import evaluate, format_metric, load_generation_results, render_report
from trainer import prepare_pairs, pretrain_propnet, pretrain_simnet, train_cmg

logger = logging.getLogger("cmg")

MANIFEST = "manifest.json"


def _header(cfg_hash: str, seed: int) -> str:
    return f"config_hash={cfg_hash} seed={seed}"


def _oracle(properties: Optional[str]):
    if properties:
        return TableOracle(load_properties(properties).values)
    return SurrogateOracle()


def _read_manifest(data_dir: Path) -> dict:
    try:
        return json.loads((data_dir / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{data_dir}: unreadable {MANIFEST} ({e})") from None


def _load_molecules(path: Path):
    table = load_properties(path).values
    smiles = list(table)
    return smiles, np.array([table[s].as_array() for s in smiles])


# commands

def cmd_curate(args, file_values, runtime: RuntimeConfig) -> int:
    data_cfg = build_settings(DataConfig, file_values, delta=args.delta, seed=args.seed)
    model_cfg = build_settings(ModelConfig, file_values)
    cfg_hash = config_hash(data_cfg, model_cfg)
    out = Path(args.out)

    corpus = read_molecule_list(args.molecules)
    valid = [s for s in corpus if validate(s) and len(s) + 2 <= model_cfg.max_len]
    if len(valid) < len(corpus):
        logger.warning("Dropped %d invalid or over-long molecules", len(corpus) - len(valid))
    holdouts = [set(read_molecule_list(h)) for h in args.holdout]
    corpus, removed = exclude_molecules(list(dict.fromkeys(valid)), holdouts)
    logger.info("Corpus: %d molecules (%d removed by holdout exclusion)", len(corpus), removed)

    if args.properties:
        table = load_properties(args.properties).values
    else:
        table = {s: surrogate_properties(parse_graph(s)) for s in corpus}
    records = build_records(corpus, table, data_cfg.radius, data_cfg.n_bits)

    pairs, stats = mine_pairs(records, data_cfg.delta, runtime.threads, data_cfg.ordered_pairs, runtime.progress)
    leaked = audit_leakage(pairs, holdouts)
    if leaked:
        raise DataError(f"{len(leaked)} holdout molecules leaked into training pairs, e.g. {leaked[0]!r}")
    pairs_train, pairs_dev = split(pairs, data_cfg.split_ratio, data_cfg.seed)

    negatives = sample_negative_pairs(records, data_cfg.delta, data_cfg.negative_cap, data_cfg.seed)
    sample = subsample_simnet(pairs + negatives, data_cfg.simnet_fraction, data_cfg.positive_ratio,
                              data_cfg.bins, data_cfg.seed, data_cfg.delta)
    sim_train, sim_dev = split(sample, data_cfg.split_ratio, data_cfg.seed)

    mol_train, mol_dev = split(records, data_cfg.split_ratio, data_cfg.seed)
    scaler = PropertyScaler.fit([r.properties for r in mol_train])
    vocab = Vocabulary.from_smiles(corpus)

    header = _header(cfg_hash, data_cfg.seed)
    files = {
        "molecules_train.tsv": molecule_frame(mol_train),
        "molecules_dev.tsv": molecule_frame(mol_dev),
        "pairs_train.tsv": pair_frame(pairs_train),
        "pairs_dev.tsv": pair_frame(pairs_dev),
        "simnet_train.tsv": pair_frame([s.pair for s in sim_train], [s.label for s in sim_train]),
        "simnet_dev.tsv": pair_frame([s.pair for s in sim_dev], [s.label for s in sim_dev]),
    }
    for name, frame in files.items():
        write_tsv(out / name, frame, header)
    scaler.save(out / "scaler.json")

    manifest = {
        "config_hash": cfg_hash,
        "seed": data_cfg.seed,
        "vocab": vocab.alphabet,
        "counts": {"molecules": len(records), "pairs": len(pairs), "simnet": len(sample),
                   "visited": stats.visited, "evaluated": stats.evaluated},
        "digests": {name: file_digest(out / name) for name in sorted(files)},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Curated %d pairs and %d SimNet rows into %s", len(pairs), len(sample), out)
    return 0


def _training_context(args, file_values):
    data_dir = Path(args.data)
    manifest = _read_manifest(data_dir)
    vocab = Vocabulary(manifest["vocab"])
    scaler = PropertyScaler.load(data_dir / "scaler.json")
    model_cfg = build_settings(ModelConfig, file_values)
    train_cfg = build_settings(TrainConfig, file_values, seed=args.seed, max_epochs=args.epochs)
    return data_dir, vocab, scaler, model_cfg, train_cfg


def cmd_pretrain_propnet(args, file_values, runtime: RuntimeConfig) -> int:
    data_dir, vocab, scaler, model_cfg, train_cfg = _training_context(args, file_values)
    train_smiles, train_props = _load_molecules(data_dir / "molecules_train.tsv")
    dev_smiles, dev_props = _load_molecules(data_dir / "molecules_dev.tsv")
    result = pretrain_propnet(train_smiles, scaler.normalize(train_props), vocab, model_cfg, train_cfg,
                              dev=(dev_smiles, scaler.normalize(dev_props)), progress=runtime.progress)
    cfg_hash = config_hash(model_cfg, train_cfg)
    save_constraint_net(args.out, result.net, "propnet", vocab, scaler, model_cfg, cfg_hash,
                        {"dev_mse": result.dev_metric})
    if args.report:
        result.report.save(args.report)
    print(f"PropNet dev MSE: {result.dev_metric:.5f}")
    return 0


def cmd_pretrain_simnet(args, file_values, runtime: RuntimeConfig) -> int:
    data_dir, vocab, scaler, model_cfg, train_cfg = _training_context(args, file_values)
    train = read_pairs(data_dir / "simnet_train.tsv")
    dev = read_pairs(data_dir / "simnet_dev.tsv")
    if train.labels is None or dev.labels is None:
        raise DataError("SimNet files carry no label column")
    result = pretrain_simnet(train.x, train.y, train.labels, vocab, model_cfg, train_cfg,
                             dev=(dev.x, dev.y, dev.labels), progress=runtime.progress)
    cfg_hash = config_hash(model_cfg, train_cfg)
    save_constraint_net(args.out, result.net, "simnet", vocab, scaler, model_cfg, cfg_hash,
                        {"dev_accuracy": result.dev_metric})
    if args.report:
        result.report.save(args.report)
    print(f"SimNet dev accuracy: {result.dev_metric:.4f}")
    return 0


def cmd_train(args, file_values, runtime: RuntimeConfig) -> int:
    data_dir, vocab, scaler, model_cfg, train_cfg = _training_context(args, file_values)
    if args.lambda_p is not None or args.lambda_s is not None:
        train_cfg = train_cfg.model_copy(update={k: v for k, v in
                                                 (("lambda_p", args.lambda_p), ("lambda_s", args.lambda_s))
                                                 if v is not None})
    propnet = load_constraint_net(args.propnet, "propnet", vocab)
    simnet = load_constraint_net(args.simnet, "simnet", vocab)
    model = assemble_cmg(build_translator_for(vocab, model_cfg), propnet, simnet, vocab, scaler, model_cfg)

    train_pairs = read_pairs(data_dir / "pairs_train.tsv")
    dev_pairs = read_pairs(data_dir / "pairs_dev.tsv")
    train = prepare_pairs(model, train_pairs.x, train_pairs.y, train_pairs.p_x, train_pairs.p_y)
    dev = prepare_pairs(model, dev_pairs.x, dev_pairs.y, dev_pairs.p_x, dev_pairs.p_y) if len(dev_pairs) else None

    report = train_cmg(model, train, dev, train_cfg, progress=runtime.progress)
    model.save(args.out, config_hash(model_cfg, train_cfg), {"chosen_epoch": report.chosen_epoch})
    if args.report:
        report.save(args.report)
    print(f"CMG best dev loss {report.best_metric:.5f} at epoch {report.chosen_epoch}")
    return 0


def cmd_generate(args, file_values, runtime: RuntimeConfig) -> int:
    decode_cfg = build_settings(DecodeConfig, file_values, n_samples=args.n, sigma=args.sigma,
                                beam_width=args.beam, seed=args.seed)
    data_cfg = build_settings(DataConfig, file_values)
    model = CMGModel.load(args.model)
    oracle = _oracle(args.properties)

    inputs = []
    for x in read_molecule_list(args.input):
        p_x = oracle(x)
        if p_x is None:
            raise MissingProperties(f"no properties for input {x!r}")
        inputs.append((x, p_x.as_array(), parse_target(args.target, p_x.as_array())))

    generator = MoleculeGenerator(model, decode_cfg, oracle, runtime.threads, runtime.progress,
                                  data_cfg.radius, data_cfg.n_bits)
    runs = generator.generate_many(inputs, seed=decode_cfg.seed)
    write_generations(args.out, runs, _header(config_hash(decode_cfg), decode_cfg.seed))
    print(f"Generated {sum(len(r.outputs) for r in runs)} molecules for {len(runs)} inputs -> {args.out}")
    return 0


def cmd_evaluate(args, file_values, runtime: RuntimeConfig) -> int:
    criteria = MooCriteria(**{k.split(".", 1)[1]: v for k, v in file_values.items() if k.startswith("moo.")})
    if args.delta is not None:
        criteria = criteria.model_copy(update={"delta": args.delta})
    results = load_generation_results(args.generations, _oracle(args.properties), runtime.threads)
    frame = evaluate(results, args.mode, criteria, args.sample, args.seed if args.seed is not None else 0)
    for row in frame.itertuples(index=False):
        print(format_metric(row.metric, float(row.value), float(row.std)))
    if args.out:
        write_tsv(args.out, frame)
    return 0


def cmd_report(args, file_values, runtime: RuntimeConfig) -> int:
    metrics = read_tsv(args.metrics, ["metric", "value", "std"])
    metrics["value"] = metrics["value"].astype(float)
    metrics["std"] = metrics["std"].astype(float)
    training = [read_tsv(p) for p in args.train_report]
    paths = render_report(metrics, args.out, training)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmg", description="Controlled molecule generator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    common.add_argument("--config", default=None, help="key=value configuration file")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", parents=[common], help="build pair and SimNet corpora")
    p.add_argument("--molecules", required=True)
    p.add_argument("--properties", default=None, help="property TSV; surrogate values if omitted")
    p.add_argument("--holdout", action="append", default=[])
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_curate, paths=("molecules", "properties", "holdout"), subparser=p)

    for name, handler in (("pretrain-propnet", cmd_pretrain_propnet), ("pretrain-simnet", cmd_pretrain_simnet)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--data", required=True, help="directory written by curate")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--report", default=None)
        p.set_defaults(handler=handler, paths=("data",), subparser=p)

    p = sub.add_parser("train", parents=[common], help="train the CMG translator")
    p.add_argument("--data", required=True)
    p.add_argument("--propnet", required=True)
    p.add_argument("--simnet", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda-p", dest="lambda_p", type=float, default=None)
    p.add_argument("--lambda-s", dest="lambda_s", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(handler=cmd_train, paths=("data", "propnet", "simnet"), subparser=p)

    p = sub.add_parser("generate", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target", default="plogp=keep,qed=keep,drd2=keep")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--sigma", default=None, help="comma-separated per-property std")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--properties", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_generate, paths=("model", "input", "properties"), subparser=p)

    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--generations", required=True)
    p.add_argument("--mode", choices=("soo", "moo", "diversity", "all"), default="all")
    p.add_argument("--properties", default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--sample", type=int, default=None, help="also report MOO success on a seeded subset")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_evaluate, paths=("generations", "properties"), subparser=p)

    p = sub.add_parser("report", parents=[common])
    p.add_argument("--metrics", required=True)
    p.add_argument("--train-report", dest="train_report", action="append", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_report, paths=("metrics", "train_report"), subparser=p)
    return parser


def _check_paths(args) -> None:
    for attr in args.paths:
        value = getattr(args, attr)
        for path in (value if isinstance(value, list) else [value]):
            if path is not None and not Path(path).exists():
                args.subparser.error(f"--{attr.replace('_', '-')}: no such file or directory: {path}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_paths(args)

    try:
        file_values = load_config_file(args.config) if args.config else {}
        runtime = build_settings(RuntimeConfig, file_values, threads=args.threads)
    except (ConfigError, ValidationError, OSError) as e:
        print(f"cmg {args.command}: configuration error: {e}", file=sys.stderr)
        return 2

    logging.basicConfig(level=getattr(logging, runtime.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args, file_values, runtime)
    except (ConfigError, ValidationError) as e:
        print(f"cmg {args.command}: configuration error: {e}", file=sys.stderr)
        return 2
    except CMGError as e:
        print(f"cmg {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
