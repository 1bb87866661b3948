"""Pre-training of PropNet/SimNet and the composite CMG training loop, with early stopping on dev."""

import logging
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from tqdm import tqdm

from autodiff.module import Module
from autodiff.optim import build_optimizer
from autodiff.tensor import Tape, backward, no_grad
from chem.smiles import Vocabulary, pad_batch, tokenize
from cmg_model import CMGModel, PairBatch, build_propnet, build_simnet, cmg_loss, make_pair_batch
from config import ModelConfig, TrainConfig
from data_pipeline import split
from errors import DegenerateLabels, EmptyCorpus
from nets.constraint import PropNet, SimNet, propnet_loss, sequence_mask, simnet_loss

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["epoch", "split", "lt", "lp", "ls", "lcmg", "metric"]


class EpochRecord(BaseModel):
    epoch: int
    split: str
    lt: float = 0.0
    lp: float = 0.0
    ls: float = 0.0
    lcmg: float = 0.0
    metric: float = 0.0   # dev MSE, dev accuracy or token accuracy


class TrainReport(BaseModel):
    stage: str
    rows: List[EpochRecord] = []
    chosen_epoch: int = 0
    best_metric: float = 0.0
    steps: int = 0   # optimizer updates taken

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=REPORT_COLUMNS)

    def dev_rows(self) -> List[EpochRecord]:
        return [r for r in self.rows if r.split == "dev"]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# stage={self.stage} chosen_epoch={self.chosen_epoch} steps={self.steps}\n")
            self.frame().to_csv(f, sep="\t", index=False, lineterminator="\n")
        return path


class PretrainResult(NamedTuple):
    net: Module
    dev_metric: float
    report: TrainReport


def _batches(n: int, batch_size: int, rng: Optional[np.random.Generator]):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _step(loss_fn: Callable, optimizer) -> float:
    optimizer.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    optimizer.step()
    return loss.item()


class EarlyStopping:
    """Tracks the best dev value and keeps a copy of the parameters that produced it."""

    def __init__(self, net: Module, patience: int, higher_is_better: bool = False):
        self.net = net
        self.patience = patience
        self.sign = -1.0 if higher_is_better else 1.0
        self.best: Optional[float] = None
        self.best_epoch = 0
        self.best_state = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value``; returns True when training should stop."""
        if self.best is None or self.sign * value < self.sign * self.best:
            self.best, self.best_epoch = value, epoch
            self.best_state = self.net.state_dict()
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def restore(self) -> None:
        if self.best_state is not None:
            self.net.load_state_dict(self.best_state)


# PropNet

def _encode_molecules(smiles: Sequence[str], vocab: Vocabulary, max_len: int) -> np.ndarray:
    return pad_batch([tokenize(s, vocab, max_len) for s in smiles], vocab.pad_id)


def propnet_mse(net: PropNet, ids: np.ndarray, targets: np.ndarray, batch_size: int = 256) -> float:
    """Mean squared error over samples and property dimensions."""
    sq = 0.0
    with no_grad():
        for rows in _batches(len(ids), batch_size, None):
            diff = net.predict(ids[rows]) - targets[rows]
            sq += float((diff * diff).sum())
    return sq / targets.size


def pretrain_propnet(smiles: Sequence[str], targets, vocab: Vocabulary, model_cfg: ModelConfig,
                     train_cfg: TrainConfig, dev: Optional[Tuple[Sequence[str], np.ndarray]] = None,
                     progress: bool = False) -> PretrainResult:
    """Fit PropNet on (molecule, normalised property vector) rows; best dev MSE wins."""
    if len(smiles) == 0:
        raise EmptyCorpus("PropNet corpus is empty")
    targets = np.asarray(targets, dtype=np.float64)
    if dev is None:
        train_idx, dev_idx = split(list(range(len(smiles))), 0.8, train_cfg.seed)
        dev = ([smiles[i] for i in dev_idx], targets[dev_idx])
        smiles, targets = [smiles[i] for i in train_idx], targets[train_idx]

    net = build_propnet(vocab, model_cfg)
    ids = _encode_molecules(smiles, vocab, model_cfg.max_len)
    dev_ids = _encode_molecules(dev[0], vocab, model_cfg.max_len)
    dev_targets = np.asarray(dev[1], dtype=np.float64)

    optimizer = build_optimizer(train_cfg.optimizer, net.parameters(), train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    stopper = EarlyStopping(net, train_cfg.patience)
    report = TrainReport(stage="propnet")

    for epoch in tqdm(range(1, train_cfg.max_epochs + 1), desc="PropNet", disable=not progress):
        total = 0.0
        for rows in _batches(len(ids), train_cfg.batch_size, rng):
            batch = ids[rows]

            def loss_fn():
                pred = net(net.embed_tokens(batch), sequence_mask(batch, vocab.pad_id))
                return propnet_loss(pred, targets[rows])

            total += _step(loss_fn, optimizer) * len(rows)
            report.steps += 1
        dev_mse = propnet_mse(net, dev_ids, dev_targets)
        report.rows.append(EpochRecord(epoch=epoch, split="train", lp=total / len(ids)))
        report.rows.append(EpochRecord(epoch=epoch, split="dev", metric=dev_mse))
        logger.debug("propnet epoch %d: train lp %.5f, dev mse %.5f", epoch, total / len(ids), dev_mse)
        if stopper.update(epoch, dev_mse):
            break

    stopper.restore()
    report.chosen_epoch, report.best_metric = stopper.best_epoch, stopper.best
    logger.info("PropNet: best dev MSE %.5f at epoch %d", stopper.best, stopper.best_epoch)
    return PretrainResult(net, stopper.best, report)


# SimNet

def simnet_accuracy(net: SimNet, a_ids: np.ndarray, b_ids: np.ndarray, labels: np.ndarray,
                    batch_size: int = 256) -> float:
    correct = 0
    with no_grad():
        for rows in _batches(len(labels), batch_size, None):
            pred = net.predict(a_ids[rows], b_ids[rows])
            correct += int(((pred > 0.5).astype(int) == labels[rows]).sum())
    return correct / len(labels)


def pretrain_simnet(x_smiles: Sequence[str], y_smiles: Sequence[str], labels, vocab: Vocabulary,
                    model_cfg: ModelConfig, train_cfg: TrainConfig,
                    dev: Optional[Tuple[Sequence[str], Sequence[str], np.ndarray]] = None,
                    progress: bool = False) -> PretrainResult:
    """Fit SimNet on labelled pairs; best dev accuracy wins."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyCorpus("SimNet corpus is empty")
    if len(np.unique(labels)) < 2:
        raise DegenerateLabels(f"SimNet corpus has a single label class ({int(labels[0])})")
    if dev is None:
        train_idx, dev_idx = split(list(range(len(labels))), 0.8, train_cfg.seed)
        dev = ([x_smiles[i] for i in dev_idx], [y_smiles[i] for i in dev_idx], labels[dev_idx])
        x_smiles = [x_smiles[i] for i in train_idx]
        y_smiles = [y_smiles[i] for i in train_idx]
        labels = labels[train_idx]

    net = build_simnet(vocab, model_cfg)
    a_ids = _encode_molecules(x_smiles, vocab, model_cfg.max_len)
    b_ids = _encode_molecules(y_smiles, vocab, model_cfg.max_len)
    dev_a = _encode_molecules(dev[0], vocab, model_cfg.max_len)
    dev_b = _encode_molecules(dev[1], vocab, model_cfg.max_len)
    dev_labels = np.asarray(dev[2], dtype=np.int64)

    optimizer = build_optimizer(train_cfg.optimizer, net.parameters(), train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    stopper = EarlyStopping(net, train_cfg.patience, higher_is_better=True)
    report = TrainReport(stage="simnet")
    pad = vocab.pad_id

    for epoch in tqdm(range(1, train_cfg.max_epochs + 1), desc="SimNet", disable=not progress):
        total = 0.0
        for rows in _batches(len(labels), train_cfg.batch_size, rng):
            a, b = a_ids[rows], b_ids[rows]

            def loss_fn():
                pred = net(net.embed_tokens(a), sequence_mask(a, pad), net.embed_tokens(b), sequence_mask(b, pad))
                return simnet_loss(pred, labels[rows])

            total += _step(loss_fn, optimizer) * len(rows)
            report.steps += 1
        accuracy = simnet_accuracy(net, dev_a, dev_b, dev_labels)
        report.rows.append(EpochRecord(epoch=epoch, split="train", ls=total / len(labels)))
        report.rows.append(EpochRecord(epoch=epoch, split="dev", metric=accuracy))
        logger.debug("simnet epoch %d: train ls %.5f, dev accuracy %.4f", epoch, total / len(labels), accuracy)
        if stopper.update(epoch, accuracy):
            break

    stopper.restore()
    report.chosen_epoch, report.best_metric = stopper.best_epoch, stopper.best
    logger.info("SimNet: best dev accuracy %.4f at epoch %d", stopper.best, stopper.best_epoch)
    return PretrainResult(net, stopper.best, report)


# CMG

class PairRows(NamedTuple):
    """Tokenised training pairs with normalised properties."""
    x_ids: np.ndarray
    y_ids: np.ndarray
    p_x: np.ndarray
    p_y: np.ndarray
    pad_id: int = 0

    def __len__(self) -> int:
        return len(self.x_ids)

    def batch(self, rows: np.ndarray) -> PairBatch:
        x, y = self.x_ids[rows], self.y_ids[rows]
        # trim shared padding columns
        x = x[:, : int((x != self.pad_id).sum(axis=1).max())]
        y = y[:, : int((y != self.pad_id).sum(axis=1).max())]
        return PairBatch(x, y, self.p_x[rows], self.p_y[rows], np.ones(len(rows)))


def prepare_pairs(model: CMGModel, x_smiles: Sequence[str], y_smiles: Sequence[str], p_x, p_y) -> PairRows:
    batch = make_pair_batch(list(x_smiles), list(y_smiles), model.scaler.normalize(np.asarray(p_x)),
                            model.scaler.normalize(np.asarray(p_y)), model.vocab, model.max_len)
    return PairRows(batch.x_ids, batch.y_ids, batch.p_x, batch.p_y, model.vocab.pad_id)


def evaluate_cmg(model: CMGModel, rows: PairRows, train_cfg: TrainConfig, epoch: int = 0,
                 split_name: str = "dev") -> EpochRecord:
    """Size-weighted means of the loss components over fixed-order batches."""
    sums = np.zeros(5)
    with no_grad():
        for idx in _batches(len(rows), train_cfg.batch_size, None):
            out = cmg_loss(model, rows.batch(idx), train_cfg.lambda_p, train_cfg.lambda_s)
            sums += len(idx) * np.array([out.lt, out.lp, out.ls, out.lcmg, out.accuracy])
    lt, lp, ls, lcmg, acc = sums / len(rows)
    return EpochRecord(epoch=epoch, split=split_name, lt=lt, lp=lp, ls=ls, lcmg=lcmg, metric=acc)


def train_cmg(model: CMGModel, train: PairRows, dev: Optional[PairRows], train_cfg: TrainConfig,
              progress: bool = False) -> TrainReport:
    """Minimise the composite loss over the translator; constraint nets stay frozen. Best dev loss is restored."""
    if len(train) == 0:
        raise EmptyCorpus("no training pairs")
    dev = dev if dev is not None and len(dev) else train
    optimizer = build_optimizer(train_cfg.optimizer, model.trainable_parameters(), train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    stopper = EarlyStopping(model.translator, train_cfg.patience)
    report = TrainReport(stage="cmg")

    for epoch in tqdm(range(1, train_cfg.max_epochs + 1), desc="CMG", disable=not progress):
        sums = np.zeros(5)
        for idx in _batches(len(train), train_cfg.batch_size, rng):
            batch = train.batch(idx)
            parts = {}

            def loss_fn():
                out = cmg_loss(model, batch, train_cfg.lambda_p, train_cfg.lambda_s)
                parts["out"] = out
                return out.total

            _step(loss_fn, optimizer)
            report.steps += 1
            out = parts["out"]
            sums += len(idx) * np.array([out.lt, out.lp, out.ls, out.lcmg, out.accuracy])
        lt, lp, ls, lcmg, acc = sums / len(train)
        report.rows.append(EpochRecord(epoch=epoch, split="train", lt=lt, lp=lp, ls=ls, lcmg=lcmg, metric=acc))
        dev_row = evaluate_cmg(model, dev, train_cfg, epoch)
        report.rows.append(dev_row)
        logger.debug("cmg epoch %d: train lcmg %.5f, dev lcmg %.5f, dev acc %.4f",
                     epoch, lcmg, dev_row.lcmg, dev_row.metric)
        if stopper.update(epoch, dev_row.lcmg):
            break

    stopper.restore()
    report.chosen_epoch, report.best_metric = stopper.best_epoch, stopper.best
    logger.info("CMG: best dev loss %.5f at epoch %d", stopper.best, stopper.best_epoch)
    return report
