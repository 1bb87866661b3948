"""Controlled Molecule Generator: translator plus frozen PropNet/SimNet."""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from autodiff import ops
from autodiff.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from autodiff.module import Module
from autodiff.tensor import Tensor, no_grad
from chem.properties import PropertyScaler
from chem.smiles import Vocabulary, pad_batch, tokenize
from config import ModelConfig
from errors import CheckpointError, ShapeMismatch, VocabMismatch
from nets.constraint import PropNet, SimNet, propnet_loss, sequence_mask, simnet_loss
from nets.translator import (EncoderOutput, Translator, TranslatorConfig, teacher_forcing,
                             token_accuracy, translation_loss)

logger = logging.getLogger(__name__)


@dataclass
class PairBatch:
    x_ids: np.ndarray    # (B, Tx)
    y_ids: np.ndarray    # (B, Ty)
    p_x: np.ndarray      # (B, k) normalised
    p_y: np.ndarray      # (B, k) normalised
    labels: np.ndarray   # (B,) similarity labels, 1 for mined pairs

    def __len__(self) -> int:
        return self.x_ids.shape[0]


def make_pair_batch(x_smiles: Sequence[str], y_smiles: Sequence[str], p_x, p_y,
                    vocab: Vocabulary, max_len: Optional[int] = None, labels=None) -> PairBatch:
    if not x_smiles or len(x_smiles) != len(y_smiles):
        raise ShapeMismatch("pair batch", (len(x_smiles),), (len(y_smiles),))
    x_ids = pad_batch([tokenize(s, vocab, max_len) for s in x_smiles], vocab.pad_id)
    y_ids = pad_batch([tokenize(s, vocab, max_len) for s in y_smiles], vocab.pad_id)
    labels = np.ones(len(x_smiles)) if labels is None else np.asarray(labels, dtype=np.float64)
    return PairBatch(x_ids, y_ids, np.asarray(p_x, dtype=np.float64), np.asarray(p_y, dtype=np.float64), labels)


class LossBreakdown(NamedTuple):
    total: Tensor
    lt: float
    lp: float
    ls: float
    accuracy: float

    @property
    def lcmg(self) -> float:
        return self.total.item()


class CMGModel(Module):
    def __init__(self, translator: Translator, propnet: PropNet, simnet: SimNet,
                 vocab: Vocabulary, scaler: PropertyScaler, model_cfg: ModelConfig):
        self.translator = translator
        self.propnet = propnet
        self.simnet = simnet
        self.vocab = vocab
        self.scaler = scaler
        self.model_cfg = model_cfg

    @property
    def max_len(self) -> int:
        return self.translator.cfg.M

    def metadata(self) -> dict:
        return {
            "kind": "cmg",
            "vocab": self.vocab.alphabet,
            "scaler": self.scaler.model_dump(),
            "model": self.model_cfg.model_dump(mode="json"),
        }

    def save(self, path, config_hash: str = "", extra: Optional[dict] = None) -> None:
        meta = self.metadata()
        meta.update(extra or {})
        save_checkpoint(path, self.named_parameters(), config_hash, meta)

    @classmethod
    def load(cls, path) -> "CMGModel":
        ckpt = load_checkpoint(path)
        if ckpt.metadata.get("kind") != "cmg":
            raise CheckpointError(f"{path} is not a CMG checkpoint")
        vocab, scaler, model_cfg = _unpack_metadata(ckpt)
        model = build_cmg(vocab, scaler, model_cfg)
        model.load_weights(ckpt)
        return model

    def load_weights(self, ckpt: Checkpoint) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(ckpt.tensors)
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for name, p in params.items():
            value = ckpt.tensors[name]
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.value = value.copy()
            p.frozen = ckpt.frozen.get(name, False)


def _unpack_metadata(ckpt: Checkpoint):
    try:
        vocab = Vocabulary(ckpt.metadata["vocab"])
        scaler = PropertyScaler.model_validate(ckpt.metadata["scaler"])
        model_cfg = ModelConfig(**ckpt.metadata["model"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint metadata incomplete: {e}") from None
    return vocab, scaler, model_cfg


def build_translator_for(vocab: Vocabulary, model_cfg: ModelConfig) -> Translator:
    cfg = TranslatorConfig.from_model_config(model_cfg, len(vocab))
    return Translator(cfg, np.random.default_rng(model_cfg.init_seed))


def build_propnet(vocab: Vocabulary, model_cfg: ModelConfig) -> PropNet:
    return PropNet(vocab, model_cfg.rnn_d, np.random.default_rng(model_cfg.init_seed + 1), model_cfg.k)


def build_simnet(vocab: Vocabulary, model_cfg: ModelConfig) -> SimNet:
    return SimNet(vocab, model_cfg.rnn_d, np.random.default_rng(model_cfg.init_seed + 2))


def build_cmg(vocab: Vocabulary, scaler: PropertyScaler, model_cfg: ModelConfig) -> CMGModel:
    return assemble_cmg(build_translator_for(vocab, model_cfg), build_propnet(vocab, model_cfg),
                        build_simnet(vocab, model_cfg), vocab, scaler, model_cfg)


def assemble_cmg(translator: Translator, propnet: PropNet, simnet: SimNet, vocab: Vocabulary,
                 scaler: PropertyScaler, model_cfg: ModelConfig) -> CMGModel:
    """Combine the three nets; constraint-net parameters are frozen from here on."""
    if propnet.vocab != vocab or simnet.vocab != vocab or translator.cfg.V != len(vocab):
        raise VocabMismatch(
            f"vocabulary sizes differ: translator={translator.cfg.V} propnet={len(propnet.vocab)} "
            f"simnet={len(simnet.vocab)} data={len(vocab)}"
        )
    propnet.freeze()
    simnet.freeze()
    return CMGModel(translator, propnet, simnet, vocab, scaler, model_cfg)


# constraint-net checkpoints

def save_constraint_net(path, net: Module, kind: str, vocab: Vocabulary, scaler: PropertyScaler,
                        model_cfg: ModelConfig, config_hash: str = "", extra: Optional[dict] = None) -> None:
    meta = {"kind": kind, "vocab": vocab.alphabet, "scaler": scaler.model_dump(),
            "model": model_cfg.model_dump(mode="json")}
    meta.update(extra or {})
    save_checkpoint(path, net.named_parameters(prefix=f"{kind}."), config_hash, meta)


def load_constraint_net(path, kind: str, vocab: Optional[Vocabulary] = None):
    ckpt = load_checkpoint(path)
    if ckpt.metadata.get("kind") != kind:
        raise CheckpointError(f"{path} holds {ckpt.metadata.get('kind')!r}, expected {kind!r}")
    saved_vocab, _, model_cfg = _unpack_metadata(ckpt)
    if vocab is not None and saved_vocab != vocab:
        raise VocabMismatch(f"{path}: vocabulary differs from the training data")
    net = build_propnet(saved_vocab, model_cfg) if kind == "propnet" else build_simnet(saved_vocab, model_cfg)
    net.load_state_dict(ckpt.section(kind))
    return net


# training objective

def cmg_loss(model: CMGModel, batch: PairBatch, lambda_p: float, lambda_s: float) -> LossBreakdown:
    """Translation loss plus lambda_p * property loss plus lambda_s * similarity loss, on teacher-forced decoder rows."""
    pad = model.vocab.pad_id
    dec_in, dec_out = teacher_forcing(batch.y_ids)
    enc = model.translator.encode(batch.x_ids, batch.p_x, batch.p_y)
    logits = model.translator.decode(enc, dec_in)
    lt = translation_loss(logits, dec_out, pad)

    # Position 0 of the generated sequence is always [BEGIN]; the rest are softmax rows.
    dist = ops.softmax(logits, axis=-1)
    begin = np.zeros((len(batch), 1, model.translator.cfg.V))
    begin[:, 0, model.vocab.begin_id] = 1.0
    soft = ops.concat([Tensor(begin), dist], axis=1)
    y_mask = sequence_mask(batch.y_ids, pad)

    p_hat = model.propnet(model.propnet.embed_soft(soft), y_mask)
    lp = propnet_loss(p_hat, batch.p_y)

    x_emb = model.simnet.embed_tokens(batch.x_ids)
    s_hat = model.simnet(x_emb, sequence_mask(batch.x_ids, pad), model.simnet.embed_soft(soft), y_mask)
    ls = simnet_loss(s_hat, batch.labels)

    total = lt + lp * lambda_p + ls * lambda_s
    return LossBreakdown(total, lt.item(), lp.item(), ls.item(), token_accuracy(logits, dec_out, pad))


# inference adapters used by beam search and rescoring

class TranslatorScorer:
    """Next-token log-probabilities for a batch of equal-length prefixes of one input."""

    def __init__(self, model: CMGModel, enc: EncoderOutput):
        self.model = model
        self.enc = enc

    def log_probs(self, prefixes: np.ndarray) -> np.ndarray:
        prefixes = np.asarray(prefixes, dtype=np.int64)
        with no_grad():
            logits = self.model.translator.decode_step(self.enc.take(np.zeros(len(prefixes), dtype=np.int64)),
                                                       prefixes).value
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class ConstraintScorer:
    """Hard-token PropNet/SimNet predictions for rescoring."""

    def __init__(self, model: CMGModel):
        self.model = model

    def properties(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        ids = pad_batch(seqs, self.model.vocab.pad_id)
        with no_grad():
            return self.model.propnet.predict(ids)

    def similarity(self, x_tokens: Sequence[int], seqs: Sequence[Sequence[int]]) -> np.ndarray:
        pad = self.model.vocab.pad_id
        ys = pad_batch(seqs, pad)
        xs = pad_batch([list(x_tokens)] * len(seqs), pad)
        with no_grad():
            return self.model.simnet.predict(xs, ys)


def encode_input(model: CMGModel, x_smiles: str, p_x_norm, p_y_norm) -> EncoderOutput:
    ids = np.array([tokenize(x_smiles, model.vocab, model.max_len)], dtype=np.int64)
    with no_grad():
        return model.translator.encode(ids, np.asarray(p_x_norm)[None], np.asarray(p_y_norm)[None])
