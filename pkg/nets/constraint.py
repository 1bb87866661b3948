"""PropNet and SimNet: bidirectional LSTM regularisers over SMILES sequences.

Both nets accept embedded sequences, so the same forward pass serves hard
tokens (``embed_tokens``) and the decoder's softmax output (``soft_embed``).
"""

import numpy as np

from autodiff import ops
from autodiff.module import Embedding, Linear, Module
from autodiff.tensor import Tensor
from chem.fingerprint import DEFAULT_N_BITS, DEFAULT_RADIUS, smiles_fingerprint, tanimoto
from chem.smiles import Vocabulary
from config import N_PROPERTIES
from errors import EmptySequence, ShapeMismatch

# ŝ is clipped to [EPS, 1 - EPS] inside the BCE
EPS = 1e-7


def soft_embed(dist, table) -> Tensor:
    """Probability-weighted average of embedding rows at every position."""
    dist, table = ops.as_tensor(dist), ops.as_tensor(table)
    if dist.shape[-1] != table.shape[0] or table.ndim != 2:
        raise ShapeMismatch("soft_embed", dist.shape, table.shape)
    return ops.matmul(dist, table)


def sequence_mask(ids, pad_id: int = 0) -> np.ndarray:
    return (np.asarray(ids) != pad_id).astype(np.float64)


class LSTMCell(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.input_proj = Linear(in_dim, 4 * hidden, rng)
        self.recurrent_proj = Linear(hidden, 4 * hidden, rng, bias=False)

    def run(self, x: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
        """Final hidden state over a right-padded batch; padded steps carry the state through."""
        bsz, seqlen, _ = x.shape
        hsz = self.hidden
        projected = self.input_proj(x)  # (B, T, 4h)
        h = Tensor(np.zeros((bsz, hsz)))
        c = Tensor(np.zeros((bsz, hsz)))
        steps = range(seqlen - 1, -1, -1) if reverse else range(seqlen)
        for t in steps:
            gates = projected[:, t, :] + self.recurrent_proj(h)
            i = ops.sigmoid(gates[:, :hsz])
            f = ops.sigmoid(gates[:, hsz:2 * hsz])
            g = ops.tanh(gates[:, 2 * hsz:3 * hsz])
            o = ops.sigmoid(gates[:, 3 * hsz:])
            c_new = f * c + i * g
            h_new = o * ops.tanh(c_new)
            m = mask[:, t:t + 1]
            if m.all():
                h, c = h_new, c_new
            else:
                h = h_new * m + h * (1.0 - m)
                c = c_new * m + c * (1.0 - m)
        return h


class BiLSTM(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.forward_cell = LSTMCell(in_dim, hidden, rng)
        self.backward_cell = LSTMCell(in_dim, hidden, rng)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if x.ndim != 3:
            raise ShapeMismatch("bilstm", x.shape)
        mask = np.asarray(mask, dtype=np.float64)
        if x.shape[1] == 0 or (mask.sum(axis=1) == 0).any():
            raise EmptySequence("recurrent input has an empty sequence")
        if mask.shape != x.shape[:2]:
            raise ShapeMismatch("bilstm mask", x.shape, mask.shape)
        return ops.concat([self.forward_cell.run(x, mask), self.backward_cell.run(x, mask, reverse=True)],
                          axis=-1)


class _ConstraintNet(Module):
    def __init__(self, vocab: Vocabulary, hidden: int, rng: np.random.Generator):
        self.vocab = vocab
        self.hidden = hidden
        self.embedding = Embedding(len(vocab), hidden, rng)
        self.rnn = BiLSTM(hidden, hidden, rng)

    def embed_tokens(self, ids) -> Tensor:
        return self.embedding(ids)

    def embed_soft(self, dist) -> Tensor:
        return soft_embed(dist, self.embedding.weight)


class PropNet(_ConstraintNet):
    """Sequence -> property vector in normalised space."""

    def __init__(self, vocab: Vocabulary, hidden: int, rng: np.random.Generator, k: int = N_PROPERTIES):
        super().__init__(vocab, hidden, rng)
        self.dense1 = Linear(2 * hidden, hidden, rng)
        self.dense2 = Linear(hidden, k, rng)

    def forward(self, seq: Tensor, mask: np.ndarray) -> Tensor:
        return self.dense2(ops.tanh(self.dense1(self.rnn(seq, mask))))

    def predict(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return self(self.embed_tokens(ids), sequence_mask(ids, self.vocab.pad_id)).value


class SimNet(_ConstraintNet):
    """Pair of sequences -> probability that they are similar. One BiLSTM encodes both sides."""

    def __init__(self, vocab: Vocabulary, hidden: int, rng: np.random.Generator):
        super().__init__(vocab, hidden, rng)
        self.dense1 = Linear(4 * hidden, hidden, rng)
        self.dense2 = Linear(hidden, 1, rng)

    def forward(self, a: Tensor, a_mask: np.ndarray, b: Tensor, b_mask: np.ndarray) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ShapeMismatch("simnet pair", a.shape, b.shape)
        features = ops.concat([self.rnn(a, a_mask), self.rnn(b, b_mask)], axis=-1)
        logit = self.dense2(ops.tanh(self.dense1(features)))
        return ops.reshape(ops.sigmoid(logit), (a.shape[0],))

    def predict(self, a_ids, b_ids) -> np.ndarray:
        a_ids = np.asarray(a_ids, dtype=np.int64)
        b_ids = np.asarray(b_ids, dtype=np.int64)
        pad = self.vocab.pad_id
        return self(self.embed_tokens(a_ids), sequence_mask(a_ids, pad),
                    self.embed_tokens(b_ids), sequence_mask(b_ids, pad)).value


def propnet_loss(pred: Tensor, target) -> Tensor:
    """Mean over the batch of the squared Euclidean distance."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeMismatch("propnet_loss", pred.shape, target.shape)
    diff = pred - target
    return ops.sum_(diff * diff) * (1.0 / pred.shape[0])


def simnet_loss(pred: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy."""
    labels = np.asarray(labels, dtype=np.float64)
    if pred.shape != labels.shape:
        raise ShapeMismatch("simnet_loss", pred.shape, labels.shape)
    p = ops.clip(pred, EPS, 1.0 - EPS)
    ll = ops.log(p) * labels + ops.log(1.0 - p) * (1.0 - labels)
    return -ops.mean(ll)


def label_similarity(x: str, y: str, delta: float = 0.4, radius: int = DEFAULT_RADIUS,
                     n_bits: int = DEFAULT_N_BITS) -> int:
    return int(tanimoto(smiles_fingerprint(x, radius, n_bits), smiles_fingerprint(y, radius, n_bits)) >= delta)
