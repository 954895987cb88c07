"""From-scratch windowed token classifier trained by mini-batch SGD.

Architecture: hashed lowercased-token embeddings plus capitalization and
digit flags, concatenated over a +/-window context, one tanh hidden layer,
softmax over tag indices.  Small enough for exact gradient verification,
fast enough to train in seconds on the synthetic benchmark.

The batch loss is the mean over sentences of the mean-over-tokens cross
entropy, so a batch gradient equals the mean of per-sentence gradients.
Hard-label training is soft-target training against one-hot rows.
"""
from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import evaluation
from .annotation import EntityAnnotationSet, one_hot_rows
from .corpus import Corpus, LabelScheme, Sentence, decode_bio
from .rng import STREAM_INIT, STREAM_TRAIN, seeded_rng

BOUNDARY_TOKEN = "__boundary__"  # reserved padding word, hashed like any other
CHECKPOINT_MAGIC = "partialner.tagger.v1"
LOG_FLOOR = 1e-12  # clamp inside log; only active where a target is impossible anyway


@dataclass(frozen=True)
class TaggerConfig:
    """Hyperparameters for the windowed tagger and its SGD training loop."""

    embed_dim: int = 32
    window: int = 2                 # context tokens on each side
    hidden_dim: int = 64
    hash_buckets: int = 1 << 16
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5               # epochs without val-F1 improvement before stopping
    seed: int = 0
    halve_on_plateau: bool = False  # halve the rate each epoch the val F1 stalls

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.hash_buckets,
               self.batch_size, self.max_epochs) < 1:
            raise ValueError("dimensions, batch size and epoch count must be >= 1")
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def slots(self) -> int:
        return 2 * self.window + 1

    @property
    def input_dim(self) -> int:
        return self.slots * (self.embed_dim + 2)


@lru_cache(maxsize=1 << 17)
def _bucket(token: str, buckets: int) -> int:
    return zlib.crc32(token.lower().encode("utf-8")) % buckets


def _token_flags(token: str) -> tuple[float, float]:
    return (1.0 if token[:1].isupper() else 0.0,
            1.0 if any(ch.isdigit() for ch in token) else 0.0)


@dataclass(frozen=True)
class EncodedTokens:
    """Flat context-window encoding of one or more sentences."""

    ids: np.ndarray      # (T, slots) int64 bucket ids
    flags: np.ndarray    # (T, slots, 2) capitalization/digit flags
    offsets: np.ndarray  # (n_sentences + 1,) token offsets into the flat axis

    def __len__(self) -> int:
        return len(self.offsets) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)


def encode_tokens(token_seqs: Sequence[Sequence[str]], config: TaggerConfig) -> EncodedTokens:
    """Context-window bucket ids and flags for every token of every sentence."""
    w = config.window
    pad = [BOUNDARY_TOKEN] * w
    ids_rows: list[list[int]] = []
    flags_rows: list[list[tuple[float, float]]] = []
    offsets = [0]
    for tokens in token_seqs:
        padded = [*pad, *tokens, *pad]
        pids = [_bucket(t, config.hash_buckets) for t in padded]
        pflags = [_token_flags(t) for t in padded]
        for k in range(len(tokens)):
            ids_rows.append(pids[k:k + config.slots])
            flags_rows.append(pflags[k:k + config.slots])
        offsets.append(offsets[-1] + len(tokens))
    ids = np.asarray(ids_rows, dtype=np.int64).reshape(-1, config.slots)
    flags = np.asarray(flags_rows, dtype=np.float64).reshape(-1, config.slots, 2)
    return EncodedTokens(ids, flags, np.asarray(offsets, dtype=np.intp))


class TaggerModel:
    """Parameter container; training lives in module functions."""

    def __init__(self, config: TaggerConfig, scheme: LabelScheme,
                 embed: np.ndarray, w1: np.ndarray, b1: np.ndarray,
                 w2: np.ndarray, b2: np.ndarray):
        self.config = config
        self.scheme = scheme
        self.embed = embed  # (hash_buckets, embed_dim)
        self.w1 = w1        # (input_dim, hidden_dim)
        self.b1 = b1        # (hidden_dim,)
        self.w2 = w2        # (hidden_dim, tag_count)
        self.b2 = b2        # (tag_count,)

    @classmethod
    def init(cls, config: TaggerConfig, scheme: LabelScheme) -> "TaggerModel":
        """Seeded uniform(-r, r) init with r = 1/sqrt(fan_in); zero biases.

        The embedding table is a linear map from a one-hot bucket indicator,
        so its fan-in is 1 and rows start at unit scale.
        """
        rng = seeded_rng(config.seed, STREAM_INIT)

        def uniform(shape, fan_in):
            r = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-r, r, size=shape)

        return cls(
            config, scheme,
            embed=uniform((config.hash_buckets, config.embed_dim), 1),
            w1=uniform((config.input_dim, config.hidden_dim), config.input_dim),
            b1=np.zeros(config.hidden_dim),
            w2=uniform((config.hidden_dim, scheme.tag_count), config.hidden_dim),
            b2=np.zeros(scheme.tag_count))

    def copy(self) -> "TaggerModel":
        return TaggerModel(self.config, self.scheme, self.embed.copy(),
                           self.w1.copy(), self.b1.copy(),
                           self.w2.copy(), self.b2.copy())

    def load_from(self, other: "TaggerModel") -> None:
        for name, arr in other.params().items():
            np.copyto(self.params()[name], arr)

    def params(self) -> dict[str, np.ndarray]:
        """Live references to every parameter array."""
        return {"embed": self.embed, "w1": self.w1, "b1": self.b1,
                "w2": self.w2, "b2": self.b2}

    def sequence_distributions(self, token_seqs: Sequence[Sequence[str]]) -> list[np.ndarray]:
        """Per-sentence (L, C) softmax outputs."""
        enc = encode_tokens(list(token_seqs), self.config)
        probs = forward_flat(self, enc.ids, enc.flags)[2]
        return [probs[a:b] for a, b in zip(enc.offsets[:-1], enc.offsets[1:])]


def _features(model: TaggerModel, ids: np.ndarray, flags: np.ndarray) -> np.ndarray:
    gathered = model.embed[ids]                          # (T, slots, embed_dim)
    x = np.concatenate([gathered, flags], axis=2)        # (T, slots, embed_dim + 2)
    return x.reshape(ids.shape[0], model.config.input_dim)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_flat(model: TaggerModel, ids: np.ndarray, flags: np.ndarray,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, hidden, probabilities) for a flat token batch."""
    x = _features(model, ids, flags)
    h = np.tanh(x @ model.w1 + model.b1)
    probs = _softmax(h @ model.w2 + model.b2)
    return x, h, probs


def forward(model: TaggerModel, sentence) -> np.ndarray:
    """Per-token label distributions (L, C) for one sentence."""
    tokens = sentence.tokens if isinstance(sentence, Sentence) else tuple(sentence)
    enc = encode_tokens([tokens], model.config)
    return forward_flat(model, enc.ids, enc.flags)[2]


def soft_cross_entropy(predicted: np.ndarray, target: np.ndarray) -> float:
    """Mean over tokens of -sum_j t_j log max(q_j, floor).

    Hard-label loss is the special case where each target row is one-hot.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {target.shape}")
    logq = np.log(np.maximum(predicted, LOG_FLOOR))
    return float(-(target * logq).sum(axis=1).mean())


@dataclass
class Gradients:
    """Gradients of the weighted batch loss; embedding rows stay sparse."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    embed_ids: np.ndarray   # (U,) unique bucket ids the batch touched
    embed_rows: np.ndarray  # (U, embed_dim) gradient rows for those ids

    def dense_embed(self, buckets: int) -> np.ndarray:
        """Full (buckets, embed_dim) gradient table, for verification."""
        out = np.zeros((buckets, self.embed_rows.shape[1]))
        out[self.embed_ids] = self.embed_rows
        return out


def flat_loss(model: TaggerModel, ids: np.ndarray, flags: np.ndarray,
              targets: np.ndarray, weights: np.ndarray) -> float:
    probs = forward_flat(model, ids, flags)[2]
    logq = np.log(np.maximum(probs, LOG_FLOOR))
    return float(-((targets * logq).sum(axis=1) * weights).sum())


def flat_loss_and_grads(model: TaggerModel, ids: np.ndarray, flags: np.ndarray,
                        targets: np.ndarray, weights: np.ndarray,
                        ) -> tuple[float, Gradients]:
    """Loss and analytic gradients for per-token-weighted cross entropy."""
    x, h, probs = forward_flat(model, ids, flags)
    logq = np.log(np.maximum(probs, LOG_FLOOR))
    loss = float(-((targets * logq).sum(axis=1) * weights).sum())
    dlogits = (probs - targets) * weights[:, None]
    gw2 = h.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    dpre = (dlogits @ model.w2.T) * (1.0 - h * h)
    gw1 = x.T @ dpre
    gb1 = dpre.sum(axis=0)
    dx = dpre @ model.w1.T
    cfg = model.config
    dslot = dx.reshape(-1, cfg.slots, cfg.embed_dim + 2)[:, :, :cfg.embed_dim]
    flat_ids = ids.reshape(-1)
    uniq, inverse = np.unique(flat_ids, return_inverse=True)
    rows = np.zeros((uniq.size, cfg.embed_dim))
    np.add.at(rows, inverse, dslot.reshape(-1, cfg.embed_dim))
    return loss, Gradients(gw1, gb1, gw2, gb2, uniq, rows)


def _batch_arrays(model: TaggerModel, sentences, targets,
                  ) -> tuple[EncodedTokens, np.ndarray, np.ndarray]:
    if not len(sentences):
        raise ValueError("empty batch")
    token_seqs = [s.tokens if isinstance(s, Sentence) else tuple(s) for s in sentences]
    rows = []
    for seq, t in zip(token_seqs, targets):
        t = np.asarray(t, dtype=np.float64)
        if t.shape[0] != len(seq):
            raise ValueError(f"{t.shape[0]} target rows for {len(seq)} tokens")
        rows.append(t)
    enc = encode_tokens(token_seqs, model.config)
    lengths = enc.lengths
    weights = np.repeat(1.0 / (len(token_seqs) * lengths), lengths)
    return enc, np.concatenate(rows, axis=0), weights


def batch_loss(model: TaggerModel, sentences, targets) -> float:
    """Mean over sentences of the per-sentence soft cross entropy."""
    enc, t, w = _batch_arrays(model, sentences, targets)
    return flat_loss(model, enc.ids, enc.flags, t, w)


def grad(model: TaggerModel, sentences, targets) -> Gradients:
    """Analytic gradients of batch_loss w.r.t. every parameter."""
    enc, t, w = _batch_arrays(model, sentences, targets)
    return flat_loss_and_grads(model, enc.ids, enc.flags, t, w)[1]


def sgd_step(model: TaggerModel, grads: Gradients, lr: float) -> None:
    """In-place plain SGD update; embedding rows update sparsely."""
    model.w1 -= lr * grads.w1
    model.b1 -= lr * grads.b1
    model.w2 -= lr * grads.w2
    model.b2 -= lr * grads.b2
    model.embed[grads.embed_ids] -= lr * grads.embed_rows


def finite_difference_check(model: TaggerModel, sentences, targets,
                            h: float = 1e-4) -> float:
    """Worst guarded relative error between analytic and central-difference
    gradients over every parameter, embedding table included.

    Guarded denominator max(|a|, |fd|, 1e-3) keeps near-zero gradients from
    inflating the ratio with finite-difference noise.
    """
    enc, t, w = _batch_arrays(model, sentences, targets)
    analytic = flat_loss_and_grads(model, enc.ids, enc.flags, t, w)[1]
    dense = {"w1": analytic.w1, "b1": analytic.b1, "w2": analytic.w2,
             "b2": analytic.b2,
             "embed": analytic.dense_embed(model.config.hash_buckets)}
    worst = 0.0
    for name, arr in model.params().items():
        ga = dense[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            lp = flat_loss(model, enc.ids, enc.flags, t, w)
            arr[idx] = orig - h
            lm = flat_loss(model, enc.ids, enc.flags, t, w)
            arr[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            rel = abs(ga[idx] - fd) / max(abs(ga[idx]), abs(fd), 1e-3)
            worst = max(worst, rel)
    return worst


@dataclass(frozen=True)
class SoftDataset:
    """Sentences paired with per-token soft target distributions."""

    sentences: tuple[Sentence, ...]
    dists: tuple[np.ndarray, ...]  # per sentence (L, C)
    scheme: LabelScheme
    known: tuple[EntityAnnotationSet, ...] | None = None  # kept spans, if any

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(self, "dists", tuple(self.dists))
        if len(self.sentences) != len(self.dists):
            raise ValueError(f"{len(self.sentences)} sentences, {len(self.dists)} targets")
        c = self.scheme.tag_count
        for i, (s, d) in enumerate(zip(self.sentences, self.dists)):
            if d.shape != (len(s), c):
                raise ValueError(f"sentence {i}: target shape {d.shape}, want {(len(s), c)}")
            if (d < 0).any() or np.abs(d.sum(axis=1) - 1.0).max() > 1e-6:
                raise ValueError(f"sentence {i}: targets are not distributions")
        if self.known is not None and len(self.known) != len(self.sentences):
            raise ValueError("known-span list length mismatch")

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass
class TrainReport:
    """Per-epoch training curve and the selected checkpoint's position."""

    losses: list[float]  # mean per-sentence loss per epoch
    val_f1: list[float]  # validation span micro-F1 per epoch
    best_epoch: int      # 0-based index into the lists; -1: initial parameters
    stopped_early: bool
    baseline_f1: float = 0.0  # validation F1 of the parameters training started from

    @property
    def best_f1(self) -> float:
        return self.baseline_f1 if self.best_epoch < 0 else self.val_f1[self.best_epoch]

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,val_f1\n")
            for e, (loss, f1) in enumerate(zip(self.losses, self.val_f1)):
                fh.write(f"{e},{loss!r},{f1!r}\n")


def _training_targets(data, scheme: LabelScheme,
                      ) -> tuple[list[tuple[str, ...]], list[np.ndarray]]:
    if isinstance(data, SoftDataset):
        if data.scheme.categories != scheme.categories:
            raise ValueError("soft dataset scheme differs from model scheme")
        return [s.tokens for s in data.sentences], list(data.dists)
    if isinstance(data, Corpus):
        if not data.fully_labelled:
            raise ValueError("training corpus needs hard labels")
        return ([s.tokens for s in data.sentences],
                [one_hot_rows(s.labels, scheme.tag_count) for s in data.sentences])
    raise TypeError(f"cannot train on {type(data).__name__}; "
                    "expected Corpus or SoftDataset")


def validation_f1(model: TaggerModel, val_enc: EncodedTokens,
                  val_gold: list[list]) -> float:
    """Span micro-F1 of argmax predictions over a pre-encoded validation set."""
    probs = forward_flat(model, val_enc.ids, val_enc.flags)[2]
    tags = np.argmax(probs, axis=1)
    pred = [decode_bio(tags[a:b].tolist(), model.scheme)
            for a, b in zip(val_enc.offsets[:-1], val_enc.offsets[1:])]
    return evaluation.span_f1(pred, val_gold).f1


def train(model: TaggerModel, data, val: Corpus,
          config: TaggerConfig | None = None) -> tuple[TaggerModel, TrainReport]:
    """Mini-batch SGD with validation-F1 early stopping and best-epoch restore.

    `data` is a hard-labelled Corpus or a SoftDataset.  After each epoch the
    span micro-F1 on `val` is measured; training stops once it has failed to
    improve for `patience` consecutive epochs.  Selection runs over the whole
    stage including the starting parameters (epoch index -1), so a stage in
    which no epoch beats the initial checkpoint restores that checkpoint; the
    best parameters are restored into `model` (also returned).  Deterministic
    given config.seed.
    """
    config = config or model.config
    token_seqs, target_list = _training_targets(data, model.scheme)
    if not token_seqs:
        raise ValueError("empty training data")
    enc = encode_tokens(token_seqs, config)
    targets = np.concatenate(target_list, axis=0)
    lengths = enc.lengths
    n = len(token_seqs)
    sent_tok = [np.arange(a, b) for a, b in zip(enc.offsets[:-1], enc.offsets[1:])]
    val_enc = encode_tokens([s.tokens for s in val.sentences], config)
    val_gold = val.gold_spans()

    rng = seeded_rng(config.seed, STREAM_TRAIN)
    lr = config.learning_rate
    baseline_f1 = validation_f1(model, val_enc, val_gold)
    best_f1, best_model, best_epoch = baseline_f1, model.copy(), -1
    losses: list[float] = []
    f1s: list[float] = []
    since_best = 0
    stopped = False
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            chunk = order[start:start + config.batch_size]
            tok = np.concatenate([sent_tok[s] for s in chunk])
            w = np.repeat(1.0 / (chunk.size * lengths[chunk]), lengths[chunk])
            loss, grads = flat_loss_and_grads(
                model, enc.ids[tok], enc.flags[tok], targets[tok], w)
            sgd_step(model, grads, lr)
            total += loss * chunk.size
        losses.append(total / n)
        f1 = validation_f1(model, val_enc, val_gold)
        f1s.append(f1)
        if f1 > best_f1:
            best_f1, best_epoch, since_best = f1, epoch, 0
            best_model = model.copy()
        else:
            since_best += 1
            if config.halve_on_plateau:
                lr *= 0.5
            if since_best >= config.patience:
                stopped = True
                break
    model.load_from(best_model)
    return model, TrainReport(losses, f1s, best_epoch, stopped, baseline_f1)


def save_checkpoint(model: TaggerModel, path: str) -> None:
    """Versioned npz checkpoint: magic, config echo, categories, parameters."""
    np.savez(path,
             magic=np.array(CHECKPOINT_MAGIC),
             config=np.array(json.dumps(dataclasses.asdict(model.config),
                                        sort_keys=True)),
             categories=np.array(list(model.scheme.categories)),
             embed=model.embed, w1=model.w1, b1=model.b1,
             w2=model.w2, b2=model.b2)


def load_checkpoint(path: str) -> TaggerModel:
    with np.load(path, allow_pickle=False) as z:
        if "magic" not in z.files or str(z["magic"]) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
        config = TaggerConfig(**json.loads(str(z["config"])))
        scheme = LabelScheme(tuple(str(c) for c in z["categories"]))
        return TaggerModel(config, scheme, z["embed"].copy(),
                           z["w1"].copy(), z["b1"].copy(),
                           z["w2"].copy(), z["b2"].copy())
