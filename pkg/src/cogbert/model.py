"""Compact BERT-style encoder with pluggable cognitive augmentations.

Augmentation modes:
  none         plain encoder (word + position embeddings, base PAD mask)
  eeg_embed    adds a 101-row EEG-token embedding table to the input sum
  eye_embed    adds a 101-row eye-token embedding table
  both_embed   adds both tables
  cog_mask     replaces the base PAD mask with the fixation-derived mask
  pool_concat  classifier input = [CLS hidden | sentence EEG vector]
  pool_concat_nn  classifier input = [CLS hidden | NN(sentence EEG)]
  pool_multiply   CLS hidden scaled by sum(sentence EEG)/d_model
  pool_add_nn     CLS hidden + NN(sentence EEG)

The fusion NN maps C -> d_model -> d_model -> d_model with GELU after the
first two layers. The pooled output is the raw CLS hidden state of the last
layer (no extra pooler). Every forward pass records per-layer, per-head
attention probabilities for the explanation pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ValidationError
from .features import FeatureDb, cognitive_mask
from .numerics import autodiff as ad
from .numerics.autodiff import Node, Parameter
from .numerics.rng import SeededRng
from .tokenizer import SEP_ID, TokenizedSentence

MODES = (
    "none", "eeg_embed", "eye_embed", "both_embed", "cog_mask",
    "pool_concat", "pool_concat_nn", "pool_multiply", "pool_add_nn",
)
COG_TABLE_ROWS = 101  # cognitive tokens range over 0..100
LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass
class ModelConfig:
    vocab_size: int
    n_classes: int
    layers: int = 2
    heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    max_len: int = 64
    eeg_channels: int = 8
    dropout: float = 0.1
    mode: str = "none"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown augmentation mode {self.mode!r}; choose from {MODES}")
        if self.layers < 1 or self.heads < 1:
            raise ConfigError("layers and heads must be >= 1")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.vocab_size <= SEP_ID:
            raise ConfigError(f"vocab_size must exceed the reserved id range (> {SEP_ID})")
        if self.max_len < 3:
            raise ConfigError("max_len must be >= 3")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.d_ff < 1 or self.eeg_channels < 1 or self.n_classes < 2:
            raise ConfigError("d_ff, eeg_channels must be positive and n_classes >= 2")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def uses_eeg_tokens(self) -> bool:
        return self.mode in ("eeg_embed", "both_embed")

    @property
    def uses_eye_tokens(self) -> bool:
        return self.mode in ("eye_embed", "both_embed")

    @property
    def uses_fusion_nn(self) -> bool:
        return self.mode in ("pool_concat_nn", "pool_add_nn")

    @property
    def uses_sentence_eeg(self) -> bool:
        return self.mode.startswith("pool_")

    @property
    def needs_features(self) -> bool:
        return self.mode != "none"

    @property
    def classifier_in_dim(self) -> int:
        if self.mode == "pool_concat":
            return self.d_model + self.eeg_channels
        if self.mode == "pool_concat_nn":
            return 2 * self.d_model
        return self.d_model

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class AttentionTrace:
    """Per-layer, per-head attention probabilities for one sentence."""

    probs: np.ndarray  # (layers, heads, max_len, max_len)

    @property
    def layers(self) -> int:
        return self.probs.shape[0]

    @property
    def heads(self) -> int:
        return self.probs.shape[1]


def _param_spec(cfg: ModelConfig) -> list[tuple[str, int, int, bool]]:
    """(name, rows, cols, decay) for every tensor the config requires."""
    d, ff = cfg.d_model, cfg.d_ff
    spec = [
        ("embed.word", cfg.vocab_size, d, True),
        ("embed.position", cfg.max_len, d, True),
    ]
    if cfg.uses_eeg_tokens:
        spec.append(("embed.eeg", COG_TABLE_ROWS, d, True))
    if cfg.uses_eye_tokens:
        spec.append(("embed.eye", COG_TABLE_ROWS, d, True))
    spec += [("embed.ln.gamma", 1, d, False), ("embed.ln.beta", 1, d, False)]
    for i in range(cfg.layers):
        p = f"layer{i}."
        for proj in ("q", "k", "v", "o"):
            spec += [(p + f"attn.w{proj}", d, d, True), (p + f"attn.b{proj}", 1, d, False)]
        spec += [
            (p + "ln1.gamma", 1, d, False), (p + "ln1.beta", 1, d, False),
            (p + "ff.w1", d, ff, True), (p + "ff.b1", 1, ff, False),
            (p + "ff.w2", ff, d, True), (p + "ff.b2", 1, d, False),
            (p + "ln2.gamma", 1, d, False), (p + "ln2.beta", 1, d, False),
        ]
    if cfg.uses_fusion_nn:
        spec += [
            ("fusion.w1", cfg.eeg_channels, d, True), ("fusion.b1", 1, d, False),
            ("fusion.w2", d, d, True), ("fusion.b2", 1, d, False),
            ("fusion.w3", d, d, True), ("fusion.b3", 1, d, False),
        ]
    spec += [
        ("classifier.w", cfg.classifier_in_dim, cfg.n_classes, True),
        ("classifier.b", 1, cfg.n_classes, False),
    ]
    return spec


class EncoderParams:
    """All trainable tensors for one configuration, addressable by name."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Parameter]):
        self.cfg = cfg
        self._params = params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def all(self) -> list[Parameter]:
        return list(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def n_entries(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def copy(self) -> "EncoderParams":
        clone = {n: Parameter(n, p.value.copy(), decay=p.decay) for n, p in self._params.items()}
        return EncoderParams(self.cfg, clone)


def _init_value(name: str, rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones((rows, cols))
    tail = name.rsplit(".", 1)[-1]
    if tail.startswith("b") or tail == "beta":
        return np.zeros((rows, cols))
    return rng.normal(0.0, INIT_STD, size=(rows, cols))


def random_params(cfg: ModelConfig, seed: int) -> EncoderParams:
    """N(0, 0.02) weights and embeddings, zero biases/betas, unit gammas."""
    rng = SeededRng(seed).derive("init")
    params = {
        name: Parameter(name, _init_value(name, rows, cols, rng), decay=decay)
        for name, rows, cols, decay in _param_spec(cfg)
    }
    return EncoderParams(cfg, params)


# ---------------------------------------------------------------------------
# Checkpoint container: UTF-8 header + row-major float64 little-endian data,
# with a JSON sidecar holding the ModelConfig.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "cogbert-checkpoint v1"


def _sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".config.json")


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    names = params.names()
    header = [f"{_CKPT_MAGIC} {len(names)}"]
    header += [f"{n} {params[n].shape[0]} {params[n].shape[1]}" for n in names]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for n in names:
            fh.write(params[n].value.astype("<f8").tobytes(order="C"))
    _sidecar_path(path).write_text(
        json.dumps(params.cfg.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> EncoderParams:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise CheckpointError(f"missing config sidecar {sidecar}")
    cfg = ModelConfig.from_dict(json.loads(sidecar.read_text(encoding="utf-8")))

    blob = Path(path).read_bytes()
    try:
        first_nl = blob.index(b"\n")
        magic, count_s = blob[:first_nl].decode("utf-8").rsplit(" ", 1)
        n_tensors = int(count_s)
        if magic != _CKPT_MAGIC:
            raise ValueError
    except ValueError:
        raise CheckpointError(f"{path}: not a checkpoint file") from None

    offset = first_nl + 1
    entries: list[tuple[str, int, int]] = []
    for _ in range(n_tensors):
        nl = blob.index(b"\n", offset)
        name, rows, cols = blob[offset:nl].decode("utf-8").split(" ")
        entries.append((name, int(rows), int(cols)))
        offset = nl + 1

    expected = {name: (rows, cols, decay) for name, rows, cols, decay in _param_spec(cfg)}
    bad = [f"{n} {r}x{c} (want {expected[n][0]}x{expected[n][1]})"
           for n, r, c in entries if n in expected and (r, c) != expected[n][:2]]
    missing = sorted(set(expected) - {n for n, _, _ in entries})
    unknown = sorted({n for n, _, _ in entries} - set(expected))
    if bad or missing or unknown:
        raise CheckpointError(
            f"{path}: tensors do not match config"
            + (f"; wrong shape: {', '.join(bad)}" if bad else "")
            + (f"; missing: {', '.join(missing)}" if missing else "")
            + (f"; unexpected: {', '.join(unknown)}" if unknown else "")
        )

    params: dict[str, Parameter] = {}
    for name, rows, cols in entries:
        nbytes = rows * cols * 8
        value = np.frombuffer(blob[offset:offset + nbytes], dtype="<f8").reshape(rows, cols)
        offset += nbytes
        params[name] = Parameter(name, value.copy(), decay=expected[name][2])
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return EncoderParams(cfg, params)


def init_params(cfg: ModelConfig, source: str = "random", seed: int = 0) -> EncoderParams:
    """source is either "random" (uses seed) or a checkpoint path."""
    if source == "random":
        return random_params(cfg, seed)
    loaded = load_checkpoint(source)
    if loaded.cfg != cfg:
        raise CheckpointError(
            f"checkpoint config {loaded.cfg.to_dict()} does not match requested {cfg.to_dict()}"
        )
    return loaded


# ---------------------------------------------------------------------------
# Batch preparation
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Model-ready arrays for a batch of tokenized sentences."""

    sentence_ids: list[str]
    ids: np.ndarray              # (B, T) int token ids
    masks: np.ndarray            # (B, T) additive attention masks
    eeg_tokens: np.ndarray | None
    eye_tokens: np.ndarray | None
    sent_eeg: np.ndarray | None  # (B, C)
    labels: np.ndarray | None

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def build_batch(
    sentences: list[TokenizedSentence],
    cfg: ModelConfig,
    sentence_ids: list[str] | None = None,
    db: FeatureDb | None = None,
    labels: list[int] | None = None,
) -> Batch:
    """Assemble ids, masks, and per-mode feature arrays for a forward pass.

    CLS, SEP, and PAD positions carry cognitive token 0 (no measurement
    exists for them); content positions take the record's values.
    """
    if cfg.needs_features and db is None:
        raise ValidationError(f"mode {cfg.mode!r} requires a feature database")
    if db is not None and sentence_ids is None:
        raise ValidationError("sentence_ids are required to look up features")

    n, t = len(sentences), cfg.max_len
    ids = np.zeros((n, t), dtype=np.int64)
    masks = np.zeros((n, t), dtype=np.float64)
    eeg = np.zeros((n, t), dtype=np.int64) if cfg.uses_eeg_tokens else None
    eye = np.zeros((n, t), dtype=np.int64) if cfg.uses_eye_tokens else None
    sent = np.zeros((n, cfg.eeg_channels)) if cfg.uses_sentence_eeg else None

    for i, ts in enumerate(sentences):
        if ts.max_len != t:
            raise ValidationError(f"sentence max_len {ts.max_len} != model max_len {t}")
        ids[i] = ts.ids
        masks[i] = ts.base_mask
        if cfg.needs_features:
            rec = db.get(sentence_ids[i])
            wc = ts.word_count
            if len(rec.tokens) < wc:
                raise ValidationError(
                    f"{rec.sentence_id}: record covers {len(rec.tokens)} words, sentence has {wc}"
                )
            content = slice(1, 1 + wc)
            if cfg.mode == "cog_mask":
                masks[i] = cognitive_mask(rec.n_fixations[:wc], ts)
            if eeg is not None:
                eeg[i, content] = rec.eeg_tokens[:wc]
            if eye is not None:
                eye[i, content] = rec.eye_tokens[:wc]
            if sent is not None:
                if rec.sentence_eeg.shape != (cfg.eeg_channels,):
                    raise ValidationError(
                        f"{rec.sentence_id}: sentence EEG has {rec.sentence_eeg.shape[0]} "
                        f"channels, model expects {cfg.eeg_channels}"
                    )
                sent[i] = rec.sentence_eeg

    return Batch(
        sentence_ids=list(sentence_ids) if sentence_ids else [f"b{i}" for i in range(n)],
        ids=ids,
        masks=masks,
        eeg_tokens=eeg,
        eye_tokens=eye,
        sent_eeg=sent,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def embedding_sum(
    params: EncoderParams,
    ids: np.ndarray,
    eeg_tokens: np.ndarray | None = None,
    eye_tokens: np.ndarray | None = None,
    positions: np.ndarray | None = None,
) -> Node:
    """Pre-norm sum of word + position (+ EEG token)(+ eye token) table rows."""
    cfg = params.cfg
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if positions is None:
        positions = np.tile(np.arange(cfg.max_len), len(ids) // cfg.max_len or 1)[: len(ids)]
    if cfg.uses_eeg_tokens != (eeg_tokens is not None):
        raise ValidationError(f"mode {cfg.mode!r}: EEG tokens required iff mode uses them")
    if cfg.uses_eye_tokens != (eye_tokens is not None):
        raise ValidationError(f"mode {cfg.mode!r}: eye tokens required iff mode uses them")

    x = ad.add(
        ad.gather_rows(ad.leaf(params["embed.word"]), ids),
        ad.gather_rows(ad.leaf(params["embed.position"]), positions),
    )
    if eeg_tokens is not None:
        x = ad.add(x, ad.gather_rows(ad.leaf(params["embed.eeg"]),
                                     np.asarray(eeg_tokens, dtype=np.int64).reshape(-1)))
    if eye_tokens is not None:
        x = ad.add(x, ad.gather_rows(ad.leaf(params["embed.eye"]),
                                     np.asarray(eye_tokens, dtype=np.int64).reshape(-1)))
    return x


def embed(
    params: EncoderParams,
    ids: np.ndarray,
    eeg_tokens: np.ndarray | None = None,
    eye_tokens: np.ndarray | None = None,
    positions: np.ndarray | None = None,
    train: bool = False,
    rng: SeededRng | None = None,
) -> Node:
    """Embedding sum, then layer norm, then (training only) dropout."""
    cfg = params.cfg
    x = embedding_sum(params, ids, eeg_tokens, eye_tokens, positions)
    x = ad.layer_norm_rows(x, ad.leaf(params["embed.ln.gamma"]),
                           ad.leaf(params["embed.ln.beta"]), LN_EPS)
    if train and cfg.dropout > 0.0:
        x = ad.dropout(x, cfg.dropout, rng)
    return x


def self_attention(
    x: Node,
    masks: np.ndarray,
    params: EncoderParams,
    layer: int,
    train: bool = False,
    rng: SeededRng | None = None,
) -> tuple[Node, np.ndarray]:
    """One multi-head self-attention block with residual and layer norm.

    masks is (batch, max_len); returns the block output and the detached
    attention probabilities (batch, heads, max_len, max_len).
    """
    cfg = params.cfg
    p = f"layer{layer}."
    q = ad.linear(x, ad.leaf(params[p + "attn.wq"]), ad.leaf(params[p + "attn.bq"]))
    k = ad.linear(x, ad.leaf(params[p + "attn.wk"]), ad.leaf(params[p + "attn.bk"]))
    v = ad.linear(x, ad.leaf(params[p + "attn.wv"]), ad.leaf(params[p + "attn.bv"]))
    ctx, probs = ad.multi_head_attention(q, k, v, masks, cfg.heads)
    ctx = ad.linear(ctx, ad.leaf(params[p + "attn.wo"]), ad.leaf(params[p + "attn.bo"]))
    if train and cfg.dropout > 0.0:
        ctx = ad.dropout(ctx, cfg.dropout, rng)
    out = ad.layer_norm_rows(ad.add(x, ctx), ad.leaf(params[p + "ln1.gamma"]),
                             ad.leaf(params[p + "ln1.beta"]), LN_EPS)
    return out, probs


def _feed_forward(x: Node, params: EncoderParams, layer: int,
                  train: bool, rng: SeededRng | None) -> Node:
    cfg = params.cfg
    p = f"layer{layer}."
    h = ad.gelu(ad.linear(x, ad.leaf(params[p + "ff.w1"]), ad.leaf(params[p + "ff.b1"])))
    h = ad.linear(h, ad.leaf(params[p + "ff.w2"]), ad.leaf(params[p + "ff.b2"]))
    if train and cfg.dropout > 0.0:
        h = ad.dropout(h, cfg.dropout, rng)
    return ad.layer_norm_rows(ad.add(x, h), ad.leaf(params[p + "ln2.gamma"]),
                              ad.leaf(params[p + "ln2.beta"]), LN_EPS)


def _fusion_nn(params: EncoderParams, sent_eeg: np.ndarray) -> Node:
    h = ad.linear(ad.const(sent_eeg), ad.leaf(params["fusion.w1"]), ad.leaf(params["fusion.b1"]))
    h = ad.gelu(h)
    h = ad.gelu(ad.linear(h, ad.leaf(params["fusion.w2"]), ad.leaf(params["fusion.b2"])))
    return ad.linear(h, ad.leaf(params["fusion.w3"]), ad.leaf(params["fusion.b3"]))


def fuse_pooled(pooled: Node, sent_eeg: np.ndarray | None, params: EncoderParams) -> Node:
    """Combine the pooled CLS vector with the sentence EEG vector per mode."""
    cfg = params.cfg
    if not cfg.uses_sentence_eeg:
        return pooled
    if sent_eeg is None:
        raise ValidationError(f"mode {cfg.mode!r} requires sentence EEG vectors")
    sent_eeg = np.asarray(sent_eeg, dtype=np.float64)
    if sent_eeg.ndim == 1:
        sent_eeg = sent_eeg[None, :]
    if sent_eeg.shape != (pooled.value.shape[0], cfg.eeg_channels):
        raise ValidationError(
            f"sentence EEG shape {sent_eeg.shape} does not match "
            f"(batch={pooled.value.shape[0]}, C={cfg.eeg_channels})"
        )
    if cfg.mode == "pool_concat":
        return ad.concat_cols(pooled, ad.const(sent_eeg))
    if cfg.mode == "pool_concat_nn":
        return ad.concat_cols(pooled, _fusion_nn(params, sent_eeg))
    if cfg.mode == "pool_multiply":
        factor = sent_eeg.sum(axis=1, keepdims=True) / cfg.d_model
        return ad.mul_const(pooled, factor)
    return ad.add(pooled, _fusion_nn(params, sent_eeg))  # pool_add_nn


def classify(fused: Node, params: EncoderParams) -> Node:
    cfg = params.cfg
    if fused.value.shape[1] != cfg.classifier_in_dim:
        raise ValidationError(
            f"classifier expects {cfg.classifier_in_dim} inputs, got {fused.value.shape[1]}"
        )
    return ad.linear(fused, ad.leaf(params["classifier.w"]), ad.leaf(params["classifier.b"]))


@dataclass
class ForwardResult:
    hidden: np.ndarray          # (B, T, d_model) final hidden states, detached
    pooled: Node                # (B, d_model) CLS rows
    logits: Node                # (B, n_classes)
    traces: list[AttentionTrace]

    def predictions(self) -> np.ndarray:
        """Argmax per row; ties resolve to the lowest class index."""
        return self.logits.value.argmax(axis=1)


def encoder_forward(
    params: EncoderParams,
    batch: Batch,
    train: bool = False,
    rng: SeededRng | None = None,
) -> ForwardResult:
    """Run the stacked encoder and classification head over a batch."""
    cfg = params.cfg
    if train and cfg.dropout > 0.0 and rng is None:
        raise ValidationError("training forward with dropout needs an rng")
    n, t = batch.ids.shape

    x = embed(
        params,
        batch.ids.reshape(-1),
        eeg_tokens=None if batch.eeg_tokens is None else batch.eeg_tokens.reshape(-1),
        eye_tokens=None if batch.eye_tokens is None else batch.eye_tokens.reshape(-1),
        positions=np.tile(np.arange(t), n),
        train=train,
        rng=rng,
    )
    layer_probs = []
    for layer in range(cfg.layers):
        x, probs = self_attention(x, batch.masks, params, layer, train, rng)
        x = _feed_forward(x, params, layer, train, rng)
        layer_probs.append(probs)

    pooled = ad.select_rows(x, np.arange(n) * t)  # CLS position of each sentence
    fused = fuse_pooled(pooled, batch.sent_eeg, params)
    logits = classify(fused, params)

    stacked = np.stack(layer_probs, axis=0)  # (L, B, H, T, T)
    traces = [AttentionTrace(stacked[:, i]) for i in range(n)]
    return ForwardResult(
        hidden=x.value.reshape(n, t, cfg.d_model),
        pooled=pooled,
        logits=logits,
        traces=traces,
    )
