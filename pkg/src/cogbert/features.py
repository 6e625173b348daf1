"""Cognitive feature derivation, storage, and synthesis.

Per-word eye-tracking measurements become "eye tokens" (0-100 integers,
scaled per sentence) and per-word EEG band power becomes "EEG tokens"
(0-100 integers, scaled over the corpus). Per-sentence EEG band vectors
collapse to a single channel vector. Unfixated words always map to token 0
and are the words a cognitive attention mask suppresses.

A FeatureDb keyed by sentence id is the model's lookup table at train and
eval time; its JSON-lines form is the canonical interchange format. The
word-EEG lexicon approximates sentence EEG for corpora without recordings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FeatureLookupError, ValidationError
from .numerics.rng import SeededRng
from .tokenizer import MASK_KEEP, MASK_SUPPRESS, TokenizedSentence

FRPS = ("ffd", "trt", "gd", "gpt")
BANDS = ("t1", "t2", "a1", "a2", "b1", "b2", "g1", "g2")
N_EEG_VECTORS = len(FRPS) * len(BANDS)  # 32 channel vectors per fixated word
TOKEN_SCALE = 100  # tokens index an embedding table with rows 0..100


@dataclass
class WordFixation:
    """Raw per-word eye-tracking measures, durations in milliseconds.

    sfd is carried for completeness but feeds no downstream formula.
    """

    n_fixations: int
    ffd: float = 0.0
    trt: float = 0.0
    gd: float = 0.0
    gpt: float = 0.0
    sfd: float = 0.0

    def __post_init__(self):
        durations = (self.ffd, self.trt, self.gd, self.gpt, self.sfd)
        if self.n_fixations < 0 or any(d < 0 for d in durations):
            raise ValidationError(f"negative fixation measurement: {self}")
        if self.n_fixations == 0 and any(d != 0 for d in durations):
            raise ValidationError("unfixated word must have zero durations")


@dataclass
class WordEEG:
    """Per-word EEG: one channel vector per (fixation event, frequency band).

    channels has shape (32, C): 4 fixation events x 8 bands, event-major.
    """

    channels: np.ndarray

    def __post_init__(self):
        try:
            self.channels = np.asarray(self.channels, dtype=np.float64)
        except ValueError as exc:
            raise ValidationError(f"inconsistent word EEG vector lengths: {exc}") from exc
        if self.channels.ndim != 2 or self.channels.shape[0] != N_EEG_VECTORS:
            raise ValidationError(
                f"word EEG must be ({N_EEG_VECTORS}, C), got {self.channels.shape}"
            )

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]

    def occurrence_vector(self) -> np.ndarray:
        """Column-wise mean over the 32 event/band vectors -> one C-vector."""
        return self.channels.mean(axis=0)


@dataclass
class SentenceMeasurement:
    """One sentence's raw recordings: the input side of feature derivation."""

    sentence_id: str
    words: list[str]
    label: int
    fixations: list[WordFixation]
    word_eeg: list[WordEEG | None]
    sentence_bands: np.ndarray  # (8, C), one vector per frequency band

    def __post_init__(self):
        n = len(self.words)
        if len(self.fixations) != n or len(self.word_eeg) != n:
            raise ValidationError(
                f"{self.sentence_id}: words/fixations/eeg lengths differ "
                f"({n}/{len(self.fixations)}/{len(self.word_eeg)})"
            )
        self.sentence_bands = np.asarray(self.sentence_bands, dtype=np.float64)
        if self.sentence_bands.ndim != 2 or self.sentence_bands.shape[0] != len(BANDS):
            raise ValidationError(f"sentence bands must be (8, C), got {self.sentence_bands.shape}")
        for fix, eeg in zip(self.fixations, self.word_eeg):
            if (fix.n_fixations == 0) != (eeg is None):
                raise ValidationError(
                    f"{self.sentence_id}: word EEG present iff the word was fixated"
                )


@dataclass
class CognitiveRecord:
    """Derived per-sentence features, aligned 1:1 with the sentence's words."""

    sentence_id: str
    tokens: list[str]
    label: int
    n_fixations: np.ndarray
    eye_tokens: np.ndarray
    eeg_tokens: np.ndarray
    sentence_eeg: np.ndarray

    def __post_init__(self):
        self.n_fixations = np.asarray(self.n_fixations, dtype=np.int64)
        self.eye_tokens = np.asarray(self.eye_tokens, dtype=np.int64)
        self.eeg_tokens = np.asarray(self.eeg_tokens, dtype=np.int64)
        self.sentence_eeg = np.asarray(self.sentence_eeg, dtype=np.float64)
        n = len(self.tokens)
        for name, arr in (("n_fixations", self.n_fixations),
                          ("eye_tokens", self.eye_tokens),
                          ("eeg_tokens", self.eeg_tokens)):
            if len(arr) != n:
                raise ValidationError(f"{self.sentence_id}: {name} not aligned with tokens")


class FeatureDb:
    """Immutable sentence-id -> CognitiveRecord map with ordered batch lookup."""

    def __init__(self, records: list[CognitiveRecord] | dict[str, CognitiveRecord]):
        if isinstance(records, dict):
            self._records = dict(records)
        else:
            self._records = {r.sentence_id: r for r in records}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, sentence_id: str) -> bool:
        return sentence_id in self._records

    def ids(self) -> list[str]:
        return list(self._records)

    def get(self, sentence_id: str) -> CognitiveRecord:
        try:
            return self._records[sentence_id]
        except KeyError:
            raise FeatureLookupError(f"no cognitive record for sentence id {sentence_id!r}") from None

    def lookup_batch(self, sentence_ids: list[str]) -> list[CognitiveRecord]:
        """Records in the exact order requested."""
        return [self.get(sid) for sid in sentence_ids]

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self._records.values():
                fh.write(json.dumps({
                    "id": rec.sentence_id,
                    "tokens": rec.tokens,
                    "label": int(rec.label),
                    "n_fixations": rec.n_fixations.tolist(),
                    "eye_tokens": rec.eye_tokens.tolist(),
                    "eeg_tokens": rec.eeg_tokens.tolist(),
                    "sentence_eeg": rec.sentence_eeg.tolist(),
                }, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "FeatureDb":
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            obj = json.loads(line)
            records.append(CognitiveRecord(
                sentence_id=obj["id"],
                tokens=obj["tokens"],
                label=int(obj["label"]),
                n_fixations=obj["n_fixations"],
                eye_tokens=obj["eye_tokens"],
                eeg_tokens=obj["eeg_tokens"],
                sentence_eeg=obj["sentence_eeg"],
            ))
        return cls(records)


# ---------------------------------------------------------------------------
# Feature formulas
# ---------------------------------------------------------------------------

def eye_token_raw(fix: WordFixation) -> float:
    """nFixations * (FFD + TRT + GD + GPT); zero for unfixated words."""
    return fix.n_fixations * (fix.ffd + fix.trt + fix.gd + fix.gpt)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def scale_eye_tokens(raw) -> np.ndarray:
    """Per-sentence scaling of raw eye values to integers 0..100.

    The sentence maximum maps to 100; an all-zero sentence stays all zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if (raw < 0).any():
        raise ValidationError("raw eye token values must be non-negative")
    peak = raw.max(initial=0.0)
    if peak == 0.0:
        return np.zeros(raw.shape, dtype=np.int64)
    return _round_half_up(TOKEN_SCALE * raw / peak)


def eeg_token_raw(eeg: WordEEG | None) -> float:
    """Grand mean of the word's averaged channel vector; zero when unfixated."""
    if eeg is None:
        return 0.0
    return float(eeg.occurrence_vector().mean())


def scale_eeg_tokens(raw, fixated=None) -> np.ndarray:
    """Corpus-level min-max scaling of raw EEG means to integers 0..100.

    Unfixated words keep token 0 regardless of scaling. If any fixated raw
    value is negative the fixated values are first shifted so their minimum
    is zero, then divided by their maximum (so the corpus maximum maps to
    100 and an all-equal corpus maps to all 100).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if fixated is None:
        fixated = np.ones(raw.shape, dtype=bool)
    else:
        fixated = np.asarray(fixated, dtype=bool)
    out = np.zeros(raw.shape, dtype=np.int64)
    if not fixated.any():
        return out
    vals = raw[fixated]
    lo = vals.min()
    if lo < 0:
        vals = vals - lo
    hi = vals.max()
    if hi > 0:
        out[fixated] = _round_half_up(TOKEN_SCALE * vals / hi)
    return out


def sentence_eeg(bands) -> np.ndarray:
    """Element-wise mean of the eight per-band channel vectors."""
    bands = np.asarray(bands, dtype=np.float64)
    if bands.ndim != 2 or bands.shape[0] != len(BANDS):
        raise ValidationError(f"expected 8 equal-length band vectors, got shape {bands.shape}")
    return bands.mean(axis=0)


def cognitive_mask(n_fixations, layout: TokenizedSentence) -> np.ndarray:
    """Additive attention mask from fixation counts.

    Keeps (-0) tokens fixated more than once plus CLS and SEP; suppresses
    (-10000) everything else, including once-fixated words and PAD.
    """
    n_fixations = np.asarray(n_fixations, dtype=np.int64)
    if len(n_fixations) != layout.word_count:
        raise ValidationError(
            f"fixation counts ({len(n_fixations)}) not aligned with "
            f"{layout.word_count} content tokens"
        )
    mask = np.full(layout.max_len, MASK_SUPPRESS, dtype=np.float64)
    mask[0] = MASK_KEEP                      # CLS carries the classification signal
    mask[layout.word_count + 1] = MASK_KEEP  # SEP stays attended, as in the base mask
    for pos in layout.content_positions():
        if n_fixations[pos - 1] > 1:
            mask[pos] = MASK_KEEP
    return mask


def derive_records(measurements: list[SentenceMeasurement]) -> FeatureDb:
    """Full feature derivation: eye tokens (per-sentence scale), EEG tokens
    (corpus-level scale), and sentence EEG vectors."""
    raw_eeg = []
    fixated = []
    for m in measurements:
        for fix, eeg in zip(m.fixations, m.word_eeg):
            raw_eeg.append(eeg_token_raw(eeg))
            fixated.append(fix.n_fixations > 0)
    all_eeg_tokens = scale_eeg_tokens(raw_eeg, fixated)

    records = []
    offset = 0
    for m in measurements:
        n = len(m.words)
        raw_eye = [eye_token_raw(f) for f in m.fixations]
        records.append(CognitiveRecord(
            sentence_id=m.sentence_id,
            tokens=list(m.words),
            label=m.label,
            n_fixations=[f.n_fixations for f in m.fixations],
            eye_tokens=scale_eye_tokens(raw_eye),
            eeg_tokens=all_eeg_tokens[offset:offset + n],
            sentence_eeg=sentence_eeg(m.sentence_bands),
        ))
        offset += n
    return FeatureDb(records)


# ---------------------------------------------------------------------------
# Word-EEG lexicon
# ---------------------------------------------------------------------------

@dataclass
class EEGLexicon:
    """Per-word mean EEG vector over all fixated occurrences in a corpus."""

    vectors: dict[str, np.ndarray]
    counts: dict[str, int]

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in sorted(self.vectors):
                fh.write(json.dumps({
                    "word": word,
                    "count": int(self.counts[word]),
                    "vector": self.vectors[word].tolist(),
                }, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "EEGLexicon":
        vectors: dict[str, np.ndarray] = {}
        counts: dict[str, int] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            obj = json.loads(line)
            vectors[obj["word"]] = np.asarray(obj["vector"], dtype=np.float64)
            counts[obj["word"]] = int(obj["count"])
        return cls(vectors, counts)


def build_lexicon(measurements: list[SentenceMeasurement]) -> EEGLexicon:
    """Average each word's per-occurrence EEG vectors; unfixated occurrences
    contribute nothing and never-fixated words are excluded."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for m in measurements:
        for word, eeg in zip(m.words, m.word_eeg):
            if eeg is None:
                continue
            vec = eeg.occurrence_vector()
            if word in sums:
                sums[word] = sums[word] + vec
                counts[word] += 1
            else:
                sums[word] = vec.copy()
                counts[word] = 1
    vectors = {w: sums[w] / counts[w] for w in sums}
    return EEGLexicon(vectors, counts)


def lexicon_sentence_eeg(words: list[str], lexicon: EEGLexicon, n_channels: int) -> tuple[np.ndarray, float]:
    """Mean lexicon vector over covered words, plus the coverage fraction.

    Returns a zero vector with coverage 0.0 when no word is in the lexicon,
    so benchmarking an external corpus never aborts.
    """
    hits = [lexicon.vectors[w] for w in words if w in lexicon]
    if not hits:
        return np.zeros(n_channels, dtype=np.float64), 0.0
    coverage = len(hits) / len(words) if words else 0.0
    return np.mean(hits, axis=0), coverage


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Planted-keyword corpus generator settings.

    Each sentence's label is decidable from its planted keywords, keywords
    are fixated (n_fixations >= 2) with long durations, and fillers are
    mostly unfixated. With distractors > 0, every sentence additionally
    contains unfixated keywords of one wrong class, so word identity alone
    becomes misleading while fixation-aware signals stay clean.
    """

    n_classes: int = 8
    n_sentences: int = 400
    keywords_per_class: int = 5
    filler_vocab: int = 160
    min_words: int = 8
    max_words: int = 14
    min_keywords: int = 1
    max_keywords: int = 3
    filler_fix_prob: float = 0.35
    eeg_channels: int = 8
    distractors: int = 0
    keyword_eeg_mean: float = 3.0
    filler_eeg_mean: float = 1.0
    eeg_noise: float = 0.3
    class_tilt: float = 2.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.n_sentences < self.n_classes:
            raise ValidationError("need at least one sentence per class")
        if not 1 <= self.min_keywords <= self.max_keywords:
            raise ValidationError("keyword count range must satisfy 1 <= min <= max")
        if self.min_words < self.max_keywords + self.distractors:
            raise ValidationError("sentences too short for keywords plus distractors")
        if self.min_words > self.max_words:
            raise ValidationError("min_words exceeds max_words")
        if not 0.0 <= self.filler_fix_prob <= 1.0:
            raise ValidationError("filler_fix_prob must lie in [0, 1]")
        if self.eeg_channels < 1 or self.keywords_per_class < 1 or self.filler_vocab < 1:
            raise ValidationError("vocabulary and channel counts must be positive")

    def keywords(self, label: int) -> list[str]:
        return [f"kw{label}x{i}" for i in range(self.keywords_per_class)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _class_profile(cfg: SynthConfig, label: int, base: float) -> np.ndarray:
    profile = np.full(cfg.eeg_channels, base, dtype=np.float64)
    profile[label % cfg.eeg_channels] += cfg.class_tilt
    return profile


def _word_eeg(cfg: SynthConfig, rng: SeededRng, profile: np.ndarray) -> WordEEG:
    return WordEEG(rng.normal(profile, cfg.eeg_noise, size=(N_EEG_VECTORS, cfg.eeg_channels)))


def synth_generate(cfg: SynthConfig, seed: int) -> tuple[list[SentenceMeasurement], FeatureDb, list[int]]:
    """Deterministic corpus + derived feature database + per-sentence labels."""
    master = SeededRng(seed).derive("synth")
    measurements: list[SentenceMeasurement] = []
    labels: list[int] = []

    for i in range(cfg.n_sentences):
        label = i % cfg.n_classes
        rng = master.derive(f"sentence{i}")
        n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        n_kw = min(int(rng.integers(cfg.min_keywords, cfg.max_keywords + 1)), n_words)
        n_dis = min(cfg.distractors, n_words - n_kw)

        order = rng.permutation(n_words)
        kw_pos = set(order[:n_kw].tolist())
        dis_pos = set(order[n_kw:n_kw + n_dis].tolist())
        wrong = int((label + 1 + rng.integers(cfg.n_classes - 1)) % cfg.n_classes)

        words: list[str] = []
        fixations: list[WordFixation] = []
        word_eeg: list[WordEEG | None] = []
        kw_profile = _class_profile(cfg, label, cfg.keyword_eeg_mean)
        filler_profile = np.full(cfg.eeg_channels, cfg.filler_eeg_mean)

        for pos in range(n_words):
            if pos in kw_pos:
                words.append(str(rng.choice(cfg.keywords(label))))
                n_fix = int(rng.integers(2, 6))
                fixations.append(WordFixation(
                    n_fixations=n_fix,
                    ffd=float(rng.uniform(80, 200)),
                    trt=float(rng.uniform(200, 600)),
                    gd=float(rng.uniform(80, 300)),
                    gpt=float(rng.uniform(100, 400)),
                ))
                word_eeg.append(_word_eeg(cfg, rng, kw_profile))
            elif pos in dis_pos:
                words.append(str(rng.choice(cfg.keywords(wrong))))
                fixations.append(WordFixation(n_fixations=0))
                word_eeg.append(None)
            else:
                words.append(f"f{int(rng.integers(cfg.filler_vocab))}")
                if rng.random() < cfg.filler_fix_prob:
                    n_fix = int(rng.integers(1, 3))
                    ffd = float(rng.uniform(50, 150))
                    fixations.append(WordFixation(
                        n_fixations=n_fix,
                        ffd=ffd,
                        trt=float(rng.uniform(50, 200)),
                        gd=float(rng.uniform(50, 150)),
                        gpt=float(rng.uniform(50, 200)),
                        sfd=ffd if n_fix == 1 else 0.0,
                    ))
                    word_eeg.append(_word_eeg(cfg, rng, filler_profile))
                else:
                    fixations.append(WordFixation(n_fixations=0))
                    word_eeg.append(None)

        measurements.append(SentenceMeasurement(
            sentence_id=f"s{i:04d}",
            words=words,
            label=label,
            fixations=fixations,
            word_eeg=word_eeg,
            sentence_bands=rng.normal(
                _class_profile(cfg, label, cfg.filler_eeg_mean),
                cfg.eeg_noise,
                size=(len(BANDS), cfg.eeg_channels),
            ),
        ))
        labels.append(label)

    return measurements, derive_records(measurements), labels


# ---------------------------------------------------------------------------
# Raw-corpus serialization (input side of the pipeline)
# ---------------------------------------------------------------------------

def save_measurements(measurements: list[SentenceMeasurement], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in measurements:
            fh.write(json.dumps({
                "id": m.sentence_id,
                "words": m.words,
                "label": int(m.label),
                "fixations": [
                    {"n": f.n_fixations, "ffd": f.ffd, "trt": f.trt,
                     "gd": f.gd, "gpt": f.gpt, "sfd": f.sfd}
                    for f in m.fixations
                ],
                "word_eeg": [None if e is None else e.channels.tolist() for e in m.word_eeg],
                "sentence_bands": m.sentence_bands.tolist(),
            }, sort_keys=True) + "\n")


def load_measurements(path: str | Path) -> list[SentenceMeasurement]:
    measurements = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        obj = json.loads(line)
        measurements.append(SentenceMeasurement(
            sentence_id=obj["id"],
            words=obj["words"],
            label=int(obj["label"]),
            fixations=[
                WordFixation(n_fixations=f["n"], ffd=f["ffd"], trt=f["trt"],
                             gd=f["gd"], gpt=f["gpt"], sfd=f["sfd"])
                for f in obj["fixations"]
            ],
            word_eeg=[None if e is None else WordEEG(np.asarray(e)) for e in obj["word_eeg"]],
            sentence_bands=np.asarray(obj["sentence_bands"]),
        ))
    return measurements
