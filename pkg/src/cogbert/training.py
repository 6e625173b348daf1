"""Fine-tuning loop with Adam, linear learning-rate decay, repeated runs,
and macro precision/recall/F1 metrics.

Every run is bit-reproducible from its seed: parameter init, batch order,
and dropout each draw from independently derived streams, so repeated runs
with the same master seed replay exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .features import FeatureDb
from .model import Batch, EncoderParams, ModelConfig, build_batch, encoder_forward, init_params
from .numerics import autodiff as ad
from .numerics.rng import SeededRng
from .tokenizer import TokenizedSentence, Vocab, encode

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Robustness protocol: random init, fewer repeats, shorter training.
ROBUSTNESS_REPEATS = 5
ROBUSTNESS_EPOCHS = 10


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    lr: float = 5e-5
    seed: int = 0
    repeats: int = 10
    weight_decay: float = 0.01
    init_source: str = "random"  # "random" or a checkpoint path

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.repeats < 1:
            raise ValidationError("epochs, batch_size, and repeats must be >= 1")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class Example:
    """A tokenized sentence ready for the model, with its id and label."""

    sentence_id: str
    sentence: TokenizedSentence
    label: int
    words: list[str]


def make_examples(db: FeatureDb, vocab: Vocab, max_len: int) -> list[Example]:
    """Encode every record in the feature database."""
    return [
        Example(rec.sentence_id, encode(rec.tokens, vocab, max_len), rec.label, list(rec.tokens))
        for rec in (db.get(sid) for sid in db.ids())
    ]


def split(items: Sequence, ratio: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled split; floor(ratio * n) items go to train."""
    if len(items) < 2:
        raise ValidationError("need at least 2 items to split")
    if not 0.0 < ratio < 1.0:
        raise ValidationError("split ratio must lie strictly in (0, 1)")
    perm = SeededRng(seed).derive("split").permutation(len(items))
    n_train = math.floor(ratio * len(items))
    train_items = [items[i] for i in perm[:n_train]]
    test_items = [items[i] for i in perm[n_train:]]
    return train_items, test_items


def lr_at(step: int, total_steps: int, lr0: float) -> float:
    """Linear decay from lr0 at step 0 to exactly 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps)


class Adam:
    """Adam with decoupled weight decay (applied only to decay-flagged params)."""

    def __init__(self, params: EncoderParams, weight_decay: float = 0.01):
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {p.name: np.zeros_like(p.value) for p in params.all()}
        self._v = {p.name: np.zeros_like(p.value) for p in params.all()}

    def step(self, params: EncoderParams, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for p in params.all():
            m = self._m[p.name]
            v = self._v[p.name]
            m += (1.0 - ADAM_BETA1) * (p.grad - m)
            v += (1.0 - ADAM_BETA2) * (p.grad * p.grad - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            p.value -= lr * update
            if p.decay and self.weight_decay:
                p.value -= lr * self.weight_decay * p.value


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    """One-vs-rest confusion counts per class plus the macro-averaged scores."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def from_predictions(cls, truth, predicted, n_classes: int) -> "Metrics":
        truth = np.asarray(truth, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if truth.shape != predicted.shape:
            raise ValidationError("truth and predictions must have equal length")
        tp = np.zeros(n_classes, dtype=np.int64)
        fp = np.zeros(n_classes, dtype=np.int64)
        fn = np.zeros(n_classes, dtype=np.int64)
        for k in range(n_classes):
            tp[k] = int(((predicted == k) & (truth == k)).sum())
            fp[k] = int(((predicted == k) & (truth != k)).sum())
            fn[k] = int(((predicted != k) & (truth == k)).sum())
        tn = len(truth) - tp - fp - fn
        return cls(tp, fp, fn, tn)

    @staticmethod
    def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.zeros(len(num), dtype=np.float64)
        nz = den > 0
        out[nz] = num[nz] / den[nz]
        return out

    @property
    def per_class_precision(self) -> np.ndarray:
        return self._safe_div(self.tp, self.tp + self.fp)

    @property
    def per_class_recall(self) -> np.ndarray:
        return self._safe_div(self.tp, self.tp + self.fn)

    @property
    def per_class_f1(self) -> np.ndarray:
        p = self.per_class_precision
        r = self.per_class_recall
        return self._safe_div(2.0 * p * r, p + r)

    @property
    def precision(self) -> float:
        return float(self.per_class_precision.mean())

    @property
    def recall(self) -> float:
        return float(self.per_class_recall.mean())

    @property
    def f1(self) -> float:
        return float(self.per_class_f1.mean())

    @property
    def accuracy(self) -> float:
        total = int(self.tp.sum() + self.fn.sum())  # every sample counted once
        return float(self.tp.sum() / total) if total else 0.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "tp": self.tp.tolist(),
            "fp": self.fp.tolist(),
            "fn": self.fn.tolist(),
            "tn": self.tn.tolist(),
        }


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def _batches(examples: list[Example], order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield [examples[i] for i in order[start:start + size]]


def _to_batch(chunk: list[Example], cfg: ModelConfig, db: FeatureDb | None) -> Batch:
    return build_batch(
        [ex.sentence for ex in chunk],
        cfg,
        sentence_ids=[ex.sentence_id for ex in chunk],
        db=db,
        labels=[ex.label for ex in chunk],
    )


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    examples: list[Example],
    db: FeatureDb | None,
    seed: int | None = None,
) -> tuple[EncoderParams, list[float]]:
    """One fine-tuning run. Returns trained parameters and per-epoch mean loss."""
    if not examples:
        raise ValidationError("cannot train on an empty dataset")
    run_seed = train_cfg.seed if seed is None else seed
    master = SeededRng(run_seed)
    params = init_params(model_cfg, train_cfg.init_source, seed=master.derive("init").seed)
    order_rng = master.derive("batch-order")
    dropout_rng = master.derive("dropout")
    optimizer = Adam(params, train_cfg.weight_decay)

    n_batches = math.ceil(len(examples) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * n_batches
    step = 0
    epoch_losses: list[float] = []
    for _ in range(train_cfg.epochs):
        order = order_rng.permutation(len(examples))
        losses = []
        for chunk in _batches(examples, order, train_cfg.batch_size):
            batch = _to_batch(chunk, model_cfg, db)
            params.zero_grads()
            result = encoder_forward(params, batch, train=True, rng=dropout_rng)
            loss = ad.cross_entropy_mean(result.logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"training diverged: non-finite loss at step {step}")
            ad.backward(loss)
            optimizer.step(params, lr_at(step, total_steps, train_cfg.lr))
            step += 1
            losses.append(value)
        epoch_losses.append(float(np.mean(losses)))
    return params, epoch_losses


def evaluate(
    params: EncoderParams,
    examples: list[Example],
    db: FeatureDb | None,
    batch_size: int = 32,
) -> Metrics:
    """Macro metrics of argmax predictions over a test set."""
    if not examples:
        raise ValidationError("cannot evaluate on an empty test set")
    cfg = params.cfg
    predictions = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        result = encoder_forward(params, _to_batch(chunk, cfg, db), train=False)
        predictions.extend(result.predictions().tolist())
    truth = [ex.label for ex in examples]
    return Metrics.from_predictions(truth, predictions, cfg.n_classes)


@dataclass
class RunResult:
    seed: int
    metrics: Metrics
    loss_history: list[float]


@dataclass
class RunReport:
    """Aggregation of n independent train+evaluate cycles.

    wall_clock_s is informational only and deliberately excluded from the
    serialized form so reports stay byte-reproducible across reruns.
    """

    model_config: dict
    train_config: dict
    runs: list[RunResult]
    wall_clock_s: float = 0.0

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(r.metrics, attr) for r in self.runs]))

    @property
    def precision(self) -> float:
        return self._mean("precision")

    @property
    def recall(self) -> float:
        return self._mean("recall")

    @property
    def f1(self) -> float:
        return self._mean("f1")

    @property
    def accuracy(self) -> float:
        return self._mean("accuracy")

    @property
    def f1_std(self) -> float:
        """Sample standard deviation of per-run F1 (0 for a single run)."""
        values = [r.metrics.f1 for r in self.runs]
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "model_config": self.model_config,
            "train_config": self.train_config,
            "runs": [
                {
                    "seed": r.seed,
                    "metrics": r.metrics.to_dict(),
                    "loss_history": r.loss_history,
                }
                for r in self.runs
            ],
            "mean": {
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "accuracy": self.accuracy,
            },
            "f1_std": self.f1_std,
        }


def repeat_runs(
    n: int,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_examples: list[Example],
    test_examples: list[Example],
    db: FeatureDb | None,
) -> tuple[RunReport, list[EncoderParams]]:
    """n independent train+evaluate cycles with seeds derived from the master.

    Returns the report and the trained parameters of each run (callers keep
    the best run's checkpoint for the explanation pipeline).
    """
    if n < 1:
        raise ValidationError("need at least one run")
    master = SeededRng(train_cfg.seed)
    started = time.perf_counter()
    runs: list[RunResult] = []
    all_params: list[EncoderParams] = []
    for i in range(n):
        run_seed = master.derive(f"run{i}").seed
        params, losses = train(train_cfg, model_cfg, train_examples, db, seed=run_seed)
        metrics = evaluate(params, test_examples, db)
        runs.append(RunResult(seed=run_seed, metrics=metrics, loss_history=losses))
        all_params.append(params)
    report = RunReport(
        model_config=model_cfg.to_dict(),
        train_config=train_cfg.to_dict(),
        runs=runs,
        wall_clock_s=time.perf_counter() - started,
    )
    return report, all_params


def best_run_index(report: RunReport) -> int:
    """Highest accuracy, ties to the earliest run."""
    accs = [r.metrics.accuracy for r in report.runs]
    return int(np.argmax(accs))
