"""Hybrid flow classifier: per-packet CNN, packet-sequence LSTM, flow DNN.

Each of the first two packets is embedded by a small convolutional net over
its byte image concatenated with a dense encoding of its statistics vector.
The two packet embeddings run through an LSTM whose final hidden state is
joined with a dense encoding of the flow statistics, and a three-layer head
maps that to benign/malicious logits.

Training is minibatch Adam on softmax cross entropy with stratified k-fold
validation. Generated adversarial flows participate in the training folds
only; validation folds stay purely real so the fold metrics mean something.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .errors import CheckpointError, Diverged, InsufficientData
from .evaluation import ConfusionCounts, RunMetrics, confusion, run_metrics
from .features import (
    FLOW_STAT_DIM,
    IMAGE_SHAPE,
    PACKET_SLOTS,
    PKT_STAT_DIM,
    Sample,
    StatScaler,
    featurize_flows,
    samples_to_arrays,
)
from .http.message import Flow, Label
from .nn import ops
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import adam_init, adam_update
from .nn.tensor import Tensor, concat, getitem, grad, no_grad, reshape, softmax


@dataclass(frozen=True)
class Architecture:
    """Widths and shapes; the defaults are the real model, tests shrink it."""

    image_shape: tuple[int, int] = IMAGE_SHAPE
    conv_kernels: int = 2
    conv_size: tuple[int, int] = (2, 8)
    pool_size: int = 2
    pkt_stat_dim: int = PKT_STAT_DIM
    p_dnn_width: int = 16
    lstm_hidden: int = 16
    flow_stat_dim: int = FLOW_STAT_DIM
    f_dnn_width: int = 16
    head_widths: tuple[int, ...] = (10, 8)
    n_classes: int = 2
    packet_slots: int = PACKET_SLOTS

    def conv_out(self) -> tuple[int, int]:
        return (
            self.image_shape[0] - self.conv_size[0] + 1,
            self.image_shape[1] - self.conv_size[1] + 1,
        )

    def cropped(self) -> tuple[int, int]:
        oh, ow = self.conv_out()
        p = self.pool_size
        return (oh // p) * p, (ow // p) * p

    def pooled(self) -> tuple[int, int]:
        ch, cw = self.cropped()
        return ch // self.pool_size, cw // self.pool_size

    def flat_width(self) -> int:
        ph, pw = self.pooled()
        return self.conv_kernels * ph * pw

    def embed_width(self) -> int:
        return self.flat_width() + self.p_dnn_width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        for key in ("image_shape", "conv_size", "head_widths"):
            d[key] = tuple(d[key])
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


DEFAULT_ARCHITECTURE = Architecture()


def init_model(arch: Architecture = DEFAULT_ARCHITECTURE, seed: int = 0) -> dict[str, Tensor]:
    """Fresh parameter dict; deterministic for a given (arch, seed)."""
    rng = np.random.default_rng([seed, 11])
    params: dict[str, Tensor] = {}
    params["conv_w"], params["conv_b"] = ops.conv_init(
        rng, arch.conv_kernels, 1, *arch.conv_size
    )
    params["pdnn_w"], params["pdnn_b"] = ops.dense_init(rng, arch.p_dnn_width, arch.pkt_stat_dim)
    gate_in = arch.lstm_hidden + arch.embed_width()
    for key in ops.LSTM_PARAM_KEYS:
        if key.startswith("w"):
            params[f"lstm_{key}"] = ops.glorot_uniform(
                rng, (arch.lstm_hidden, gate_in), gate_in, arch.lstm_hidden
            )
        else:
            params[f"lstm_{key}"] = Tensor(np.zeros(arch.lstm_hidden), requires_grad=True)
    params["fdnn_w"], params["fdnn_b"] = ops.dense_init(rng, arch.f_dnn_width, arch.flow_stat_dim)
    prev = arch.lstm_hidden + arch.f_dnn_width
    for i, width in enumerate(arch.head_widths):
        params[f"head{i}_w"], params[f"head{i}_b"] = ops.dense_init(rng, width, prev)
        prev = width
    params["out_w"], params["out_b"] = ops.dense_init(rng, arch.n_classes, prev)
    return params


def parameter_count(params: dict[str, Tensor]) -> int:
    return int(sum(p.data.size for p in params.values()))


def forward_batch(
    params: dict[str, Tensor],
    arch: Architecture,
    images: Tensor,
    pkt: Tensor,
    flow: Tensor,
) -> tuple[Tensor, Tensor]:
    """(N, slots, H, W) images + (N, slots, 41) pkt + (N, 64) flow -> (logits, probs)."""
    n, slots = images.shape[0], images.shape[1]
    h_img, w_img = arch.image_shape
    x = reshape(images, (n * slots, 1, h_img, w_img))
    y = ops.relu(ops.conv2d_batch(x, params["conv_w"], params["conv_b"]))
    oh, ow = arch.conv_out()
    ch, cw = arch.cropped()
    if (ch, cw) != (oh, ow):
        y = getitem(y, (slice(None), slice(None), slice(0, ch), slice(0, cw)))
    y = ops.maxpool2d_batch(y, arch.pool_size)
    y = reshape(y, (n * slots, arch.flat_width()))
    p = ops.relu(ops.dense_batch(reshape(pkt, (n * slots, arch.pkt_stat_dim)),
                                 params["pdnn_w"], params["pdnn_b"]))
    emb = reshape(concat([y, p], axis=1), (n, slots, arch.embed_width()))

    lstm_params = {k: params[f"lstm_{k}"] for k in ops.LSTM_PARAM_KEYS}
    h = Tensor(np.zeros((n, arch.lstm_hidden)))
    c = Tensor(np.zeros((n, arch.lstm_hidden)))
    for t in range(slots):
        h, c = ops.lstm_step(getitem(emb, (slice(None), t)), h, c, lstm_params)

    f = ops.relu(ops.dense_batch(flow, params["fdnn_w"], params["fdnn_b"]))
    z = concat([h, f], axis=1)
    for i in range(len(arch.head_widths)):
        z = ops.relu(ops.dense_batch(z, params[f"head{i}_w"], params[f"head{i}_b"]))
    logits = ops.dense_batch(z, params["out_w"], params["out_b"])
    return logits, softmax(logits, axis=-1)


def forward(
    params: dict[str, Tensor], arch: Architecture, sample: Sample
) -> np.ndarray:
    """Class probabilities [P(benign), P(malicious)] for one scaled sample."""
    with no_grad():
        _, probs = forward_batch(
            params,
            arch,
            Tensor(sample.images[None]),
            Tensor(sample.pkt[None]),
            Tensor(sample.flow[None]),
        )
    return probs.data[0]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


@dataclass
class FoldReport:
    fold: int
    counts: ConfusionCounts
    metrics: RunMetrics


@dataclass
class TrainedModel:
    arch: Architecture
    params: dict[str, Tensor]
    scaler: StatScaler
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        tensors: dict[str, np.ndarray] = {k: v.data for k, v in self.params.items()}
        tensors["scaler/pkt_lo"] = self.scaler.pkt_params_.lo
        tensors["scaler/pkt_hi"] = self.scaler.pkt_params_.hi
        tensors["scaler/flow_lo"] = self.scaler.flow_params_.lo
        tensors["scaler/flow_hi"] = self.scaler.flow_params_.hi
        meta = {
            "kind": "hmcd-classifier",
            "arch": self.arch.to_dict(),
            "arch_fingerprint": self.arch.fingerprint(),
            **self.meta,
        }
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "hmcd-classifier":
            raise CheckpointError(f"checkpoint kind {meta.get('kind')!r} is not a classifier")
        arch = Architecture.from_dict(meta["arch"])
        if meta.get("arch_fingerprint") != arch.fingerprint():
            raise CheckpointError("architecture fingerprint does not match stored fields")
        from .features import ScalerParams  # local to avoid shadowing

        scaler = StatScaler()
        try:
            scaler.pkt_params_ = ScalerParams(
                tensors.pop("scaler/pkt_lo"), tensors.pop("scaler/pkt_hi")
            )
            scaler.flow_params_ = ScalerParams(
                tensors.pop("scaler/flow_lo"), tensors.pop("scaler/flow_hi")
            )
        except KeyError as exc:
            raise CheckpointError(f"checkpoint missing scaler tensor {exc}") from exc
        params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
        expected = set(init_model(arch, seed=0))
        if set(params) != expected:
            missing = expected.symmetric_difference(params)
            raise CheckpointError(f"parameter names do not match architecture: {sorted(missing)}")
        return cls(arch=arch, params=params, scaler=scaler, meta=meta)


@dataclass
class TrainResult:
    model: TrainedModel
    fold_reports: list[FoldReport]
    history: list[float]  # final-fit mean epoch losses


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    return np.eye(n_classes, dtype=np.float64)[labels]


def _fit_params(
    params: dict[str, Tensor],
    arch: Architecture,
    images: np.ndarray,
    pkt: np.ndarray,
    flow: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[float]:
    names = list(params)
    tensors = [params[n] for n in names]
    state = adam_init(lr=cfg.learning_rate)
    onehot = _onehot(labels, arch.n_classes)
    n = images.shape[0]
    history: list[float] = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits, _ = forward_batch(
                params, arch, Tensor(images[idx]), Tensor(pkt[idx]), Tensor(flow[idx])
            )
            loss, _ = ops.softmax_cross_entropy_batch(logits, Tensor(onehot[idx]))
            value = loss.item()
            if not np.isfinite(value):
                raise Diverged(f"non-finite training loss at step {state.step}")
            grads = grad(loss, tensors)
            adam_update(params, dict(zip(names, grads)), state)
            losses.append(value)
        history.append(float(np.mean(losses)))
    return history


def stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic stratified fold assignment; fold id per sample."""
    fold_of = np.zeros(len(labels), dtype=np.int64)
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        if len(idx) < folds:
            raise InsufficientData(
                f"class {cls} has {len(idx)} samples, fewer than {folds} folds"
            )
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def _predict_scaled(
    params: dict[str, Tensor],
    arch: Architecture,
    samples: Sequence[Sample],
    batch: int = 512,
) -> np.ndarray:
    """Malicious-class probability per scaled sample."""
    out = np.zeros(len(samples))
    with no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start : start + batch]
            images = np.stack([s.images for s in chunk])
            pkt = np.stack([s.pkt for s in chunk])
            flow = np.stack([s.flow for s in chunk])
            _, probs = forward_batch(params, arch, Tensor(images), Tensor(pkt), Tensor(flow))
            out[start : start + len(chunk)] = probs.data[:, 1]
    return out


def score_to_label(score: float) -> Label:
    """Malicious wins only on a strict majority; ties stay benign."""
    return Label.MALICIOUS if score > 0.5 else Label.BENIGN


def train(
    samples: Sequence[Sample],
    gafs: Sequence[Sample] = (),
    config: TrainConfig = TrainConfig(),
    arch: Architecture = DEFAULT_ARCHITECTURE,
) -> TrainResult:
    """Stratified k-fold training on real samples, plus a final full fit.

    Generated samples (``gafs``) join every training fold but never a
    validation fold. The returned model is trained on all real samples plus
    gafs; fold_reports hold the per-fold validation confusion and metrics.
    """
    samples = list(samples)
    gafs = list(gafs)
    if not samples:
        raise InsufficientData("no training samples")
    _, _, _, labels = samples_to_arrays(samples)
    fold_of = stratified_folds(labels, config.folds, np.random.default_rng([config.seed, 9001]))

    fold_reports: list[FoldReport] = []
    for fold in range(config.folds):
        train_samples = [s for s, f in zip(samples, fold_of) if f != fold] + gafs
        val_samples = [s for s, f in zip(samples, fold_of) if f == fold]
        scaler = StatScaler().fit(train_samples)
        tr = scaler.transform(train_samples)
        va = scaler.transform(val_samples)
        params = init_model(arch, seed=config.seed)
        images, pkt, flow, y = samples_to_arrays(tr)
        _fit_params(
            params, arch, images, pkt, flow, y, config,
            np.random.default_rng([config.seed, 101, fold]),
        )
        scores = _predict_scaled(params, arch, va)
        pred = [score_to_label(s) for s in scores]
        truth = [s.label for s in va]
        counts = confusion(truth, pred)
        fold_reports.append(FoldReport(fold, counts, run_metrics(counts)))

    scaler = StatScaler().fit(samples + gafs)
    scaled = scaler.transform(samples + gafs)
    params = init_model(arch, seed=config.seed)
    images, pkt, flow, y = samples_to_arrays(scaled)
    history = _fit_params(
        params, arch, images, pkt, flow, y, config,
        np.random.default_rng([config.seed, 101, config.folds]),
    )
    model = TrainedModel(
        arch=arch,
        params=params,
        scaler=scaler,
        meta={
            "train_config": asdict(config),
            "real_samples": len(samples),
            "generated_samples": len(gafs),
        },
    )
    return TrainResult(model=model, fold_reports=fold_reports, history=history)


@dataclass
class ScoredFlow:
    flow_id: str
    label: Label
    score: float  # P(malicious)


@dataclass
class PredictResult:
    scored: list[ScoredFlow]
    discarded: list[str]


def predict(model: TrainedModel, flows: Sequence[Flow]) -> PredictResult:
    """Score flows; flows discarded at featurization are reported, not scored."""
    samples, discarded = featurize_flows(flows)
    scaled = model.scaler.transform(samples)
    scores = _predict_scaled(model.params, model.arch, scaled)
    scored = [
        ScoredFlow(s.flow_id, score_to_label(v), float(v))
        for s, v in zip(samples, scores)
    ]
    return PredictResult(scored=scored, discarded=discarded)


class FlowClassifier(BaseEstimator, ClassifierMixin):
    """Estimator wrapper over the functional train/predict pipeline.

    fit() accepts labeled flows (or pre-featurized Samples); the generated
    flows used for training augmentation come in through the ``gafs``
    keyword. predict() returns label strings aligned with its input and
    refuses inputs containing flows that featurization would discard; use
    predict_flows() when discards are possible.
    """

    def __init__(
        self,
        epochs: int = 50,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        folds: int = 5,
        seed: int = 0,
        arch: Architecture = DEFAULT_ARCHITECTURE,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.folds = folds
        self.seed = seed
        self.arch = arch

    def _to_samples(self, X: Sequence) -> tuple[list[Sample], list[str]]:
        items = list(X)
        if items and isinstance(items[0], Sample):
            return items, []
        return featurize_flows(items)

    def fit(self, X: Sequence, y=None, gafs: Sequence = ()):
        samples, _ = self._to_samples(X)
        if y is not None:
            labels = [Label(v) if not isinstance(v, Label) else v for v in y]
            if len(labels) != len(samples):
                raise ValueError(f"{len(labels)} labels for {len(samples)} usable flows")
            samples = [replace(s, label=lab) for s, lab in zip(samples, labels)]
        gaf_samples, _ = self._to_samples(gafs)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            folds=self.folds,
            seed=self.seed,
        )
        result = train(samples, gaf_samples, cfg, self.arch)
        self.model_ = result.model
        self.fold_reports_ = result.fold_reports
        self.history_ = result.history
        self.classes_ = np.array([Label.BENIGN.value, Label.MALICIOUS.value])
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("FlowClassifier has not been fit")

    def predict_flows(self, X: Sequence[Flow]) -> PredictResult:
        self._check_fitted()
        return predict(self.model_, list(X))

    def predict(self, X: Sequence) -> np.ndarray:
        return np.array([score_to_label(v).value for v in self._scores(X)])

    def predict_proba(self, X: Sequence) -> np.ndarray:
        scores = self._scores(X)
        return np.stack([1.0 - scores, scores], axis=1)

    def _scores(self, X: Sequence) -> np.ndarray:
        self._check_fitted()
        items = list(X)
        if items and isinstance(items[0], Sample):
            samples = items
        else:
            samples, discarded = featurize_flows(items)
            if discarded:
                raise ValueError(
                    f"{len(discarded)} flows would be discarded; use predict_flows"
                )
        scaled = self.model_.scaler.transform(samples)
        return _predict_scaled(self.model_.params, self.model_.arch, scaled)
