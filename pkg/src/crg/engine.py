"""The per-sample adaptation pipeline and stream-level orchestration.

For each sample the engine: builds zero-residual prototypes and the Gaussian
model from the current caches; predicts every view, keeps the low-entropy
ones and files the original feature into the pseudo-labeled class queue;
takes one AdamW step on the residuals against the similarity-matching
objective; rebuilds prototypes and Gaussian stats with the learned
residuals; emits the final fused prediction; and momentum-updates the text
cache when the prediction is confident. Numerical failures never halt the
stream: the sample falls back to its pre-optimization prediction.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .cache import CacheEntry, PositiveCache, TextCache, init_caches
from .config import EngineConfig
from .core import entropy_rows, entropy_unchecked, softmax_rows
from .exceptions import DegenerateVector, FormatError, InvalidInput, NumericalError, VersionError
from .gda import fit_gda
from .objective import (
    FusionParams,
    OptimizerState,
    _gda_logit_matrix,
    _sim_logit_matrix,
    adamw_step,
    loss_and_grads,
    select_views,
    total_loss,
)
from .data import SampleRecord
from .prototypes import ResidualSet, build_prototype_state_tolerant

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CRGCKP1\x00"
CHECKPOINT_VERSION = 1
_SENTINEL_ID = 2**64 - 1


@dataclass
class SamplePrediction:
    """Everything the engine decided about one sample."""

    sample_id: int
    probs: np.ndarray
    predicted: int
    pseudo_label: int | None
    insert_kind: str | None
    pre_entropy: float
    final_entropy: float
    loss_before: float | None
    loss_after: float | None
    fallback: bool = False
    degenerate_rows: int = 0

    @property
    def confidence(self) -> float:
        return float(self.probs.max())


@dataclass
class MetricsReport:
    """Stream-level summary written at the end of a run."""

    samples: int
    labeled_samples: int
    accuracy: float | None
    ece: float | None
    inserted: int
    replaced: int
    discarded: int
    degenerate_rows: int
    numerical_failures: int
    aborted_before_insert: int
    error_rate_series: list[float]
    config: dict

    def to_json(self) -> str:
        payload = {
            "samples": self.samples,
            "labeled_samples": self.labeled_samples,
            "accuracy": self.accuracy,
            "ece": self.ece,
            "inserted": self.inserted,
            "replaced": self.replaced,
            "discarded": self.discarded,
            "degenerate_rows": self.degenerate_rows,
            "numerical_failures": self.numerical_failures,
            "aborted_before_insert": self.aborted_before_insert,
            "error_rate_series": self.error_rate_series,
            "config": self.config,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        return cls(**payload)


class MetricsAccumulator:
    """Running counters; cheap enough to update every sample."""

    def __init__(self) -> None:
        self.samples = 0
        self.labeled = 0
        self.correct = 0
        self.inserted = 0
        self.replaced = 0
        self.discarded = 0
        self.degenerate_rows = 0
        self.numerical_failures = 0
        self.aborted_before_insert = 0
        self.error_rate_series: list[float] = []
        # (confidence, predicted, true) per labeled sample, for calibration
        self.calibration: list[tuple[float, int, int]] = []

    def record(self, pred: SamplePrediction, true_label: int | None,
               cache_error_rate: float) -> None:
        self.samples += 1
        if true_label is not None:
            self.labeled += 1
            self.correct += int(pred.predicted == true_label)
            self.calibration.append((pred.confidence, pred.predicted, true_label))
        if pred.insert_kind == "inserted":
            self.inserted += 1
        elif pred.insert_kind == "replaced":
            self.replaced += 1
        elif pred.insert_kind == "discarded":
            self.discarded += 1
        self.degenerate_rows += pred.degenerate_rows
        if pred.fallback:
            self.numerical_failures += 1
            if pred.insert_kind is None:
                self.aborted_before_insert += 1
        self.error_rate_series.append(cache_error_rate)

    def report(self, config: EngineConfig) -> MetricsReport:
        accuracy = self.correct / self.labeled if self.labeled else None
        ece_value = None
        if self.calibration:
            conf = np.array([c for c, _, _ in self.calibration])
            correct = np.array([p == t for _, p, t in self.calibration], dtype=bool)
            ece_value = _binned_ece(conf, correct, 15)
        return MetricsReport(
            samples=self.samples,
            labeled_samples=self.labeled,
            accuracy=accuracy,
            ece=ece_value,
            inserted=self.inserted,
            replaced=self.replaced,
            discarded=self.discarded,
            degenerate_rows=self.degenerate_rows,
            numerical_failures=self.numerical_failures,
            aborted_before_insert=self.aborted_before_insert,
            error_rate_series=list(self.error_rate_series),
            config=config.to_dict(),
        )

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "labeled": self.labeled,
            "correct": self.correct,
            "inserted": self.inserted,
            "replaced": self.replaced,
            "discarded": self.discarded,
            "degenerate_rows": self.degenerate_rows,
            "numerical_failures": self.numerical_failures,
            "aborted_before_insert": self.aborted_before_insert,
            "error_rate_series": self.error_rate_series,
            "calibration": [[c, p, t] for c, p, t in self.calibration],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsAccumulator":
        acc = cls()
        acc.samples = payload["samples"]
        acc.labeled = payload["labeled"]
        acc.correct = payload["correct"]
        acc.inserted = payload["inserted"]
        acc.replaced = payload["replaced"]
        acc.discarded = payload["discarded"]
        acc.degenerate_rows = payload["degenerate_rows"]
        acc.numerical_failures = payload["numerical_failures"]
        acc.aborted_before_insert = payload["aborted_before_insert"]
        acc.error_rate_series = [float(x) for x in payload["error_rate_series"]]
        acc.calibration = [(float(c), int(p), int(t)) for c, p, t in payload["calibration"]]
        return acc


def _binned_ece(confidences: np.ndarray, correct: np.ndarray, bins: int) -> float:
    # right-closed bins ((b-1)/B, b/B]; confidence of an argmax is >= 1/K > 0
    idx = np.ceil(confidences * bins).astype(int) - 1
    idx = np.clip(idx, 0, bins - 1)
    n = confidences.shape[0]
    total = 0.0
    for b in range(bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        acc = float(correct[mask].mean())
        conf = float(confidences[mask].mean())
        total += (count / n) * abs(acc - conf)
    return total


def expected_calibration_error(predictions, bins: int = 15) -> float:
    """Standard binned ECE over (distribution, true label) pairs.

    Bins by max-probability confidence into ``bins`` right-closed intervals
    and averages |accuracy - confidence| weighted by bin occupancy.
    """
    if bins < 1:
        raise InvalidInput(f"bins must be >= 1, got {bins}")
    pairs = list(predictions)
    if not pairs:
        raise InvalidInput("expected_calibration_error needs at least one prediction")
    conf = np.empty(len(pairs))
    correct = np.empty(len(pairs), dtype=bool)
    for i, (dist, label) in enumerate(pairs):
        dist = np.asarray(dist, dtype=np.float64)
        conf[i] = dist.max()
        correct[i] = int(np.argmax(dist)) == int(label)
    return _binned_ece(conf, correct, bins)


@dataclass
class EngineState:
    """Everything that persists from one sample to the next."""

    config: EngineConfig
    cache: PositiveCache
    text: TextCache
    metrics: MetricsAccumulator = field(default_factory=MetricsAccumulator)
    samples_seen: int = 0
    residuals: ResidualSet | None = None  # only used with persist_residuals

    @classmethod
    def initial(cls, text_features: np.ndarray, config: EngineConfig) -> "EngineState":
        cache, text = init_caches(text_features, config)
        return cls(config=config, cache=cache, text=text)


def _view_distributions(views: np.ndarray, proto, gda_model, config: EngineConfig,
                        use_gda_rule: bool) -> np.ndarray:
    params = FusionParams.from_config(config)
    if use_gda_rule:
        logits = _gda_logit_matrix(views, proto, gda_model, params)
    else:
        logits = _sim_logit_matrix(views, proto, params)
    return softmax_rows(logits, config.tau)


def process_sample(state: EngineState, record: SampleRecord,
                   forced_insert_label: int | None = None) -> SamplePrediction:
    """Run the full adaptation pipeline on one sample, mutating ``state``.

    ``forced_insert_label`` overrides the pseudo-label used for the cache
    insertion only (the noise-injection hook for robustness experiments).
    """
    config = state.config
    K = config.K
    ln_k = math.log(K)
    views = record.views
    f0 = views[0]
    degenerate_rows = 0
    zero_res = ResidualSet.zeros(K, config.d)
    if config.persist_residuals and state.residuals is not None:
        start_res = state.residuals
    else:
        start_res = zero_res
    gda_for_pseudo = config.use_gda and config.pseudo_label_rule == "gda"

    # steps 2-3: zero-residual prototypes, per-view predictions, view filter
    try:
        means = state.cache.class_means()
        proto0, fb = build_prototype_state_tolerant(
            means, state.text.prototypes, zero_res, config
        )
        degenerate_rows += fb
        gda0 = fit_gda(state.cache, zero_res.pos, config) if gda_for_pseudo else None
        dists = _view_distributions(views, proto0, gda0, config, gda_for_pseudo)
        view_entropies = entropy_rows(dists)
        selected = select_views(view_entropies, config.rho)
        p0 = dists[selected].mean(axis=0)
        pseudo = int(np.argmax(p0))
        pre_entropy = entropy_unchecked(p0)
    except (DegenerateVector, NumericalError) as exc:
        logger.warning("sample %s: aborted before insertion (%s)", record.sample_id, exc)
        probs = softmax_rows((state.text.prototypes @ f0)[None, :], config.tau)[0]
        h = entropy_unchecked(probs)
        pred = SamplePrediction(
            sample_id=record.sample_id,
            probs=probs,
            predicted=int(np.argmax(probs)),
            pseudo_label=None,
            insert_kind=None,
            pre_entropy=h,
            final_entropy=h,
            loss_before=None,
            loss_after=None,
            fallback=True,
            degenerate_rows=degenerate_rows,
        )
        _finish(state, pred, record)
        return pred

    # step 4: file the original view under its pseudo-label
    insert_label = pseudo if forced_insert_label is None else int(forced_insert_label)
    outcome = state.cache.insert(
        insert_label,
        CacheEntry(
            feature=f0.copy(),
            entropy=pre_entropy,
            sample_id=record.sample_id,
            true_label=record.true_label,
        ),
    )

    # steps 5-9: adapt, rebuild, final prediction, text momentum
    try:
        means = state.cache.class_means()
        if config.adaptation_disabled:
            res = start_res
            loss_before = loss_after = None
        else:
            sel_views = views[selected]
            loss_before, grads = loss_and_grads(
                sel_views, means, state.text.prototypes, start_res, config
            )
            res, _ = adamw_step(
                start_res, grads, OptimizerState.zeros(K, config.d), config
            )
            loss_after = total_loss(sel_views, means, state.text.prototypes, res, config)
        proto, fb = build_prototype_state_tolerant(
            means, state.text.prototypes, res, config
        )
        degenerate_rows += fb
        gda_model = fit_gda(state.cache, res.pos, config) if config.use_gda else None
        if config.final_prediction == "marginal":
            final_dists = _view_distributions(
                views[selected], proto, gda_model, config, config.use_gda
            )
            probs = final_dists.mean(axis=0)
        else:
            probs = _view_distributions(
                f0[None, :], proto, gda_model, config, config.use_gda
            )[0]
        predicted = int(np.argmax(probs))
        final_entropy = entropy_unchecked(probs)
        state.text.momentum_update(proto.text, final_entropy / ln_k, config)
        if config.persist_residuals:
            state.residuals = res
        pred = SamplePrediction(
            sample_id=record.sample_id,
            probs=probs,
            predicted=predicted,
            pseudo_label=insert_label,
            insert_kind=outcome.kind,
            pre_entropy=pre_entropy,
            final_entropy=final_entropy,
            loss_before=loss_before,
            loss_after=loss_after,
            degenerate_rows=degenerate_rows,
        )
    except (DegenerateVector, NumericalError) as exc:
        logger.warning("sample %s: numerical failure, using the pre-optimization "
                       "prediction (%s)", record.sample_id, exc)
        pred = SamplePrediction(
            sample_id=record.sample_id,
            probs=p0,
            predicted=pseudo,
            pseudo_label=insert_label,
            insert_kind=outcome.kind,
            pre_entropy=pre_entropy,
            final_entropy=pre_entropy,
            loss_before=None,
            loss_after=None,
            fallback=True,
            degenerate_rows=degenerate_rows,
        )
    _finish(state, pred, record)
    return pred


def _finish(state: EngineState, pred: SamplePrediction, record: SampleRecord) -> None:
    state.samples_seen += 1
    state.metrics.record(pred, record.true_label, state.cache.error_rate())


def _noise_label(record: SampleRecord, rate: float, config: EngineConfig) -> int | None:
    """Roll the insertion-noise die for one sample.

    Seeded by (config seed, sample id) so runs replay identically and resume
    cleanly. Returns a wrong-class label, or None when the sample is spared
    (or carries no true label to be wrong against).
    """
    if record.true_label is None:
        return None
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, record.sample_id]))
    if rng.random() >= rate:
        return None
    offset = int(rng.integers(1, config.K))
    return (record.true_label + offset) % config.K


def run_stream(state: EngineState, records: Iterable[SampleRecord],
               noise_rate: float = 0.0,
               log_stream: IO[str] | None = None) -> MetricsReport:
    """Fold :func:`process_sample` over a record stream.

    ``noise_rate`` forces a wrong-class cache insertion for that fraction of
    samples (the manifest's noise-experiment knob). ``log_stream`` receives
    one JSON line per sample.
    """
    for record in records:
        forced = None
        if noise_rate > 0.0:
            forced = _noise_label(record, noise_rate, state.config)
        pred = process_sample(state, record, forced_insert_label=forced)
        if log_stream is not None:
            log_stream.write(_log_line(pred, record))
    return state.metrics.report(state.config)


def _log_line(pred: SamplePrediction, record: SampleRecord) -> str:
    payload = {
        "sample_id": pred.sample_id,
        "true_label": record.true_label,
        "predicted": pred.predicted,
        "pseudo_label": pred.pseudo_label,
        "confidence": pred.confidence,
        "pre_entropy": pred.pre_entropy,
        "final_entropy": pred.final_entropy,
        "insert": pred.insert_kind,
        "loss_before": pred.loss_before,
        "loss_after": pred.loss_after,
        "fallback": pred.fallback,
    }
    return json.dumps(payload, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(state: EngineState, path: str | Path) -> None:
    """Serialize config, caches, stream position and metrics.

    Cache features and entropies are stored as float64 so a resumed run
    replays bit-identically; the record structure mirrors the sample-block
    layout (id, label, count, values).
    """
    K, d = state.config.K, state.config.d
    seq, heaps = state.cache.dump_state()
    config_blob = json.dumps(state.config.to_dict(), sort_keys=True).encode("utf-8")
    metrics_blob = json.dumps(state.metrics.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)
        f.write(struct.pack("<QQII", state.samples_seen, seq, K, d))
        f.write(state.text.prototypes.astype("<f8").tobytes())
        for heap in heaps:
            f.write(struct.pack("<I", len(heap)))
            for _, entry_seq, entry in heap:
                sid = _SENTINEL_ID if entry.sample_id is None else entry.sample_id
                label = -1 if entry.true_label is None else entry.true_label
                f.write(struct.pack("<QiQd", sid, label, entry_seq, entry.entropy))
                f.write(entry.feature.astype("<f8").tobytes())
        f.write(struct.pack("<I", len(metrics_blob)))
        f.write(metrics_blob)
        if state.residuals is not None:  # persist_residuals runs carry them
            f.write(struct.pack("<B", 1))
            for matrix in (state.residuals.text, state.residuals.pos, state.residuals.neg):
                f.write(matrix.astype("<f8").tobytes())
        else:
            f.write(struct.pack("<B", 0))


def load_checkpoint(path: str | Path) -> EngineState:
    data = Path(path).read_bytes()
    view = memoryview(data)
    if bytes(view[:8]) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file", offset=0)
    (version,) = struct.unpack_from("<I", view, 8)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    (config_len,) = struct.unpack_from("<I", view, pos)
    pos += 4
    config = EngineConfig.from_dict(json.loads(bytes(view[pos:pos + config_len])))
    pos += config_len
    samples_seen, seq, K, d = struct.unpack_from("<QQII", view, pos)
    pos += struct.calcsize("<QQII")
    text = np.frombuffer(view, dtype="<f8", count=K * d, offset=pos).reshape(K, d).copy()
    pos += 8 * K * d
    heaps: list[list[tuple[float, int, CacheEntry]]] = []
    for _ in range(K):
        (count,) = struct.unpack_from("<I", view, pos)
        pos += 4
        heap = []
        for _ in range(count):
            sid, label, entry_seq, ent = struct.unpack_from("<QiQd", view, pos)
            pos += struct.calcsize("<QiQd")
            feature = np.frombuffer(view, dtype="<f8", count=d, offset=pos).copy()
            pos += 8 * d
            entry = CacheEntry(
                feature=feature,
                entropy=ent,
                sample_id=None if sid == _SENTINEL_ID else sid,
                true_label=None if label < 0 else label,
            )
            heap.append((-ent, entry_seq, entry))
        heaps.append(heap)
    (metrics_len,) = struct.unpack_from("<I", view, pos)
    pos += 4
    metrics = MetricsAccumulator.from_dict(json.loads(bytes(view[pos:pos + metrics_len])))
    pos += metrics_len
    residuals = None
    (has_residuals,) = struct.unpack_from("<B", view, pos)
    pos += 1
    if has_residuals:
        matrices = []
        for _ in range(3):
            matrices.append(
                np.frombuffer(view, dtype="<f8", count=K * d, offset=pos).reshape(K, d).copy()
            )
            pos += 8 * K * d
        residuals = ResidualSet(*matrices)

    cache = PositiveCache(config)
    cache.load_state(seq, heaps)
    state = EngineState(
        config=config,
        cache=cache,
        text=TextCache(text),
        metrics=metrics,
        samples_seen=samples_seen,
        residuals=residuals,
    )
    return state
