"""AdamW optimisation of the matcher for the teacher, student and unimodal baseline roles."""

from __future__ import annotations

import logging
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from deskmatch._io import atomic_write_text
from deskmatch.autodiff import Tensor, fresh_tape, gradients, no_grad
from deskmatch.autodiff._tape import Array
from deskmatch.config import MatcherConfig, TrainConfig, TrainingRole
from deskmatch.errors import ConfigurationError, ContractError
from deskmatch.geometry import CorrespondenceGT, warp_correspondences
from deskmatch.losses import attentive_loss, coarse_loss, fine_loss, mqd_loss, total_loss
from deskmatch.model import FineMatchSet, Matcher, load_checkpoint, save_checkpoint
from deskmatch.model.matcher import (
    correlation_matrix,
    dual_softmax,
    forward_features,
    match_pair,
    model_inputs,
    refine,
)
from deskmatch.protocol import PairSource
from deskmatch.reports import TrainLogEntry
from deskmatch.scenes import ScenePair
from deskmatch.sources import DiskPairSource

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

INPUT_CHANNELS: dict[TrainingRole, int] = {"teacher": 4, "student": 3, "unimodal-baseline": 3}


@dataclass
class OptimizerState:
    """AdamW moments for the trainable parameters only."""

    first: dict[str, Array] = field(default_factory=dict)
    second: dict[str, Array] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> OptimizerState:
        """Zero moments for every parameter that requires a gradient."""
        trainable = {name: t for name, t in params.items() if t.requires_grad}
        return cls(
            first={name: np.zeros_like(t.data) for name, t in trainable.items()},
            second={name: np.zeros_like(t.data) for name, t in trainable.items()},
        )


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    state: OptimizerState,
    lr: float,
    weight_decay: float,
) -> None:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    Raises:
        ContractError: a trainable parameter has no gradient or a mismatched one.
    """
    state.step += 1
    correction1 = 1.0 - BETA1**state.step
    correction2 = 1.0 - BETA2**state.step
    for name, param in params.items():
        if not param.requires_grad:
            continue
        grad = grads.get(name)
        if grad is None:
            raise ContractError(f"no gradient for trainable parameter {name!r}")
        if grad.shape != param.shape:
            raise ContractError(f"gradient for {name!r} has shape {grad.shape}, not {param.shape}")
        m = state.first.setdefault(name, np.zeros_like(param.data))
        v = state.second.setdefault(name, np.zeros_like(param.data))
        m *= BETA1
        m += (1.0 - BETA1) * grad
        v *= BETA2
        v += (1.0 - BETA2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
        param.data = param.data - lr * weight_decay * param.data - lr * update


@dataclass(frozen=True, slots=True)
class PairLosses:
    """Scalar loss terms of one pair; skipped distillation terms are 0."""

    coarse: float
    fine: float
    mqd: float
    attentive: float
    total: float


def fine_supervision(gt: CorrespondenceGT, fine: FineMatchSet) -> tuple[Array, NDArray[np.bool_]]:
    """Targets of every refined match and which of them have one inside the window."""
    targets = np.zeros((len(fine), 2))
    valid = np.zeros(len(fine), dtype=bool)
    for k, (i, j) in enumerate(zip(fine.i.tolist(), fine.j.tolist(), strict=True)):
        target = gt.fine_target(i, j)
        if target is not None:
            targets[k] = target
            valid[k] = True
    return targets, valid


def prepare_ground_truth(source: PairSource, window: int) -> dict[str, CorrespondenceGT]:
    """Warp every pair once; pairs without a single coarse match are dropped."""
    out: dict[str, CorrespondenceGT] = {}
    for pair_id in source.pair_ids():
        pair = source.get_pair(pair_id)
        gt = warp_correspondences(pair.frame_a, pair.frame_b, window=window)
        if len(gt.matches) == 0:
            logger.warning("Skipping %s: no ground-truth coarse matches", pair_id)
            continue
        out[pair_id] = gt
    return out


def pair_gradients(
    student: Matcher,
    pair: ScenePair,
    gt: CorrespondenceGT,
    config: TrainConfig,
    teacher: Matcher | None = None,
) -> tuple[list[Array], PairLosses]:
    """Loss of one pair and its gradient for every student parameter, in store order."""
    weights = config.weights
    use_mqd = teacher is not None and config.distill_mqd and weights.mqd > 0
    use_att = teacher is not None and config.distill_att and weights.attentive > 0
    with fresh_tape():
        image_a, image_b = model_inputs(pair, student.config.input_channels)
        result = match_pair(image_a, image_b, student.params, student.config, extra=gt.matches)
        l_c = coarse_loss(
            result.coarse.probabilities, gt.matches, weights.focal_alpha, weights.focal_gamma
        )
        targets, valid = fine_supervision(gt, result.fine)
        l_f = fine_loss(result.fine.expectation, result.fine.variance, targets, valid)

        l_mqd: Tensor | None = None
        l_att: Tensor | None = None
        if teacher is not None and (use_mqd or use_att):
            with no_grad():
                t_a, t_b = model_inputs(pair, teacher.config.input_channels)
                t_features = forward_features(t_a, t_b, teacher.params, teacher.config)
            if t_features.grid_shape != result.features.grid_shape:
                raise ConfigurationError(
                    f"teacher coarse grid {t_features.grid_shape} differs from student "
                    f"grid {result.features.grid_shape}"
                )
            if use_mqd:
                with no_grad():
                    t_scores = correlation_matrix(t_features.coarse_a, t_features.coarse_b)
                l_mqd = mqd_loss(
                    result.coarse.scores * (1.0 / student.config.temperature),
                    t_scores.data / teacher.config.temperature,
                    gt.matches,
                    weights.distill_temperature,
                    weights.focal_alpha,
                    weights.focal_gamma,
                    weights.include_unmatched_queries,
                )
            if use_att:
                # only the student's own selections; supervision-only extras are left out
                keep = np.flatnonzero(result.fine.predicted)
                with no_grad():
                    t_fine = refine(
                        teacher.params,
                        teacher.config,
                        t_features,
                        result.fine.i[keep],
                        result.fine.j[keep],
                    )
                l_att = attentive_loss(
                    result.fine.expectation[keep], t_fine.expectation.data, t_fine.variance.data
                )

        total = total_loss(config.role, l_c, l_f, l_mqd, l_att, weights)
        grads = gradients(total, list(student.params.values()))
    losses = PairLosses(
        coarse=l_c.item(),
        fine=l_f.item(),
        mqd=0.0 if l_mqd is None else l_mqd.item(),
        attentive=0.0 if l_att is None else l_att.item(),
        total=total.item(),
    )
    return grads, losses


def validation_coarse_loss(
    matcher: Matcher,
    source: PairSource,
    ground_truth: Mapping[str, CorrespondenceGT],
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> float:
    """Mean coarse loss over the validation pairs, without recording."""
    values: list[float] = []
    with no_grad():
        for pair_id, gt in ground_truth.items():
            image_a, image_b = model_inputs(source.get_pair(pair_id), matcher.config.input_channels)
            features = forward_features(image_a, image_b, matcher.params, matcher.config)
            scores = correlation_matrix(features.coarse_a, features.coarse_b)
            _, _, probs = dual_softmax(scores, matcher.config.temperature)
            values.append(coarse_loss(probs, gt.matches, alpha, gamma).item())
    return float(np.mean(values)) if values else float("nan")


class Trainer:
    """Epoch loop over a pair source with a seeded shuffle and ordered gradient reduction.

    Per-pair passes may run on ``config.threads`` worker threads; each owns its
    tape and returns its gradients, which are summed in batch order so the
    result does not depend on scheduling.
    """

    def __init__(
        self,
        matcher: Matcher,
        config: TrainConfig,
        source: PairSource,
        teacher: Matcher | None = None,
        validation: PairSource | None = None,
    ) -> None:
        expected = INPUT_CHANNELS[config.role]
        if matcher.config.input_channels != expected:
            raise ConfigurationError(
                f"role {config.role!r} trains a {expected}-channel model, "
                f"got input_channels={matcher.config.input_channels}"
            )
        if config.role == "student":
            if teacher is None:
                raise ConfigurationError("student training needs a teacher")
            if teacher.config.input_channels != 4:
                raise ConfigurationError(
                    f"teacher must take RGB-D input, got {teacher.config.input_channels} channels"
                )
            if teacher.config.window != matcher.config.window:
                raise ConfigurationError(
                    f"teacher window {teacher.config.window} differs from student "
                    f"window {matcher.config.window}"
                )
            teacher.params.freeze()
        self.matcher = matcher
        self.config = config
        self.source = source
        self.teacher = teacher if config.role == "student" else None
        self.validation = validation
        self.state = OptimizerState.for_params(matcher.params)
        self.history: list[TrainLogEntry] = []
        self._rng = np.random.default_rng(config.seed)
        self._names = list(matcher.params)
        self.ground_truth = prepare_ground_truth(source, matcher.config.window)
        if not self.ground_truth:
            raise ConfigurationError(f"no trainable pairs in {source.description}")
        self.validation_truth = (
            prepare_ground_truth(validation, matcher.config.window) if validation else {}
        )

    def _one(self, pair_id: str) -> tuple[list[Array], PairLosses]:
        return pair_gradients(
            self.matcher,
            self.source.get_pair(pair_id),
            self.ground_truth[pair_id],
            self.config,
            self.teacher,
        )

    def step(
        self, pair_ids: Sequence[str], pool: ThreadPoolExecutor | None = None
    ) -> list[PairLosses]:
        """Average the batch gradient and apply one optimizer update."""
        results = list(pool.map(self._one, pair_ids)) if pool else [self._one(p) for p in pair_ids]
        summed = [np.zeros_like(g) for g in results[0][0]]
        for grads, _ in results:
            for acc, g in zip(summed, grads, strict=True):
                acc += g
        scale = 1.0 / len(results)
        batch = {name: g * scale for name, g in zip(self._names, summed, strict=True)}
        adamw_step(
            self.matcher.params,
            batch,
            self.state,
            self.config.learning_rate,
            self.config.weight_decay,
        )
        return [losses for _, losses in results]

    def train_epoch(self, epoch: int, pool: ThreadPoolExecutor | None = None) -> TrainLogEntry:
        """One shuffled pass over the training pairs; returns its log entry."""
        started = time.perf_counter()
        ids = list(self.ground_truth)
        order = self._rng.permutation(len(ids))
        batch_size = self.config.batch_size
        losses: list[PairLosses] = []
        for start in range(0, len(order), batch_size):
            batch = [ids[k] for k in order[start : start + batch_size]]
            losses.extend(self.step(batch, pool))
        val = None
        if self.validation is not None and self.validation_truth:
            w = self.config.weights
            val = validation_coarse_loss(
                self.matcher,
                self.validation,
                self.validation_truth,
                w.focal_alpha,
                w.focal_gamma,
            )
        entry = TrainLogEntry(
            epoch=epoch,
            coarse=float(np.mean([x.coarse for x in losses])),
            fine=float(np.mean([x.fine for x in losses])),
            mqd=float(np.mean([x.mqd for x in losses])),
            attentive=float(np.mean([x.attentive for x in losses])),
            total=float(np.mean([x.total for x in losses])),
            wall_time_s=time.perf_counter() - started,
            val_coarse=val,
        )
        logger.info(
            "epoch %d: total %.4f (L_c %.4f, L_f %.4f, L_MQD %.4f, L_att %.4f)",
            epoch,
            entry.total,
            entry.coarse,
            entry.fine,
            entry.mqd,
            entry.attentive,
        )
        return entry

    def fit(self, log_path: Path | None = None) -> list[TrainLogEntry]:
        """Run ``config.epochs`` epochs, rewriting the JSON-lines log after each."""
        pool = ThreadPoolExecutor(self.config.threads) if self.config.threads > 1 else None
        try:
            for epoch in range(len(self.history) + 1, self.config.epochs + 1):
                self.history.append(self.train_epoch(epoch, pool))
                if log_path is not None:
                    lines = "".join(e.to_json_line() + "\n" for e in self.history)
                    atomic_write_text(Path(log_path), lines)
        finally:
            if pool is not None:
                pool.shutdown()
        return self.history


def _with_role(config: TrainConfig, role: TrainingRole, **updates: object) -> TrainConfig:
    data = config.model_dump()
    data.update(role=role, **updates)
    if role != "student":
        data.update(use_mqd=None, use_att=None, teacher_checkpoint=None)
    return TrainConfig.model_validate(data)


def _training_source(config: TrainConfig, source: PairSource | None) -> PairSource:
    if source is not None:
        return source
    if config.dataset is None:
        raise ConfigurationError("no training dataset configured")
    return DiskPairSource(config.dataset)


def _validation_source(config: TrainConfig, validation: PairSource | None) -> PairSource | None:
    if validation is not None or config.validation_dataset is None:
        return validation
    return DiskPairSource(config.validation_dataset)


def _train(
    role: TrainingRole,
    config: TrainConfig,
    matcher_config: MatcherConfig,
    checkpoint_path: Path | None,
    log_path: Path | None,
    source: PairSource | None,
    validation: PairSource | None,
    teacher: Matcher | None = None,
) -> Trainer:
    matcher_config = matcher_config.model_copy(update={"input_channels": INPUT_CHANNELS[role]})
    matcher = Matcher.initialise(matcher_config, seed=config.seed)
    logger.info(
        "Training %s (%d parameters) for %d epochs", role, matcher.params.count(), config.epochs
    )
    trainer = Trainer(
        matcher,
        config,
        _training_source(config, source),
        teacher=teacher,
        validation=_validation_source(config, validation),
    )
    trainer.fit(log_path)
    if checkpoint_path is not None:
        save_checkpoint(matcher.params, matcher.config, checkpoint_path)
    return trainer


def train_teacher(
    config: TrainConfig,
    matcher_config: MatcherConfig,
    checkpoint_path: Path | None = None,
    log_path: Path | None = None,
    source: PairSource | None = None,
    validation: PairSource | None = None,
) -> Trainer:
    """Supervised training of the RGB-D teacher on ``L_c + L_f``."""
    return _train(
        "teacher",
        _with_role(config, "teacher"),
        matcher_config,
        checkpoint_path,
        log_path,
        source,
        validation,
    )


def train_baseline(
    config: TrainConfig,
    matcher_config: MatcherConfig,
    checkpoint_path: Path | None = None,
    log_path: Path | None = None,
    source: PairSource | None = None,
    validation: PairSource | None = None,
) -> Trainer:
    """Supervised training of an RGB-only model with no teacher."""
    return _train(
        "unimodal-baseline",
        _with_role(config, "unimodal-baseline"),
        matcher_config,
        checkpoint_path,
        log_path,
        source,
        validation,
    )


def train_student(
    config: TrainConfig,
    matcher_config: MatcherConfig,
    teacher_checkpoint: Path | Matcher,
    checkpoint_path: Path | None = None,
    log_path: Path | None = None,
    source: PairSource | None = None,
    validation: PairSource | None = None,
) -> Trainer:
    """RGB student trained against ground truth and a frozen RGB-D teacher.

    ``teacher_checkpoint`` may also be an already loaded teacher.
    """
    if isinstance(teacher_checkpoint, Matcher):
        teacher = teacher_checkpoint
        reference = config.teacher_checkpoint or Path("<memory>")
    else:
        teacher = load_checkpoint(Path(teacher_checkpoint))
        reference = Path(teacher_checkpoint)
    return _train(
        "student",
        _with_role(config, "student", teacher_checkpoint=reference),
        matcher_config,
        checkpoint_path,
        log_path,
        source,
        validation,
        teacher=teacher,
    )
