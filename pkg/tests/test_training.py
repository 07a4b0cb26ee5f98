from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest
from helpers import fronto_frame, toy_matcher_config, toy_source, toy_train_config

from deskmatch.autodiff import no_grad
from deskmatch.config import LossWeights
from deskmatch.errors import ConfigurationError, ContractError
from deskmatch.geometry import warp_correspondences
from deskmatch.losses import attentive_loss
from deskmatch.model import Matcher, Parameters, load_checkpoint, save_checkpoint
from deskmatch.model.matcher import forward_features, match_pair, model_inputs, refine
from deskmatch.scenes import ScenePair
from deskmatch.training import (
    OptimizerState,
    Trainer,
    adamw_step,
    fine_supervision,
    pair_gradients,
    prepare_ground_truth,
    train_baseline,
    train_student,
    train_teacher,
)


class ListSource:
    """Minimal in-memory source over prebuilt pairs."""

    def __init__(self, pairs: list[ScenePair]) -> None:
        self._pairs = {p.pair_id: p for p in pairs}

    def pair_ids(self) -> list[str]:
        return list(self._pairs)

    def get_pair(self, pair_id: str) -> ScenePair:
        return self._pairs[pair_id]

    def __len__(self) -> int:
        return len(self._pairs)

    def __iter__(self) -> Iterator[ScenePair]:
        return iter(self._pairs.values())

    @property
    def description(self) -> str:
        return "list"


def _occluded_pair() -> ScenePair:
    return ScenePair(fronto_frame(3.0), fronto_frame(1.5), 0.0, pair_id="blocked")


@pytest.fixture(scope="module")
def source():
    return toy_source(2, seed=0)


@pytest.fixture(scope="module")
def teacher(source) -> Matcher:
    return train_teacher(toy_train_config(), toy_matcher_config(), source=source).matcher


def _params_equal(a: Parameters, b: Parameters) -> bool:
    return all(np.array_equal(a[n].data, b[n].data) for n in a)


class TestAdamW:
    def test_first_step_moves_by_learning_rate(self):
        params = Parameters()
        params.add("w", (2,), "ones")
        state = OptimizerState.for_params(params)
        adamw_step(params, {"w": np.array([2.0, -0.5])}, state, lr=0.1, weight_decay=0.01)
        np.testing.assert_allclose(params["w"].data, [1 - 0.001 - 0.1, 1 - 0.001 + 0.1])
        assert state.step == 1

    def test_zero_gradient_only_decays(self):
        params = Parameters()
        params.add("w", (1,), "ones")
        state = OptimizerState.for_params(params)
        adamw_step(params, {"w": np.zeros(1)}, state, lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(params["w"].data, [0.95])

    def test_frozen_parameters_are_skipped(self):
        params = Parameters()
        params.add("w", (1,), "ones")
        params.freeze()
        state = OptimizerState.for_params(params)
        assert state.first == {}
        adamw_step(params, {}, state, lr=0.1, weight_decay=0.1)
        assert params["w"].data[0] == 1.0

    def test_missing_gradient(self):
        params = Parameters()
        params.add("w", (1,))
        with pytest.raises(ContractError, match="no gradient"):
            adamw_step(params, {}, OptimizerState(), lr=0.1, weight_decay=0.0)

    def test_mismatched_gradient(self):
        params = Parameters()
        params.add("w", (2,))
        with pytest.raises(ContractError, match="shape"):
            adamw_step(params, {"w": np.zeros(3)}, OptimizerState(), lr=0.1, weight_decay=0.0)


class TestGroundTruth:
    def test_pairs_without_matches_are_dropped(self, source, caplog: pytest.LogCaptureFixture):
        pairs = [source.get_pair(source.pair_ids()[0]), _occluded_pair()]
        with caplog.at_level(logging.WARNING, logger="deskmatch.training"):
            gt = prepare_ground_truth(ListSource(pairs), 5)
        assert list(gt) == [source.pair_ids()[0]]
        assert "blocked" in caplog.text

    def test_fine_supervision_marks_windows(self):
        frame = fronto_frame()
        gt = warp_correspondences(frame, frame)

        class Fine:
            i = np.array([5, 5])
            j = np.array([5, 15])

            def __len__(self) -> int:
                return 2

        targets, valid = fine_supervision(gt, Fine())  # type: ignore[arg-type]
        np.testing.assert_array_equal(valid, [True, False])
        np.testing.assert_allclose(targets[0], [2.0, 2.0], atol=1e-9)


class TestPairGradients:
    def test_teacher_has_no_distillation_terms(self, source):
        teacher = Matcher.initialise(toy_matcher_config(input_channels=4))
        pair_id = source.pair_ids()[0]
        gt = prepare_ground_truth(source, 5)[pair_id]
        grads, losses = pair_gradients(teacher, source.get_pair(pair_id), gt, toy_train_config())
        assert losses.mqd == 0.0 and losses.attentive == 0.0
        assert losses.total == pytest.approx(0.25 * losses.coarse + 0.25 * losses.fine)
        assert len(grads) == len(teacher.params)

    def test_student_distillation_terms(self, source, teacher):
        student = Matcher.initialise(toy_matcher_config(match_threshold=1e-6), seed=1)
        pair_id = source.pair_ids()[0]
        gt = prepare_ground_truth(source, 5)[pair_id]
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm")
        _, losses = pair_gradients(student, source.get_pair(pair_id), gt, config, teacher)
        assert losses.mqd > 0.0
        assert losses.attentive > 0.0
        w = config.weights
        expected = w.coarse * losses.coarse + w.fine * losses.fine
        expected += w.mqd * losses.mqd + w.attentive * losses.attentive
        assert losses.total == pytest.approx(expected)

    def test_disabled_terms(self, source, teacher):
        student = Matcher.initialise(toy_matcher_config(match_threshold=1e-6), seed=1)
        pair_id = source.pair_ids()[0]
        gt = prepare_ground_truth(source, 5)[pair_id]
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm", use_mqd=False)
        _, losses = pair_gradients(student, source.get_pair(pair_id), gt, config, teacher)
        assert losses.mqd == 0.0
        assert losses.attentive > 0.0

    def test_attentive_term_covers_predicted_matches_only(self, source, teacher):
        student = Matcher.initialise(toy_matcher_config(match_threshold=1e-6), seed=1)
        pair_id = source.pair_ids()[0]
        pair = source.get_pair(pair_id)
        gt = prepare_ground_truth(source, 5)[pair_id]
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm", use_mqd=False)
        _, losses = pair_gradients(student, pair, gt, config, teacher)

        with no_grad():
            result = match_pair(
                *model_inputs(pair, 3), student.params, student.config, extra=gt.matches
            )
            keep = np.flatnonzero(result.fine.predicted)
            rgbd_a, rgbd_b = model_inputs(pair, 4)
            t_features = forward_features(rgbd_a, rgbd_b, teacher.params, teacher.config)
            t_fine = refine(
                teacher.params,
                teacher.config,
                t_features,
                result.fine.i[keep],
                result.fine.j[keep],
            )
            expected = attentive_loss(
                result.fine.expectation[keep], t_fine.expectation.data, t_fine.variance.data
            )
        assert len(keep) > 0
        assert losses.attentive == pytest.approx(expected.item())


class TestTrainerChecks:
    def test_role_fixes_input_channels(self, source):
        with pytest.raises(ConfigurationError, match="4-channel"):
            Trainer(Matcher.initialise(toy_matcher_config()), toy_train_config(), source)

    def test_student_needs_teacher(self, source):
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm")
        with pytest.raises(ConfigurationError, match="needs a teacher"):
            Trainer(Matcher.initialise(toy_matcher_config()), config, source)

    def test_teacher_must_be_rgbd(self, source):
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm")
        rgb = Matcher.initialise(toy_matcher_config())
        with pytest.raises(ConfigurationError, match="RGB-D"):
            Trainer(Matcher.initialise(toy_matcher_config()), config, source, teacher=rgb)

    def test_window_must_agree(self, source):
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm")
        teacher = Matcher.initialise(toy_matcher_config(input_channels=4, window=3))
        with pytest.raises(ConfigurationError, match="window"):
            Trainer(Matcher.initialise(toy_matcher_config()), config, source, teacher=teacher)

    def test_no_trainable_pairs(self):
        rgbd = Matcher.initialise(toy_matcher_config(input_channels=4))
        with pytest.raises(ConfigurationError, match="no trainable pairs"):
            Trainer(rgbd, toy_train_config(), ListSource([_occluded_pair()]))

    def test_missing_dataset(self):
        with pytest.raises(ConfigurationError, match="no training dataset"):
            train_teacher(toy_train_config(), toy_matcher_config())


class TestTraining:
    def test_teacher_is_rgbd_and_changes(self, source, teacher):
        assert teacher.config.input_channels == 4
        initial = Matcher.initialise(teacher.config, seed=0)
        assert not _params_equal(initial.params, teacher.params)

    def test_overfits_a_single_pair(self):
        trainer = train_baseline(
            toy_train_config(epochs=30), toy_matcher_config(), source=toy_source(n_pairs=1)
        )
        assert len(trainer.history) == 30
        assert trainer.history[-1].coarse < 0.5 * trainer.history[0].coarse

    def test_deterministic(self, source):
        first = train_baseline(toy_train_config(seed=3), toy_matcher_config(), source=source)
        second = train_baseline(toy_train_config(seed=3), toy_matcher_config(), source=source)
        assert _params_equal(first.matcher.params, second.matcher.params)

    def test_threads_do_not_change_result(self, source):
        serial = train_baseline(toy_train_config(), toy_matcher_config(), source=source)
        threaded = train_baseline(toy_train_config(threads=2), toy_matcher_config(), source=source)
        assert _params_equal(serial.matcher.params, threaded.matcher.params)

    def test_student_leaves_teacher_untouched(self, source, teacher):
        before = teacher.params.arrays()
        trainer = train_student(toy_train_config(), toy_matcher_config(), teacher, source=source)
        assert trainer.matcher.config.input_channels == 3
        assert trainer.config.role == "student"
        for name, value in before.items():
            np.testing.assert_array_equal(teacher.params[name].data, value)
        assert all(not t.requires_grad for t in teacher.params.values())

    def test_zero_weight_student_matches_baseline(self, source, teacher):
        weights = LossWeights(mqd=0.0, attentive=0.0)
        config = toy_train_config(weights=weights, seed=2)
        student = train_student(config, toy_matcher_config(), teacher, source=source)
        baseline = train_baseline(config, toy_matcher_config(), source=source)
        assert _params_equal(student.matcher.params, baseline.matcher.params)

    def test_student_flags_are_dropped_for_other_roles(self, source):
        config = toy_train_config(role="student", teacher_checkpoint="t.stfm", use_mqd=False)
        trainer = train_baseline(config, toy_matcher_config(), source=source)
        assert trainer.config.role == "unimodal-baseline"
        assert trainer.config.use_mqd is None

    def test_log_and_checkpoint(self, tmp_path: Path, source):
        log_path = tmp_path / "train_log.jsonl"
        ckpt = tmp_path / "teacher.stfm"
        trainer = train_teacher(
            toy_train_config(epochs=2),
            toy_matcher_config(),
            checkpoint_path=ckpt,
            log_path=log_path,
            source=source,
            validation=toy_source(1, seed=9),
        )
        lines = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert [line["epoch"] for line in lines] == [1, 2]
        assert {"L_c", "L_f", "L_MQD", "L_att", "total", "wall_time_s", "val_L_c"} <= set(lines[0])
        assert len(trainer.history) == 2
        loaded = load_checkpoint(ckpt)
        for name in trainer.matcher.params:
            np.testing.assert_allclose(
                loaded.params[name].data, trainer.matcher.params[name].data, rtol=1e-6, atol=1e-7
            )

    def test_student_from_checkpoint_path(self, tmp_path: Path, source, teacher):
        path = tmp_path / "teacher.stfm"
        save_checkpoint(teacher.params, teacher.config, path)
        trainer = train_student(toy_train_config(), toy_matcher_config(), path, source=source)
        assert trainer.config.teacher_checkpoint == path
        assert trainer.teacher is not None
        assert trainer.teacher.config == teacher.config

    def test_losses_are_finite(self, source):
        trainer = train_baseline(toy_train_config(epochs=2), toy_matcher_config(), source=source)
        for entry in trainer.history:
            assert np.isfinite(entry.total)
            assert entry.val_coarse is None
