import math

import numpy as np
import pytest
import torch

from talesumm.core.errors import LabelError, ShapeError, SplitError, TrainingDivergedError
from talesumm.data.synth import SynthConfig, synth_generate
from talesumm.model.config import DropoutConfig, TaleSummConfig
from talesumm.model.loss import compute_loss, positive_weight, weighted_bce
from talesumm.model.talesumm import EpisodeScores
from talesumm.model.trainer import LabeledEpisode, TrainConfig, Trainer, evaluate_split, train
from talesumm.processor.label_builder import LabelSet

from conftest import random_episode, tiny_config


def labeled(seed: int = 0, num_shots: int = 4, num_utterances: int = 3) -> LabeledEpisode:
    rng = np.random.default_rng(seed)
    shots = np.zeros(num_shots)
    shots[rng.integers(num_shots)] = 1.0
    dialogs = np.zeros(num_utterances)
    if num_utterances:
        dialogs[rng.integers(num_utterances)] = 1.0
    return LabeledEpisode(
        random_episode(num_shots, num_utterances, seed=seed, episode_id=f"ep{seed}"),
        LabelSet(shots, dialogs),
    )


class TestLoss:
    def test_positive_weight(self):
        assert positive_weight(np.array([1, 0, 0, 0])) == 3.0
        assert positive_weight(np.array([1, 1, 0, 0])) == 1.0
        assert positive_weight(np.array([0.2, 0.1])) == 2.0

    def test_hand_evaluated_term(self):
        loss = weighted_bce(torch.tensor([0.5]), torch.tensor([1.0]), pos_weight=2.0)
        assert loss.item() == pytest.approx(2 * math.log(2), abs=1e-6)

    def test_perfect_predictions_are_nearly_free(self):
        predictions = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
        loss = weighted_bce(predictions, predictions.clone(), pos_weight=5.0)
        assert loss.item() < 1e-6

    def test_rejects_non_probabilities(self):
        with pytest.raises(LabelError):
            weighted_bce(torch.tensor([1.5]), torch.tensor([1.0]), 1.0)
        with pytest.raises(LabelError):
            weighted_bce(torch.tensor([math.nan]), torch.tensor([1.0]), 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_bce(torch.tensor([0.5, 0.5]), torch.tensor([1.0]), 1.0)

    def test_modalities_are_summed(self):
        scores = EpisodeScores(torch.tensor([0.5, 0.5]), torch.tensor([0.5]))
        labels = LabelSet(np.array([1.0, 0.0]), np.array([0.0]))
        expected = math.log(2) + math.log(2)
        assert compute_loss(scores, labels).item() == pytest.approx(expected, abs=1e-6)

    def test_missing_modality_contributes_nothing(self):
        scores = EpisodeScores(torch.tensor([0.5, 0.5]), torch.zeros(0))
        labels = LabelSet(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert compute_loss(scores, labels).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_label_count_mismatch(self):
        scores = EpisodeScores(torch.tensor([0.5]), torch.zeros(0))
        with pytest.raises(ShapeError):
            compute_loss(scores, LabelSet(np.array([1.0, 0.0]), np.zeros(0)))


class TestTrainer:
    def test_step_bookkeeping(self):
        result = train([labeled()], [], tiny_config(), TrainConfig(epochs=65, batch_size=4))
        assert result.steps == 65
        assert len(result.history) == 65
        assert [r.epoch for r in result.history] == list(range(1, 66))

    def test_batches_per_epoch(self):
        episodes = [labeled(seed) for seed in range(5)]
        result = train(episodes, [], tiny_config(), TrainConfig(epochs=2, batch_size=2))
        assert result.steps == 6

    def test_same_seed_same_run(self):
        episodes = [labeled(seed) for seed in range(3)]
        config = TrainConfig(epochs=3, batch_size=2, seed=11)
        model_config = tiny_config(dropout=DropoutConfig())
        first = Trainer(model_config, config).fit(episodes)
        second = Trainer(model_config, config).fit(episodes)
        assert [r.train_loss for r in first.history] == [r.train_loss for r in second.history]
        for (name, a), (_, b) in zip(
            first.model.state_dict().items(), second.model.state_dict().items()
        ):
            assert torch.equal(a, b), name

    def test_validation_drives_selection(self):
        episodes = [labeled(seed) for seed in range(3)]
        result = train(episodes[:2], episodes[2:], tiny_config(), TrainConfig(epochs=4, batch_size=1))
        assert all(r.val_video_ap is not None for r in result.history)
        best = max(result.history, key=lambda r: np.mean([r.val_video_ap, r.val_dialog_ap]))
        assert result.best_epoch == best.epoch

    def test_learning_rate_follows_the_schedule(self):
        result = train([labeled()], [], tiny_config(), TrainConfig(epochs=10, max_lr=1e-3))
        lrs = [r.lr for r in result.history]
        assert lrs[0] == pytest.approx(1e-3 / 25)
        assert max(lrs) == pytest.approx(1e-3)

    def test_empty_training_set(self):
        with pytest.raises(SplitError):
            Trainer(tiny_config()).fit([])

    def test_divergence_reports_diagnostics(self):
        trainer = Trainer(tiny_config(), TrainConfig(epochs=1))
        with torch.no_grad():
            trainer.model.classifier.bias.fill_(math.nan)
        with pytest.raises(TrainingDivergedError) as info:
            trainer.fit([labeled(7)])
        assert info.value.diagnostics["episodes"] == ["ep7"]
        assert info.value.diagnostics["step"] == 0

    def test_evaluate_split_skips_episodes_without_positives(self, config):
        empty = LabeledEpisode(random_episode(), LabelSet(np.zeros(4), np.zeros(3)))
        trainer = Trainer(config)
        assert evaluate_split(trainer.model, [empty]) == (None, None)


@pytest.mark.slow
def test_overfits_three_planted_episodes():
    items = []
    for seed in range(3):
        bundle = synth_generate(SynthConfig(seed=seed, num_shots=120, num_utterances=80))
        items.append(LabeledEpisode(bundle.episode, bundle.labels))
    model_config = TaleSummConfig(
        d_model=32,
        heads=4,
        episode_layers=2,
        group_size=20,
        dropout=DropoutConfig(proj=0.0, attn=0.0, head=0.0),
        backbone_dims=[16, 12, 8],
        utterance_dim=24,
        max_duration=800.0,
        max_groups=16,
    )
    config = TrainConfig(epochs=200, batch_size=1, lr=1e-3, max_lr=5e-3, weight_decay=0.0, seed=0)
    trainer = Trainer(model_config, config)

    def mean_loss(model):
        with torch.no_grad():
            return float(np.mean([compute_loss(model.predict(i.features), i.labels).item() for i in items]))

    initial = mean_loss(trainer.model)
    result = trainer.fit(items)

    assert mean_loss(result.model) < 0.1 * initial
    video_ap, _ = evaluate_split(result.model, items)
    assert video_ap > 0.95
