import math

import numpy as np
import pytest
import torch

from talesumm.core.errors import ConfigMismatchError, ShapeError
from talesumm.core.tensor_ops import finite_difference_check, make_generator
from talesumm.model.config import DropoutConfig, TaleSummConfig
from talesumm.model.encoders import (
    FrameFusion,
    ShotEncoder,
    UtteranceEncoder,
    encode_shot,
    encode_utterance,
    fuse_frame_features,
    sample_frames,
)
from talesumm.model.grouping import build_attention_mask, build_group_partition
from talesumm.model.loss import compute_loss
from talesumm.model.talesumm import TaleSumm, episode_forward, predict
from talesumm.processor.label_builder import LabelSet

from conftest import random_episode, tiny_config


class TestSampleFrames:
    def test_under_cap_keeps_everything(self):
        assert sample_frames(10, train=False) == list(range(10))
        assert sample_frames(10, train=True, generator=make_generator(0)) == list(range(10))

    def test_inference_is_evenly_spaced(self):
        picked = sample_frames(50, train=False)
        assert picked == [int(j * 49 / 24 + 0.5) for j in range(25)]
        assert picked[0] == 0 and picked[-1] == 49

    def test_inference_rounds_half_up(self):
        # 12 * 49 / 24 = 24.5 exactly
        assert sample_frames(50, train=False)[12] == 25
        assert sample_frames(4, train=False, cap=3) == [0, 2, 3]

    def test_training_draws_sorted_distinct_subsets(self):
        a = sample_frames(50, train=True, generator=make_generator(1))
        b = sample_frames(50, train=True, generator=make_generator(2))
        assert len(a) == len(set(a)) == 25
        assert a == sorted(a)
        assert a != b

    def test_zero_frames(self):
        with pytest.raises(ShapeError):
            sample_frames(0, train=False)


def toy_fusion(logit_bias):
    config = TaleSummConfig(d_model=2, heads=1, backbone_dims=[1, 1, 1], utterance_dim=2)
    fusion = FrameFusion(config)
    with torch.no_grad():
        for linear, weight in zip(fusion.projections, ([[1.0], [0.0]], [[0.0], [1.0]], [[1.0], [1.0]])):
            linear.weight.copy_(torch.tensor(weight))
            linear.bias.zero_()
        fusion.scorer.weight.zero_()
        fusion.scorer.bias.copy_(torch.tensor(logit_bias))
    return fusion


class TestFrameFusion:
    def test_zero_scorer_gives_uniform_weights(self):
        fused, alpha = fuse_frame_features([torch.ones(1)] * 3, toy_fusion([0.0, 0.0, 0.0]))
        assert torch.allclose(alpha, torch.full((3,), 1 / 3))
        assert torch.allclose(fused, torch.tensor([2 / 3, 2 / 3]))

    def test_hand_computed_weights(self):
        fusion = toy_fusion([math.atanh(math.log(2.0)), 0.0, 0.0])
        fused, alpha = fusion([torch.ones(1)] * 3)
        assert torch.allclose(alpha, torch.tensor([0.5, 0.25, 0.25]), atol=1e-6)
        assert torch.allclose(fused, torch.tensor([0.75, 0.5]), atol=1e-6)

    def test_weights_are_a_distribution(self):
        torch.manual_seed(0)
        fusion = FrameFusion(tiny_config())
        frames = [torch.randn(9, d) for d in (6, 5, 4)]
        fused, alpha = fusion(frames)
        assert fused.shape == (9, 8)
        assert (alpha > 0).all()
        assert torch.allclose(alpha.sum(dim=-1), torch.ones(9), atol=1e-6)

    @pytest.mark.parametrize("mode", ["avg", "max", "stack"])
    def test_other_fusion_modes(self, mode):
        fusion = FrameFusion(tiny_config(fusion=mode))
        fused, alpha = fusion([torch.randn(4, d) for d in (6, 5, 4)])
        assert fused.shape == (4, 8)
        assert (alpha is None) == (mode != "stack")

    def test_width_mismatch(self):
        fusion = FrameFusion(tiny_config())
        with pytest.raises(ShapeError):
            fusion([torch.randn(2, 6), torch.randn(2, 5), torch.randn(2, 9)])


class TestShotAndUtteranceEncoders:
    def test_frame_order_matters(self):
        torch.manual_seed(0)
        encoder = ShotEncoder(tiny_config())
        frames = [torch.randn(4, d) for d in (6, 5, 4)]
        flipped = [f.flip(0) for f in frames]
        assert not torch.allclose(encode_shot(frames, encoder), encode_shot(flipped, encoder))

    def test_zero_residuals_pass_the_cls_token_through(self):
        torch.manual_seed(0)
        encoder = ShotEncoder(tiny_config())
        for layer in encoder.encoder.layers:
            layer.zero_residual_branches()
        layer = encoder.encoder.layers[0]
        out = encode_shot([torch.randn(1, d) for d in (6, 5, 4)], encoder)
        expected = layer.norm2(layer.norm1(encoder.cls_token))
        assert torch.allclose(out, expected, atol=1e-6)

    def test_batched_padding_matches_single_shots(self):
        torch.manual_seed(0)
        encoder = ShotEncoder(tiny_config())
        short = [torch.randn(2, d) for d in (6, 5, 4)]
        long = [torch.randn(5, d) for d in (6, 5, 4)]
        padded = [torch.stack([torch.cat([s, torch.zeros(3, s.shape[1])]), l]) for s, l in zip(short, long)]
        batched = encoder(padded, torch.tensor([2, 5]))
        assert torch.allclose(batched[0], encode_shot(short, encoder), atol=1e-5)
        assert torch.allclose(batched[1], encode_shot(long, encoder), atol=1e-5)

    def test_zero_frames_rejected(self):
        encoder = ShotEncoder(tiny_config())
        with pytest.raises(ShapeError):
            encode_shot([torch.zeros(0, d) for d in (6, 5, 4)], encoder)

    def test_utterance_mean(self):
        encoder = UtteranceEncoder(tiny_config(utterance_dim=2, d_model=2))
        with torch.no_grad():
            encoder.projection.weight.copy_(torch.eye(2))
            encoder.projection.bias.zero_()
        out = encode_utterance(torch.tensor([[1.0, 0.0], [0.0, 1.0]]), encoder)
        assert torch.allclose(out, torch.tensor([0.5, 0.5]))

    def test_utterance_order_and_repeats(self):
        torch.manual_seed(0)
        encoder = UtteranceEncoder(tiny_config())
        tokens = torch.randn(5, 7)
        base = encode_utterance(tokens, encoder)
        assert torch.allclose(encode_utterance(tokens[[4, 2, 0, 1, 3]], encoder), base, atol=1e-6)
        single = tokens[:1].repeat(3, 1)
        assert torch.allclose(encode_utterance(single, encoder), encoder.projection(tokens[0]), atol=1e-6)

    def test_zero_tokens_rejected(self):
        with pytest.raises(ShapeError):
            encode_utterance(torch.zeros(0, 7), UtteranceEncoder(tiny_config()))


class TestGroupPartition:
    def test_two_full_blocks(self):
        spans = [(i, i + 1.0) for i in range(40)]
        partition = build_group_partition(spans, [], group_size=20)
        assert partition.num_groups == 2
        assert partition.sequence_length == 42
        assert partition.group_slots() == [20, 41]

    def test_remainder_block(self):
        spans = [(i, i + 1.0) for i in range(41)]
        partition = build_group_partition(spans, [], group_size=20)
        assert partition.block_sizes == [20, 20, 1]

    def test_shot_precedes_dialog_at_equal_mid(self):
        partition = build_group_partition([(4.0, 6.0)], [(4.5, 5.5)], group_size=20)
        assert [t.modality for t in partition.tokens] == ["shot", "dialog"]

    def test_interleaving_follows_time(self):
        partition = build_group_partition(
            [(0.0, 2.0), (2.0, 4.0), (4.0, 6.0)], [(0.5, 1.0), (5.5, 6.0)], group_size=2
        )
        order = [(t.modality, t.index) for t in partition.tokens]
        assert order == [("dialog", 0), ("shot", 0), ("shot", 1), ("shot", 2), ("dialog", 1)]
        assert partition.positions_of("shot") == [1, 3, 4]

    def test_without_group_tokens(self):
        partition = build_group_partition([(i, i + 1.0) for i in range(5)], [], 2, use_group_tokens=False)
        assert partition.sequence_length == 5
        assert partition.group_slots() == []

    def test_no_tokens(self):
        with pytest.raises(ShapeError):
            build_group_partition([], [], group_size=20)


class TestAttentionMask:
    def test_single_block_is_dense(self):
        partition = build_group_partition([(i, i + 1.0) for i in range(5)], [], group_size=20)
        assert build_attention_mask(partition).all()

    def test_two_blocks(self):
        partition = build_group_partition([(i, i + 1.0) for i in range(4)], [], group_size=2)
        mask = build_attention_mask(partition).int()
        expected = torch.tensor(
            [
                [1, 1, 1, 0, 0, 0],
                [1, 1, 1, 0, 0, 0],
                [1, 1, 1, 0, 0, 1],
                [0, 0, 0, 1, 1, 1],
                [0, 0, 0, 1, 1, 1],
                [0, 0, 1, 1, 1, 1],
            ]
        )
        assert torch.equal(mask, expected)

    def test_cellwise_on_random_partitions(self):
        rng = np.random.default_rng(0)
        for trial in range(1000):
            num_shots = int(rng.integers(0, 30))
            num_dialogs = int(rng.integers(0 if num_shots else 1, 30))
            group_size = int(rng.integers(2, 12))
            use_group_tokens = bool(rng.random() < 0.8)
            link = bool(rng.random() < 0.8)
            shots = sorted(rng.uniform(0, 100, size=num_shots))
            dialogs = sorted(rng.uniform(0, 100, size=num_dialogs))
            partition = build_group_partition(
                [(t, t + 0.5) for t in shots],
                [(t, t + 0.5) for t in dialogs],
                group_size,
                use_group_tokens=use_group_tokens,
            )
            total = num_shots + num_dialogs
            owner, indicator = [], []
            for g, start in enumerate(range(0, total, group_size)):
                size = min(group_size, total - start)
                owner += [g] * (size + use_group_tokens)
                indicator += [0] * size + [1] * use_group_tokens
            assert partition.group_indicator == indicator

            owner, flags = np.array(owner), np.array(indicator, dtype=bool)
            expected = owner[:, None] == owner[None, :]
            if link:
                expected |= flags[:, None] & flags[None, :]
            mask = build_attention_mask(partition, link_group_tokens=link)
            assert np.array_equal(mask.numpy(), expected), trial

    def test_full_attention(self):
        partition = build_group_partition([(i, i + 1.0) for i in range(6)], [], group_size=2)
        assert build_attention_mask(partition, attention="full").all()


class TestAssembleTokens:
    def test_zero_tables_leave_layer_normed_vectors(self):
        torch.manual_seed(0)
        model = TaleSumm(tiny_config())
        with torch.no_grad():
            model.type_embedding.zero_()
            model.group_embedding.zero_()
            model.group_query.zero_()
            model.time_embedding.zero_()
        partition = build_group_partition([(0.0, 2.0), (2.0, 4.0)], [(1.0, 1.5)], group_size=2)
        shots, utterances = torch.randn(2, 8), torch.randn(1, 8)
        out = model.assemble_tokens(shots, utterances, partition)
        norm = model.input_norm
        assert torch.allclose(out[0], norm(shots[0]), atol=1e-6)
        assert torch.allclose(out[1], norm(utterances[0]), atol=1e-6)
        assert torch.allclose(out[2], torch.zeros(8), atol=1e-6)
        assert torch.allclose(out[3], norm(shots[1]), atol=1e-6)

    def test_time_bins_floor(self):
        model = TaleSumm(tiny_config(max_duration=10.0))
        partition = build_group_partition(
            [(0.0, 0.0), (3.0, 3.4), (3.6, 4.2), (0.5, 1.5)], [], group_size=20
        )
        assert model.time_bins_of(partition).tolist() == [0, 1, 3, 3]

    def test_time_bin_overflow_names_the_element(self):
        model = TaleSumm(tiny_config(max_duration=10.0))
        partition = build_group_partition([(0.0, 2.0), (11.0, 13.0)], [], group_size=20)
        with pytest.raises(ShapeError, match="shot 1"):
            model.time_bins_of(partition)


class TestEpisodeForward:
    def test_output_shapes_and_range(self, config, episode):
        torch.manual_seed(0)
        scores = episode_forward(episode, TaleSumm(config))
        assert scores.shot_scores.shape == (4,)
        assert scores.dialog_scores.shape == (3,)
        for values in (scores.shot_scores, scores.dialog_scores):
            assert ((values > 0) & (values < 1)).all()

    @pytest.mark.parametrize("bias", [100.0, -100.0])
    def test_saturated_classifier_stays_inside_the_unit_interval(self, config, episode, bias):
        model = TaleSumm(config)
        with torch.no_grad():
            model.classifier.bias.fill_(bias)
        scores = model.predict(episode)
        for values in (scores.shot_scores, scores.dialog_scores):
            assert ((values > 0) & (values < 1)).all()

    def test_inference_is_deterministic(self, config, episode):
        model = TaleSumm(config)
        a, b = predict(episode, model), predict(episode, model)
        assert torch.equal(a.shot_scores, b.shot_scores)
        assert torch.equal(a.dialog_scores, b.dialog_scores)

    def test_seeded_training_forward_is_reproducible(self):
        model = TaleSumm(tiny_config(dropout=DropoutConfig()))
        episode = random_episode(frames=9)
        a = episode_forward(episode, model, train=True, generator=make_generator(5))
        b = episode_forward(episode, model, train=True, generator=make_generator(5))
        assert torch.equal(a.shot_scores, b.shot_scores)

    def test_single_shot_without_dialog(self, config):
        scores = predict(random_episode(num_shots=1, num_utterances=0), TaleSumm(config))
        assert scores.shot_scores.shape == (1,)
        assert scores.dialog_scores.numel() == 0

    def test_video_only_model(self, episode):
        model = TaleSumm(tiny_config(modalities=["video"]))
        assert model.utterance_encoder is None
        scores = predict(episode, model)
        assert scores.shot_scores.shape == (4,)
        assert scores.dialog_scores.numel() == 0

    def test_padding_invariance(self, config):
        torch.manual_seed(0)
        model = TaleSumm(config)
        small = random_episode(num_shots=3, num_utterances=2, seed=1)
        large = random_episode(num_shots=9, num_utterances=7, seed=2, frames=5)
        solo = model.predict(small)
        with torch.no_grad():
            batched = model([small, large])[0]
        assert torch.allclose(batched.shot_scores, solo.shot_scores, atol=1e-5)
        assert torch.allclose(batched.dialog_scores, solo.dialog_scores, atol=1e-5)

    def test_blocks_are_isolated_without_linked_group_tokens(self):
        torch.manual_seed(0)
        model = TaleSumm(tiny_config(link_group_tokens=False, group_size=2))
        with torch.no_grad():
            model.group_query.zero_()
            model.group_embedding.zero_()
        episode = random_episode(num_shots=4, num_utterances=0)
        base = model.predict(episode)
        with torch.no_grad():
            episode.shots[3].frames[0].mul_(-5.0)
        changed = model.predict(episode)
        assert torch.equal(changed.shot_scores[:2], base.shot_scores[:2])
        assert not torch.allclose(changed.shot_scores[3], base.shot_scores[3])

    def test_dimension_mismatch(self, config):
        episode = random_episode(backbones=[6, 5, 3])
        with pytest.raises(ConfigMismatchError):
            predict(episode, TaleSumm(config))

    def test_too_many_groups(self):
        model = TaleSumm(tiny_config(max_groups=2))
        with pytest.raises(ShapeError):
            predict(random_episode(), model)

    def test_invalid_frames_are_skipped(self, config):
        torch.manual_seed(0)
        model = TaleSumm(config)
        episode = random_episode(num_shots=2, num_utterances=0)
        base = model.predict(episode)
        episode.shots[0].validity = torch.tensor([True, True, False])
        with torch.no_grad():
            for frames in episode.shots[0].frames:
                frames[2] = 1e3
        trimmed = random_episode(num_shots=2, num_utterances=0)
        for k, frames in enumerate(trimmed.shots[0].frames):
            trimmed.shots[0].frames[k] = frames[:2]
        assert torch.allclose(model.predict(episode).shot_scores, model.predict(trimmed).shot_scores)
        assert not torch.allclose(model.predict(episode).shot_scores, base.shot_scores)


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    config = tiny_config(max_groups=3, max_duration=20.0)
    model = TaleSumm(config).double()
    episode = random_episode(num_shots=4, num_utterances=3, dtype=torch.float64)
    labels = LabelSet(np.array([1.0, 0.0, 0.5, 0.0]), np.array([0.0, 1.0, 0.0]))

    def loss_fn():
        return compute_loss(episode_forward(episode, model), labels)

    errors = finite_difference_check(loss_fn, model.named_parameters())
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, worst
