"""Training-loop contracts: the no-op law, compositional loss oracles,
ablation flags, reproducibility, evaluation CIs, and the CLS dump."""

import numpy as np
import pytest

from scamnet.checkpoint import load_checkpoint
from scamnet.classifier import apply_mask, class_logits, similarity_matrix
from scamnet.consolidation import init_dual_state
from scamnet.encoder import EncoderConfig, encode
from scamnet.episodic import Dataset, DatasetStore, sample_episode
from scamnet.errors import ConfigError, NumericalError
from scamnet.harness import (
    EvalReport,
    TrainConfig,
    dump_cls,
    episode_loss,
    evaluate,
    train,
)
from scamnet.memory import LongTermMemory, cls_prediction, regulate
from scamnet.numerics import cross_entropy, make_generator, mse, no_grad
from scamnet.numerics.rng import STREAM_TRAIN_EPISODES


def tiny_train_config(tmp_path=None, **overrides):
    encoder = EncoderConfig(
        image_height=8, image_width=8, channels=1, patch_size=4,
        embed_dim=8, depth=1, heads=2, seed=3,
    )
    base = dict(
        encoder=encoder,
        n_way=2,
        k_shot=1,
        q_queries=2,
        steps=3,
        learning_rate=0.01,
        seed=5,
        out_dir=None if tmp_path is None else str(tmp_path),
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def train_split(tiny_store):
    return tiny_store["train"]


class TestTrainConfig:
    def test_defaults_follow_protocol(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 0.0002
        assert cfg.ema_decay == 0.99
        assert cfg.cls_weight_init == 0.2
        assert cfg.tau_init == 1.0
        assert cfg.consistency == "mse"
        assert cfg.cls_metric == "cosine"

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown train"):
            TrainConfig.from_dict({"stepz": 10})
        with pytest.raises(ConfigError, match="unknown encoder"):
            TrainConfig.from_dict({"encoder": {"imagez": 3}})

    def test_flag_consistency(self):
        with pytest.raises(ConfigError, match="memory_regulation"):
            TrainConfig(cls_head=False, memory_regulation=True)

    def test_round_trip(self):
        cfg = tiny_train_config()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestTrainLoop:
    def test_zero_learning_rate_is_parameter_noop(self, train_split):
        cfg = tiny_train_config(learning_rate=0.0, steps=4)
        fresh = init_dual_state(
            cfg.encoder,
            tau_init=cfg.tau_init,
            cls_weight_init=cfg.cls_weight_init,
            ema_decay=cfg.ema_decay,
            learning_rate=0.0,
        )
        result = train(cfg, train_split)
        assert result.state.hippocampus.checksum() == fresh.hippocampus.checksum()
        # EMA of two equal parameter sets stays equal, hence also unchanged
        assert result.state.neocortex.checksum() == fresh.neocortex.checksum()

    def test_memory_holds_one_entry_per_seen_class(self, train_split):
        cfg = tiny_train_config(steps=40)
        result = train(cfg, train_split)
        assert len(result.memory) == train_split.n_classes
        assert set(result.memory.entries) <= set(train_split.labels)
        assert all(c >= 1 for c in result.memory.update_counts.values())

    def test_metrics_stream_reproducible(self, train_split):
        cfg = tiny_train_config()
        a = train(cfg, train_split)
        b = train(cfg, train_split)
        assert a.metrics_digest == b.metrics_digest
        assert a.state.hippocampus.checksum() == b.state.hippocampus.checksum()
        assert a.state.neocortex.checksum() == b.state.neocortex.checksum()

    def test_different_seed_changes_stream(self, train_split):
        a = train(tiny_train_config(), train_split)
        b = train(tiny_train_config(seed=6), train_split)
        assert a.metrics_digest != b.metrics_digest

    def test_writes_outputs(self, train_split, tmp_path):
        cfg = tiny_train_config(tmp_path=tmp_path / "run")
        train(cfg, train_split)
        out = tmp_path / "run"
        assert (out / "metrics.csv").exists()
        assert (out / "timing.csv").exists()
        assert (out / "checkpoint" / "checkpoint.json").exists()
        assert (out / "train_config.json").exists()
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + cfg.steps
        assert lines[0].startswith("step,l_ce,l_cons,l_cls,total")

    def test_nonfinite_data_halts_with_checkpoint(self, tmp_path):
        bad = np.full((4, 8, 8, 1), np.nan, dtype=np.float32)
        ds = Dataset(
            split="train",
            labels=["a", "b"],
            images={"a": bad.copy(), "b": bad.copy()},
        )
        cfg = tiny_train_config(tmp_path=tmp_path / "run", steps=2)
        with pytest.raises(NumericalError):
            train(cfg, ds)
        assert (tmp_path / "run" / "checkpoint_last_good" / "checkpoint.json").exists()


class TestCompositionalOracle:
    """Recompute a step's losses from the per-query reference operations."""

    def recompute_losses(self, state, memory, episode, config):
        n, k = episode.n_way, episode.k_shot
        tau_h = float(state.hippocampus.temperature().data)
        tau_n = float(state.neocortex.temperature().data)

        def per_query_probs(model, tau):
            support = [
                [
                    encode(
                        episode.support_images[c * k + s],
                        model,
                        image_id=int(episode.support_ids[c * k + s]),
                    )
                    for s in range(k)
                ]
                for c in range(n)
            ]
            out = []
            for q in range(episode.query_images.shape[0]):
                query = encode(
                    episode.query_images[q], model, image_id=int(episode.query_ids[q])
                )
                blocks = apply_mask(similarity_matrix(support, query), query.image_id)
                out.append(class_logits(blocks, tau).probabilities)
            return np.stack(out), support

        with no_grad():
            probs_h, support_h = per_query_probs(state.hippocampus, tau_h)
            probs_n, _ = per_query_probs(state.neocortex, tau_n)
        l_ce = np.mean(
            [cross_entropy(p, int(t)) for p, t in zip(probs_h, episode.query_labels)]
        )
        l_cons = np.mean([mse(a, b) for a, b in zip(probs_h, probs_n)])

        class_means = np.stack(
            [
                np.mean([img.cls.data for img in shots], axis=0)
                for shots in support_h
            ]
        )
        _, protos = regulate(memory, episode.class_labels, class_means)
        c_opt = protos.c_opt.data
        with no_grad():
            query_cls = [
                encode(episode.query_images[q], state.hippocampus).cls.data
                for q in range(episode.query_images.shape[0])
            ]
        l_cls = np.mean(
            [
                cross_entropy(
                    cls_prediction(c_opt, qc, "cosine").probabilities, int(t)
                )
                for qc, t in zip(query_cls, episode.query_labels)
            ]
        )
        return l_ce, l_cons, l_cls

    def test_first_and_second_step_losses(self, train_split, tmp_path):
        cfg1 = tiny_train_config(tmp_path=tmp_path / "one", steps=1)
        result1 = train(cfg1, train_split)
        cfg2 = tiny_train_config(steps=2)
        result2 = train(cfg2, train_split)

        # identical prefixes: step 0 of both runs must agree exactly
        assert result1.metrics[0].csv_row() == result2.metrics[0].csv_row()

        rng = make_generator(cfg1.seed, STREAM_TRAIN_EPISODES)
        episode1 = sample_episode(train_split, cfg1.n_way, cfg1.k_shot, cfg1.q_queries, rng)
        episode2 = sample_episode(train_split, cfg1.n_way, cfg1.k_shot, cfg1.q_queries, rng)

        # step 0: both models identical at init
        state0 = init_dual_state(
            cfg1.encoder,
            tau_init=cfg1.tau_init,
            cls_weight_init=cfg1.cls_weight_init,
            ema_decay=cfg1.ema_decay,
            learning_rate=cfg1.learning_rate,
        )
        l_ce, l_cons, l_cls = self.recompute_losses(
            state0, LongTermMemory(), episode1, cfg1
        )
        row0 = result2.metrics[0]
        assert row0.l_ce == pytest.approx(l_ce, abs=2e-5)
        assert row0.l_cons == pytest.approx(0.0, abs=1e-12)
        assert l_cons == pytest.approx(0.0, abs=1e-12)
        assert row0.l_cls == pytest.approx(l_cls, abs=2e-5)
        assert row0.total == pytest.approx(
            l_ce + l_cons + row0.cls_weight * l_cls, abs=2e-5
        )

        # step 1: reload the post-step-0 state and memory from the checkpoint
        state1, memory1 = load_checkpoint(tmp_path / "one" / "checkpoint")
        l_ce, l_cons, l_cls = self.recompute_losses(state1, memory1, episode2, cfg1)
        row1 = result2.metrics[1]
        assert row1.l_ce == pytest.approx(l_ce, abs=2e-5)
        assert row1.l_cons == pytest.approx(l_cons, abs=2e-5)
        assert row1.l_cons > 0.0
        assert row1.l_cls == pytest.approx(l_cls, abs=2e-5)


class TestAblationFlags:
    def test_cls_head_off_freezes_weight_and_zeroes_loss(self, train_split):
        cfg = tiny_train_config(steps=5, cls_head=False, memory_regulation=False)
        result = train(cfg, train_split)
        assert all(m.l_cls == 0.0 for m in result.metrics)
        weights = {m.cls_weight for m in result.metrics}
        assert weights == {pytest.approx(cfg.cls_weight_init)}
        assert len(result.memory) == 0

    def test_memory_regulation_off_keeps_memory_empty(self, train_split):
        cfg = tiny_train_config(steps=5, memory_regulation=False)
        result = train(cfg, train_split)
        assert len(result.memory) == 0
        assert any(m.l_cls > 0.0 for m in result.metrics)

    def test_single_network_mode(self, train_split):
        cfg = tiny_train_config(steps=4, dual_net=False)
        result = train(cfg, train_split)
        assert all(m.l_cons == 0.0 for m in result.metrics)
        assert all(m.acc_n == m.acc_h for m in result.metrics)
        # the untouched slow copy stays at initialization
        fresh = init_dual_state(cfg.encoder, cls_weight_init=cfg.cls_weight_init,
                                learning_rate=cfg.learning_rate, dual_net=False)
        assert result.state.neocortex.checksum() == fresh.neocortex.checksum()
        assert result.state.inference_model() is result.state.hippocampus

    def test_cls_weight_receives_gradient_only_with_head(self, train_split):
        with_head = train(tiny_train_config(steps=5), train_split)
        trajectory = [m.cls_weight for m in with_head.metrics]
        assert trajectory[-1] != pytest.approx(trajectory[0])


class TestEvalReport:
    def test_two_episode_hand_example(self):
        report = EvalReport.from_accuracies([0.8, 0.6])
        assert report.mean_accuracy == pytest.approx(0.7)
        assert report.ci95 == pytest.approx(1.96 * 0.1 / np.sqrt(2), abs=1e-9)
        assert report.ci95 == pytest.approx(0.1386, abs=1e-4)

    def test_perfect_runs_zero_ci(self):
        report = EvalReport.from_accuracies(np.ones(10))
        assert report.mean_accuracy == 1.0
        assert report.ci95 == 0.0

    def test_population_sigma_convention(self):
        accs = [0.2, 0.4, 0.9]
        report = EvalReport.from_accuracies(accs)
        assert report.ci95 == pytest.approx(
            1.96 * np.std(accs) / np.sqrt(3), abs=1e-12
        )


class TestEvaluate:
    def test_seed_reproducible_bit_exact(self, tiny_store):
        state = init_dual_state(
            EncoderConfig(
                image_height=8, image_width=8, channels=1, patch_size=4,
                embed_dim=8, depth=1, heads=2, seed=3,
            )
        )
        r1 = evaluate(state, tiny_store["train"], 2, 1, 3, episodes=8, seed=9)
        r2 = evaluate(state, tiny_store["train"], 2, 1, 3, episodes=8, seed=9)
        np.testing.assert_array_equal(r1.per_episode, r2.per_episode)
        assert r1.mean_accuracy == r2.mean_accuracy
        assert r1.episodes == 8

    def test_different_seed_differs(self, tiny_store):
        state = init_dual_state(
            EncoderConfig(
                image_height=8, image_width=8, channels=1, patch_size=4,
                embed_dim=8, depth=1, heads=2, seed=3,
            )
        )
        r1 = evaluate(state, tiny_store["train"], 2, 1, 3, episodes=10, seed=1)
        r2 = evaluate(state, tiny_store["train"], 2, 1, 3, episodes=10, seed=2)
        assert not np.array_equal(r1.per_episode, r2.per_episode)


class TestDumpCls:
    def test_rows_and_first_visit_identity(self, train_split, tmp_path):
        cfg = tiny_train_config(steps=2)
        result = train(cfg, train_split)
        out = tmp_path / "cls.csv"
        dump_cls(result.state, train_split, episodes=6, seed=4, out=out, n_way=2, k_shot=1)
        lines = out.read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header[:3] == ["episode", "class", "kind"]
        assert len(header) == 3 + cfg.encoder.embed_dim
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 6 * 2 * 2  # episodes x N x {raw, regulated}

        seen = set()
        for row in rows:
            episode, label, kind = row[0], row[1], row[2]
            vec = tuple(row[3:])
            if kind == "raw" and label not in seen:
                seen.add(label)
                reg = next(
                    r for r in rows if r[0] == episode and r[1] == label and r[2] == "regulated"
                )
                assert tuple(reg[3:]) == vec  # first visit stores verbatim

    def test_no_parameter_mutation(self, train_split, tmp_path):
        cfg = tiny_train_config(steps=2)
        result = train(cfg, train_split)
        before_h = result.state.hippocampus.checksum()
        before_n = result.state.neocortex.checksum()
        dump_cls(result.state, train_split, 4, 0, tmp_path / "c.csv", n_way=2, k_shot=1)
        assert result.state.hippocampus.checksum() == before_h
        assert result.state.neocortex.checksum() == before_n

    def test_variance_contraction_small(self, train_split, tmp_path):
        cfg = tiny_train_config(steps=2)
        result = train(cfg, train_split)
        out = tmp_path / "cls.csv"
        dump_cls(result.state, train_split, episodes=60, seed=1, out=out, n_way=2, k_shot=1)
        lines = out.read_text().strip().splitlines()[1:]
        raw, reg = {}, {}
        for line in lines:
            parts = line.split(",")
            target = raw if parts[2] == "raw" else reg
            target.setdefault(parts[1], []).append([float(v) for v in parts[3:]])
        improved = 0
        for label in raw:
            if len(raw[label]) < 10:
                continue
            var_raw = np.var(np.asarray(raw[label]), axis=0).sum()
            var_reg = np.var(np.asarray(reg[label]), axis=0).sum()
            improved += var_reg < var_raw
        assert improved >= 1
