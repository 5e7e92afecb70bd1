import numpy as np
import pytest

from pfnkit import tensor as T
from pfnkit.data import from_arrays
from pfnkit.errors import (
    ClassBudgetError,
    ConfigurationError,
    PromptTooShortError,
)
from pfnkit.model import PfnModel, forward
from pfnkit.prompt import (
    Ensemble,
    EnsembleSpec,
    TuneConfig,
    TunedPrompt,
    extend_classes,
    fine_tune_all,
    fit_ensemble,
    init_prompt,
    load_ensemble,
    load_prompt,
    member_seed,
    predict,
    predict_ensemble,
    save_ensemble,
    save_prompt,
    tune,
)
from tests.conftest import make_blobs

FAST = dict(epochs=4, val_every=2, patience=2, warmup_steps=5,
            nct_batch_points=64)


class TestTuneConfig:
    @pytest.mark.parametrize("bad", [
        dict(p=0), dict(patience=0), dict(lr=0.0), dict(train_mode="x"),
        dict(eval_mode="x"), dict(loss="mse"), dict(label_init="x"),
        dict(epochs=0),
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigurationError):
            TuneConfig(**bad)

    def test_round_trip(self):
        cfg = TuneConfig(p=7, lr=1e-3, train_mode="ct")
        assert TuneConfig.from_dict(cfg.to_dict()) == cfg


class TestInitPrompt:
    def test_equal_round_robin(self, small_model, blob_dataset):
        cfg = TuneConfig(p=10, label_init="equal", seed=1)
        prompt = init_prompt(cfg, blob_dataset, small_model)
        counts = np.bincount(prompt.y_part, minlength=2)
        assert counts.tolist() == [5, 5]

    def test_equal_counts_differ_at_most_one(self, small_model):
        ds = make_blobs(seed=2, centers=((-3, -3), (3, 3), (0, 4)))
        cfg = TuneConfig(p=10, label_init="equal")
        prompt = init_prompt(cfg, ds, small_model)
        counts = np.bincount(prompt.y_part, minlength=3)
        assert counts.max() - counts.min() <= 1

    def test_prompt_too_short(self, small_model):
        ds = make_blobs(seed=3, centers=((-3, -3), (3, 3), (0, 4)))
        with pytest.raises(PromptTooShortError):
            init_prompt(TuneConfig(p=2, label_init="equal"), ds, small_model)

    def test_proportional_expected_counts(self, small_model):
        rng = np.random.default_rng(0)
        y = (rng.random(1000) < 0.1).astype(int)
        y[:2] = [0, 1]  # both classes present
        x = rng.standard_normal((1000, 2)) + 3.0 * y[:, None]
        ds = from_arrays("skew", x, y, seed=0)
        frac1 = ds.labels[ds.split.train].mean()
        totals = np.zeros(2)
        n_seeds = 300
        for seed in range(n_seeds):
            cfg = TuneConfig(p=4, label_init="proportional", seed=seed)
            prompt = init_prompt(cfg, ds, small_model)
            totals += np.bincount(prompt.y_part, minlength=2)
        mean_counts = totals / n_seeds
        assert abs(mean_counts[1] - 4 * frac1) < 0.15
        assert abs(mean_counts[0] - 4 * (1 - frac1)) < 0.15

    def test_determinism(self, small_model, blob_dataset):
        cfg = TuneConfig(p=6, seed=9)
        a = init_prompt(cfg, blob_dataset, small_model)
        b = init_prompt(cfg, blob_dataset, small_model)
        np.testing.assert_array_equal(a.x_part.values, b.x_part.values)
        np.testing.assert_array_equal(a.y_part, b.y_part)

    def test_class_budget(self, small_model):
        rng = np.random.default_rng(1)
        y = np.arange(280) % 7  # 7 classes > c_max=6
        x = rng.standard_normal((280, 2)) + y[:, None]
        ds = from_arrays("seven", x, y, seed=1)
        with pytest.raises(ClassBudgetError):
            init_prompt(TuneConfig(p=14), ds, small_model)


class TestTune:
    def test_backbone_frozen(self, small_model, blob_dataset):
        cfg = TuneConfig(p=4, seed=2, **FAST)
        before = small_model.snapshot_values()
        prompt = init_prompt(cfg, blob_dataset, small_model)
        tune(small_model, prompt, blob_dataset, cfg)
        after = small_model.snapshot_values()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])

    def test_prompt_learns_interleaved_blobs(self, small_model):
        # two overlapping Gaussian blobs, N=2000, p=10, no real context
        ds = make_blobs(seed=7, n=2000, spread=1.0)
        cfg = TuneConfig(p=10, train_mode="nct", seed=4, epochs=30,
                         val_every=2, patience=3, warmup_steps=5,
                         nct_batch_points=128)
        prompt = init_prompt(cfg, ds, small_model)
        prompt, trace = tune(small_model, prompt, ds, cfg)
        labels, _ = predict(small_model, prompt, ds, eval_mode="nc")
        acc = (labels == ds.labels[ds.split.test]).mean()
        assert acc >= 0.95
        assert trace.best_accuracy >= 0.95

    def test_kl_identity_initial_loss(self, small_model, blob_dataset):
        # when the tuned path reproduces the frozen reference exactly, the
        # divergence between them is exactly zero
        rng = np.random.default_rng(0)
        x = rng.standard_normal((8, 2))
        probs = forward(small_model, blob_dataset.features[:16],
                        blob_dataset.labels[:16], x)
        ref = probs.detach()
        val = T.kl_divergence(ref, probs).item()
        assert val == 0.0

    def test_empty_validation_errors(self, small_model):
        ds = make_blobs(seed=8, n=60)
        ds.split.val = np.zeros(0, dtype=np.int64)
        cfg = TuneConfig(p=4, **FAST)
        prompt = init_prompt(cfg, ds, small_model)
        with pytest.raises(ConfigurationError):
            tune(small_model, prompt, ds, cfg)

    def test_early_stop_restores_best_snapshot(self, small_model, blob_dataset):
        cfg = TuneConfig(p=4, seed=3, epochs=8, val_every=1, patience=2,
                         warmup_steps=2, nct_batch_points=64)
        prompt = init_prompt(cfg, blob_dataset, small_model)
        prompt, trace = tune(small_model, prompt, blob_dataset, cfg)
        assert prompt.validation_score == trace.best_accuracy
        best = max(acc for _, acc in trace.validations)
        assert trace.best_accuracy == best
        firsts = [e for e, acc in trace.validations if acc == best]
        assert trace.best_epoch == firsts[0]


class TestPredict:
    def test_nc_token_count_independent_of_n(self, small_model, blob_dataset):
        cfg = TuneConfig(p=4, **FAST)
        prompt = init_prompt(cfg, blob_dataset, small_model)
        # NC forward sees exactly p + m tokens regardless of train size
        from pfnkit.model import attention_mask
        m = len(blob_dataset.split.test)
        mask = attention_mask(prompt.p, 0, m)
        assert mask.shape == (prompt.p + m, prompt.p + m)

    def test_zero_budget_equals_nc_bitwise(self, small_model, blob_dataset):
        cfg = TuneConfig(p=4, seed=5, **FAST)
        prompt = init_prompt(cfg, blob_dataset, small_model)
        tune(small_model, prompt, blob_dataset, cfg)
        nc_labels, nc_probs = predict(small_model, prompt, blob_dataset,
                                      eval_mode="nc")
        c_labels, c_probs = predict(small_model, prompt, blob_dataset,
                                    eval_mode="c", context_budget=0)
        np.testing.assert_array_equal(nc_labels, c_labels)
        np.testing.assert_array_equal(nc_probs, c_probs)

    def test_nc_close_to_c_on_blobs(self, small_model):
        ds = make_blobs(seed=11, n=600, spread=0.8)
        cfg = TuneConfig(p=10, seed=6, epochs=12, val_every=2, patience=3,
                         warmup_steps=5, nct_batch_points=64)
        prompt = init_prompt(cfg, ds, small_model)
        tune(small_model, prompt, ds, cfg)
        test_y = ds.labels[ds.split.test]
        nc, _ = predict(small_model, prompt, ds, eval_mode="nc")
        c, _ = predict(small_model, prompt, ds, eval_mode="c",
                       context_budget=256)
        assert abs((nc == test_y).mean() - (c == test_y).mean()) <= 0.05

    def test_both_picks_a_mode(self, small_model, blob_dataset):
        cfg = TuneConfig(p=4, seed=7, **FAST)
        prompt = init_prompt(cfg, blob_dataset, small_model)
        tune(small_model, prompt, blob_dataset, cfg)
        labels, probs = predict(small_model, prompt, blob_dataset,
                                eval_mode="both")
        assert len(labels) == len(blob_dataset.split.test)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


class TestExtendClasses:
    def test_output_width(self, small_model):
        extended = extend_classes(small_model, 9, seed=1)
        assert extended.decoder_width == 9
        assert extended.label_capacity == 9
        rng = np.random.default_rng(0)
        probs = forward(extended, rng.standard_normal((4, 2)),
                        [0, 3, 7, 8], rng.standard_normal((2, 2)))
        assert probs.shape == (2, 9)

    def test_noop_error(self, small_model):
        with pytest.raises(ConfigurationError, match="class_slice"):
            extend_classes(small_model, 4)

    def test_frozen_backbone_after_tuning(self, small_model):
        rng = np.random.default_rng(2)
        y = np.arange(240) % 8
        x = 2.5 * rng.standard_normal((240, 2)) + \
            np.stack([np.cos(y * 0.785), np.sin(y * 0.785)], axis=1) * 6
        ds = from_arrays("eight", x, y, seed=2)
        extended = extend_classes(small_model, 8, seed=2)
        non_decoder = [n for n in extended.params
                       if not n.startswith("decoder.")]
        before = extended.snapshot_values(non_decoder)
        cfg = TuneConfig(p=8, seed=2, **FAST)
        prompt = init_prompt(cfg, ds, extended)
        tune(extended, prompt, ds, cfg)
        after = extended.snapshot_values(non_decoder)
        for name in non_decoder:
            np.testing.assert_array_equal(before[name], after[name])
        # decoder did move
        assert any(
            not np.array_equal(extended.params[n].values, small_model.params.get(
                n, extended.params[n]).values)
            for n in extended.decoder_parameter_names()
        )


class TestFineTuneAll:
    def test_all_parameters_trainable(self, small_model, blob_dataset):
        from pfnkit.model import clone_model
        model = clone_model(small_model)
        cfg = TuneConfig(p=4, seed=1, epochs=2, val_every=1, patience=2,
                         warmup_steps=2, nct_batch_points=64,
                         ctx_upper_bound=64)
        _, trace = fine_tune_all(model, blob_dataset, cfg)
        assert trace.trainable_parameters == model.parameter_count()

    def test_deterministic(self, small_model, blob_dataset):
        from pfnkit.model import clone_model
        cfg = TuneConfig(p=4, seed=5, epochs=2, val_every=1, patience=2,
                         warmup_steps=2, nct_batch_points=64,
                         ctx_upper_bound=64)
        snaps = []
        for _ in range(2):
            model = clone_model(small_model)
            fine_tune_all(model, blob_dataset, cfg)
            snaps.append(model.snapshot_values())
        for name in snaps[0]:
            np.testing.assert_array_equal(snaps[0][name], snaps[1][name])

    def test_comparable_to_prompt_tuning_on_blobs(self, small_model):
        from pfnkit.model import clone_model
        ds = make_blobs(seed=29, n=900, spread=0.8)
        cfg = TuneConfig(p=10, seed=3, epochs=8, val_every=2, patience=3,
                         warmup_steps=5, nct_batch_points=64,
                         ctx_upper_bound=128)
        prompt = init_prompt(cfg, ds, small_model)
        prompt, _ = tune(small_model, prompt, ds, cfg)
        test_y = ds.labels[ds.split.test]
        pt_labels, _ = predict(small_model, prompt, ds, eval_mode="nc")
        pt_acc = (pt_labels == test_y).mean()

        model = clone_model(small_model)
        model, _ = fine_tune_all(model, ds, cfg)
        from pfnkit.model import predict_zero_shot
        ft_labels, _ = predict_zero_shot(model, ds, context_budget=128, seed=3)
        ft_acc = (ft_labels == test_y).mean()
        assert abs(pt_acc - ft_acc) <= 0.05


class TestEnsemble:
    def test_degenerate_equals_single_tune(self, small_model, blob_dataset):
        spec = EnsembleSpec(members=1, top_k=1, seed=13)
        cfg = TuneConfig(p=4, **FAST)
        ensemble, _ = fit_ensemble(small_model, blob_dataset, cfg, spec)
        e_labels, e_probs = predict_ensemble(small_model, ensemble,
                                             blob_dataset, eval_mode="nc")
        single_cfg = TuneConfig(p=4, seed=member_seed(13, 0), **FAST)
        prompt = init_prompt(single_cfg, blob_dataset, small_model)
        prompt, _ = tune(small_model, prompt, blob_dataset, single_cfg)
        s_labels, s_probs = predict(small_model, prompt, blob_dataset,
                                    eval_mode="nc")
        np.testing.assert_array_equal(e_labels, s_labels)
        np.testing.assert_array_equal(e_probs, s_probs)

    def test_identical_members_average_to_member(self, small_model, blob_dataset):
        cfg = TuneConfig(p=4, **FAST)
        spec = EnsembleSpec(members=1, top_k=1, seed=3)
        ensemble, _ = fit_ensemble(small_model, blob_dataset, cfg, spec)
        member = ensemble.members[0]
        clone = Ensemble(members=[member, member, member], ranking=[0, 1, 2],
                         top_k=3, class_count=2)
        _, probs3 = predict_ensemble(small_model, clone, blob_dataset,
                                     eval_mode="nc")
        _, probs1 = predict_ensemble(small_model, ensemble, blob_dataset,
                                     eval_mode="nc")
        np.testing.assert_allclose(probs3, probs1, atol=1e-12)

    def test_ranking_selects_top_by_validation(self):
        # definitional: ranking sorts by score, ties by index
        members = [0.9, 0.8, 0.7]
        ranking = sorted(range(3), key=lambda i: (-members[i], i))
        assert ranking[:2] == [0, 1]

    def test_label_permutation_coherence(self, small_model):
        ds = make_blobs(seed=17, n=500, spread=0.8)
        cfg = TuneConfig(p=6, seed=2, epochs=8, val_every=2, patience=2,
                         warmup_steps=5, nct_batch_points=64)
        spec = EnsembleSpec(members=3, top_k=3, seed=21)
        ensemble, _ = fit_ensemble(small_model, ds, cfg, spec)
        test_y = ds.labels[ds.split.test]
        per_member = []
        for member in ensemble.members:
            view_labels, _ = predict_ensemble(
                small_model,
                Ensemble(members=[member], ranking=[0], top_k=1, class_count=2),
                ds, eval_mode="nc")
            per_member.append(view_labels)
        agree01 = (per_member[0] == per_member[1]).mean()
        agree02 = (per_member[0] == per_member[2]).mean()
        assert min(agree01, agree02) >= 0.95

    def test_persistence_round_trip(self, small_model, blob_dataset, tmp_path):
        cfg = TuneConfig(p=4, **FAST)
        spec = EnsembleSpec(members=2, top_k=1, seed=5)
        ensemble, _ = fit_ensemble(small_model, blob_dataset, cfg, spec)
        path = str(tmp_path / "ens")
        save_ensemble(ensemble, path)
        back = load_ensemble(path)
        assert back.ranking == ensemble.ranking
        for a, b in zip(back.members, ensemble.members):
            np.testing.assert_array_equal(a.prompt.x_part.values,
                                          b.prompt.x_part.values)
            np.testing.assert_array_equal(a.feature_perm, b.feature_perm)

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            EnsembleSpec(members=2, top_k=3)


class TestPromptPersistence:
    def test_round_trip(self, small_model, blob_dataset, tmp_path):
        cfg = TuneConfig(p=5, seed=2, **FAST)
        prompt = init_prompt(cfg, blob_dataset, small_model)
        prompt.validation_score = 0.75
        path = str(tmp_path / "prompt")
        save_prompt(prompt, path, cfg)
        back, back_cfg = load_prompt(path)
        np.testing.assert_array_equal(back.x_part.values, prompt.x_part.values)
        np.testing.assert_array_equal(back.y_part, prompt.y_part)
        assert back.validation_score == 0.75
        assert back_cfg == cfg
