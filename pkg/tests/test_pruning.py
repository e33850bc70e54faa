import os

import numpy as np
import pytest

from thinice import datasets, nn
from thinice.attacks import pgd
from thinice.errors import ConfigError, StageError
from thinice.experiment import Runner
from thinice.nn import LayerSpec, build_network, build_preset, load_checkpoint
from thinice.pruning import (AdmmSettings, AtmcSettings, HydraSettings, PipelinePlan, PruneConfig, admm_loop,
                             admm_prune, allocate, atmc_lite, hydra_prune, keep_mask, magnitude_prune, prune, run_pipeline,
                             topk_masks)
from thinice.tensor import softmax_cross_entropy
from thinice.training import AdversarialSettings, TrainConfig, train_adversarial

ADV = AdversarialSettings(eps=0.03, steps=3)


@pytest.fixture(scope="module")
def moons():
    return datasets.generate("two_moons", 200, noise=0.1, seed=8)


@pytest.fixture(scope="module")
def dense(moons):
    net, _ = train_adversarial(build_preset("mlp-2x64", 2, seed=4), moons, TrainConfig(epochs=5, adversarial=ADV))
    return net


def _zeros(net):
    return nn.mask_counts(net)[0]


class TestTopK:
    def test_global_order_statistics(self):
        keep = keep_mask(np.array([0.05, 0.1, -0.5, 0.3]), 2)
        np.testing.assert_array_equal(keep, [False, False, True, True])

    def test_ties_go_to_lower_index(self):
        np.testing.assert_array_equal(keep_mask(np.array([1.0, 1.0, 1.0]), 2), [False, False, True])

    def test_local_versus_global(self):
        big, small = np.array([10.0, 10, 10]), np.array([0.1, 0.1, 0.1])
        g = topk_masks([big, small], 0.5, "global")
        loc = topk_masks([big, small], 0.5, "local")
        assert g[0].sum() == 3 and g[1].sum() == 0
        assert sorted([3 - loc[0].sum(), 3 - loc[1].sum()]) == [1, 2]

    @pytest.mark.parametrize("s", [0.0, 0.33, 0.5, 0.9, 0.95])
    def test_count_is_ceil(self, s):
        masks = topk_masks([np.arange(7.0), np.arange(13.0)], s, "local")
        assert sum((m == 0).sum() for m in masks) == int(np.ceil(s * 20 - 1e-12))

    def test_permutation_keeps_the_same_magnitudes(self):
        g = np.random.default_rng(0)
        w = g.normal(size=50)
        perm = g.permutation(50)
        kept = np.sort(np.abs(w[keep_mask(w, 30)]))
        kept_perm = np.sort(np.abs(w[perm][keep_mask(w[perm], 30)]))
        np.testing.assert_array_equal(kept, kept_perm)

    def test_sparsity_one_rejected(self):
        with pytest.raises(ConfigError):
            topk_masks([np.ones(4)], 1.0)


class TestMagnitude:
    def test_exact_fraction(self, dense):
        for s in (0.5, 0.9, 0.95):
            pruned = magnitude_prune(dense, s)
            zeros, total = nn.mask_counts(pruned)
            assert zeros == int(np.ceil(s * total))

    def test_dense_network_untouched(self, dense):
        before = [p.data.copy() for p in dense.params]
        magnitude_prune(dense, 0.9)
        assert all(np.array_equal(a, p.data) for a, p in zip(before, dense.params))


class TestHydra:
    def test_zero_sparsity_is_identity(self, dense, moons):
        out, _ = hydra_prune(dense, moons, PruneConfig(method="hydra", target_sparsity=0.0))
        assert nn.sparsity(out) == 0.0
        assert nn.logits_of(out, moons.x).tobytes() == nn.logits_of(dense, moons.x).tobytes()

    def test_kept_count_exact_at_every_step(self, dense, moons):
        cfg = PruneConfig(method="hydra", target_sparsity=0.9, hydra=HydraSettings(score_epochs=2), adversarial=ADV)
        out, trace = hydra_prune(dense, moons, cfg)
        zeros, total = nn.mask_counts(out)
        assert set(trace.kept) == {total - int(np.ceil(0.9 * total))}
        assert zeros == int(np.ceil(0.9 * total))

    def test_weights_untouched(self, dense, moons):
        out, _ = hydra_prune(dense, moons, PruneConfig(method="hydra", target_sparsity=0.5,
                                                       hydra=HydraSettings(score_epochs=1)))
        for i in dense.weight_indices:
            kept = out.masks[i].data == 1
            np.testing.assert_array_equal(out.params[i].data[kept], dense.params[i].data[kept])

    def test_mask_beats_magnitude_on_benchmark(self, benchmark_config, benchmark_run):
        # regression recorded at seed freeze: HYDRA's mask (before fine-tuning) has lower adversarial loss
        out = benchmark_run[0]
        runner = Runner(benchmark_config, out)
        train, test, _, _ = runner._load_data()
        dense = load_checkpoint(os.path.join(out, "dense"))
        cell = next(c for c in benchmark_config.pruning.grid if c.method == "hydra")
        pcfg = runner._plan(cell).prune
        adv = benchmark_config.training.adversarial.attack_config(0)

        def adv_loss(net):
            xa = pgd(net, test.x, test.y, adv).x_adv
            return float(softmax_cross_entropy(nn.forward(net, xa), test.y).data)

        hydra, _ = prune(dense, train, pcfg)
        magnitude, _ = prune(dense, train, pcfg.model_copy(update={"method": "magnitude"}))
        assert adv_loss(hydra) <= adv_loss(magnitude)


class TestAdmm:
    def test_convex_toy_residual_and_dual_identity(self):
        g = np.random.default_rng(1)
        target = [g.normal(size=(6, 5)), g.normal(size=8)]
        rho = 1.0

        # f(theta) = 1/2 ||theta - target||^2 has the closed-form theta-update below
        def update(theta, z, u):
            return [(t + rho * (zz - uu)) / (1 + rho) for t, zz, uu in zip(target, z, u)]

        _, state = admm_loop(target, update, 0.7, 15, "local")
        res = state.residuals
        assert all(b <= a + 1e-12 for a, b in zip(res[1:], res[2:]))
        for snap in state.snapshots:
            for t, z, up, u in zip(snap["theta"], snap["z"], snap["u_prev"], snap["u"]):
                np.testing.assert_array_equal(u, up + t - z)

    def test_z_has_exact_per_tensor_support(self, dense, moons):
        cfg = PruneConfig(method="admm", target_sparsity=0.9, admm=AdmmSettings(outer_iters=3, inner_epochs=1))
        out, state = admm_prune(dense, moons, cfg)
        sizes = [dense.params[i].size for i in dense.weight_indices]
        quota = allocate(sizes, int(np.ceil(0.9 * sum(sizes))))
        for snap in state.snapshots:
            for z, size, q in zip(snap["z"], sizes, quota):
                assert np.count_nonzero(z) <= size - q
        for sel, size, q in zip(state.selection, sizes, quota):
            assert (sel == 0).sum() == q
        assert _zeros(out) == sum(quota)

    def test_divergence_names_iteration(self):
        def update(theta, z, u):
            return [t * np.inf for t in theta]

        with pytest.raises(ArithmeticError, match="iteration 0"):
            admm_loop([np.ones(4)], update, 0.5, 3)


class TestAtmc:
    def test_full_budget_equals_adversarial_training(self, dense, moons):
        cfg = PruneConfig(method="atmc", target_sparsity=0.0, atmc=AtmcSettings(epochs=2, project_every=3, lr=0.02),
                          adversarial=ADV, seed=5)
        out, trace = atmc_lite(dense, moons, cfg)
        twin, hist = train_adversarial(dense, moons, TrainConfig(epochs=2, learning_rate=0.02, seed=5,
                                                                 adversarial=ADV))
        assert trace.history == hist
        assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(out.params, twin.params))

    def test_projection_bound_and_final_sparsity(self, dense, moons):
        cfg = PruneConfig(method="atmc", target_sparsity=0.9, atmc=AtmcSettings(epochs=2, project_every=2),
                          adversarial=ADV)
        out, trace = atmc_lite(dense, moons, cfg)
        zeros, total = nn.mask_counts(out)
        k = total - int(np.ceil(0.9 * total))
        assert max(trace.nonzeros) <= k
        assert nn.sparsity(out) >= 0.9


class TestPipeline:
    def _plan(self, schedule=()):
        return PipelinePlan(prune=PruneConfig(method="magnitude", target_sparsity=0.9),
                            finetune=TrainConfig(epochs=1, seed=2), schedule=list(schedule))

    def test_one_shot_equals_single_round(self, dense, moons, tmp_path):
        a = run_pipeline(dense, moons, self._plan(), tmp_path / "a", pretrained=True)
        b = run_pipeline(dense, moons, self._plan([0.9]), tmp_path / "b", pretrained=True)
        assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(a.pruned.params, b.pruned.params))

    def test_iterative_schedule_is_monotone(self, dense, moons, tmp_path):
        res = run_pipeline(dense, moons, self._plan([0.5, 0.75, 0.9]), tmp_path, pretrained=True)
        levels = [nn.sparsity(load_checkpoint(p)) for p in res.round_paths]
        assert levels == sorted(levels) and len(levels) == 3
        assert nn.sparsity(load_checkpoint(res.pruned_path)) == levels[-1]

    def test_dense_checkpoint_isolated(self, dense, moons, tmp_path):
        res = run_pipeline(dense, moons, self._plan([0.5, 0.9]), tmp_path, pretrained=True)
        before = open(os.path.join(res.dense_path, "param_0.tnsr"), "rb").read()
        again = load_checkpoint(res.dense_path)
        assert nn.logits_of(again, moons.x).tobytes() == nn.logits_of(dense, moons.x).tobytes()
        assert open(os.path.join(res.dense_path, "param_0.tnsr"), "rb").read() == before

    def test_bad_schedule(self):
        with pytest.raises(ValueError):
            self._plan([0.9, 0.5])

    def test_failure_names_stage_and_cleans_up(self, dense, moons, tmp_path):
        plan = PipelinePlan(prune=PruneConfig(method="magnitude", target_sparsity=0.9),
                            finetune=TrainConfig(epochs=1, learning_rate=1e30))
        with pytest.raises(StageError, match="finetune"):
            run_pipeline(dense, moons, plan, tmp_path, pretrained=True)
        assert sorted(os.listdir(tmp_path)) == []
