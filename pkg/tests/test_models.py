import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mspl import autodiff as ad
from mspl.autodiff import Adam, Tensor, backward, grad_check
from mspl.errors import DataError, NumericalError, ShapeError
from mspl.models import (
    Batch,
    ModelConfig,
    MSPLNet,
    compute_losses,
    cross_entropy,
    fit,
    load_checkpoint,
    loss_pretext,
    loss_recon,
    loss_struct,
    loss_struct_cls,
    loss_struct_mse,
    loss_struct_snp,
    loss_total,
    save_checkpoint,
    snp_penalty,
    train_epoch,
)
from mspl.synth_ts import SynthConfig, build_dataset


def tiny_config(**kw):
    base = dict(input_length=16, depth=2, channels=(2, 3), latent_dim=4, hidden_dim=8, num_pretext_classes=2)
    base.update(kw)
    return ModelConfig(**base)


def tiny_batch(rng, n=5, length=16, n_clusters=3):
    x = rng.uniform(-2, 2, size=(n, length))
    pts = rng.uniform(0, 3, size=(n, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    return Batch(x=x, y=rng.integers(0, 2, n), d=d, c_t=rng.integers(0, n_clusters, n))


class TestBuild:
    def test_bottleneck_length(self):
        assert ModelConfig(input_length=512).bottleneck_length == 64

    def test_indivisible_length_hints_padding(self):
        with pytest.raises(ShapeError, match="pad each series by 1"):
            ModelConfig(input_length=511)

    def test_same_seed_same_parameters(self):
        a = MSPLNet.build(ModelConfig(), seed=3)
        b = MSPLNet.build(ModelConfig(), seed=3)
        assert a.n_parameters == b.n_parameters
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

    def test_shared_layers_identical_across_variants(self):
        m = MSPLNet.build(tiny_config(), seed=1)
        c = MSPLNet.build(tiny_config(variant="cluscls", num_cluster_classes=4), seed=1)
        for name, p in m.params.items():
            assert np.array_equal(p.data, c.params[name].data)
        assert c.params["cls_c.weight"].shape == (4 + 2, 4)

    def test_glorot_bounds_and_zero_bias(self):
        m = MSPLNet.build(ModelConfig(), seed=0)
        w = m.params["enc_h.hidden.weight"].data
        bound = math.sqrt(6.0 / sum(w.shape))
        assert np.abs(w).max() <= bound
        assert not m.params["enc_h.hidden.bias"].data.any()

    @pytest.mark.parametrize(
        "kw",
        [
            dict(struct_loss="snp"),
            dict(snp_threshold=15.0),
            dict(lambda_struct=-1.0),
            dict(variant="cluscls"),
            dict(variant="bogus"),
        ],
    )
    def test_invalid_configs(self, kw):
        with pytest.raises(ValueError):
            tiny_config(**kw)

    def test_config_round_trip(self):
        cfg = tiny_config(struct_loss="snp", snp_threshold=2.0)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_default_shapes(self):
        net = MSPLNet.build(ModelConfig(num_pretext_classes=5), seed=0)
        out = net.forward(np.random.default_rng(0).normal(size=(4, 512)))
        assert out.h0.shape == (4, 64, 64)
        assert out.x_hat.shape == (4, 512)
        assert out.h.shape == (4, 32)
        assert out.z.shape == (4, 5)
        assert out.z_c is None

    def test_zeros_input_is_finite(self):
        out = MSPLNet.build(ModelConfig(), seed=0).forward(np.zeros((2, 512)))
        assert np.all(np.isfinite(out.x_hat.data)) and np.all(np.isfinite(out.h.data))

    def test_identical_rows_identical_outputs(self):
        row = np.random.default_rng(1).normal(size=16)
        out = MSPLNet.build(tiny_config(), seed=0).forward(np.stack([row, row, -row]))
        np.testing.assert_array_equal(out.h.data[0], out.h.data[1])
        np.testing.assert_array_equal(out.z.data[0], out.z.data[1])

    def test_cluscls_logits_use_h_and_z(self):
        net = MSPLNet.build(tiny_config(variant="cluscls", num_cluster_classes=3), seed=0)
        out = net.forward(np.random.default_rng(2).normal(size=(3, 16)))
        hz = np.concatenate([out.h.data, out.z.data], axis=1)
        expect = hz @ net.params["cls_c.weight"].data + net.params["cls_c.bias"].data
        np.testing.assert_allclose(out.z_c.data, expect, atol=1e-14)

    def test_wrong_length_rejected(self):
        with pytest.raises(ShapeError):
            MSPLNet.build(tiny_config(), seed=0).forward(np.zeros((2, 15)))

    def test_non_finite_activation_names_layer(self):
        net = MSPLNet.build(tiny_config(), seed=0)
        net.params["enc0.conv.bias"].data[:] = np.inf
        with pytest.raises(NumericalError, match="enc0.conv"):
            net.forward(np.ones((2, 16)))

    def test_embed_matches_forward(self):
        net = MSPLNet.build(tiny_config(), seed=0)
        x = np.random.default_rng(3).normal(size=(7, 16))
        h, z, zc = net.embed(x, batch_size=3)
        out = net.forward(x)
        np.testing.assert_allclose(h, out.h.data, atol=1e-13)
        np.testing.assert_allclose(z, out.z.data, atol=1e-13)
        assert zc is None


class TestPdist:
    def test_three_four_five(self):
        assert ad.pdist(Tensor([[0.0, 0.0], [3.0, 4.0]])).data[0, 1] == 5.0

    def test_double_loop_reference(self):
        h = np.random.default_rng(0).normal(size=(5, 8))
        ref = np.array([[math.sqrt(sum((h[i, k] - h[j, k]) ** 2 for k in range(8))) for j in range(5)] for i in range(5)])
        out = ad.pdist(Tensor(h)).data
        np.testing.assert_allclose(out, ref, atol=1e-12)
        np.testing.assert_array_equal(out, out.T)
        assert not np.diag(out).any()


class TestLosses:
    def test_recon_divides_by_batch(self):
        x = np.zeros((2, 3))
        x_hat = np.array([[1.0, 1.0, 1.0], [2.0, 1.0, 0.0]])  # squared errors 3 and 5
        assert loss_recon(x, Tensor(x_hat)).item() == 4.0
        assert loss_recon(x, Tensor(2 * x_hat)).item() == 16.0
        assert loss_recon(x, Tensor(x)).item() == 0.0

    @pytest.mark.parametrize("k", [2, 5, 10])
    def test_uniform_logits_give_log_k(self, k):
        assert loss_pretext(Tensor(np.zeros((4, k))), [0, 1, 0, 1]).item() == pytest.approx(math.log(k), abs=1e-12)

    def test_cross_entropy_hand_case(self):
        z = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 2.0, 2.0]])
        y = [1, 0, 2]
        hand = 0.0
        for row, label in zip(z, y):
            hand -= row[label] - math.log(sum(math.exp(v) for v in row))
        assert loss_pretext(Tensor(z), y).item() == pytest.approx(hand / 3, abs=1e-10)

    def test_cluster_ce_hand_case(self):
        zc = np.array([[0.2, -0.3], [1.5, 0.5]])
        hand = -(
            (-0.3 - math.log(math.exp(0.2) + math.exp(-0.3))) + (1.5 - math.log(math.exp(1.5) + math.exp(0.5)))
        ) / 2
        assert loss_struct_cls(Tensor(zc), [1, 0]).item() == pytest.approx(hand, abs=1e-10)
        assert loss_struct_cls(Tensor(np.zeros((3, 7))), [0, 3, 6]).item() == pytest.approx(math.log(7))

    def test_confident_logits_approach_zero(self):
        assert loss_pretext(Tensor([[60.0, 0.0], [0.0, 60.0]]), [0, 1]).item() < 1e-20

    def test_out_of_range_label_rejected(self):
        with pytest.raises(DataError):
            cross_entropy(Tensor(np.zeros((2, 2))), [0, 2])

    def test_struct_mse_two_points(self):
        pd = Tensor([[0.0, 1.0], [1.0, 0.0]])
        d = np.array([[0.0, 3.0], [3.0, 0.0]])
        assert loss_struct_mse(pd, d).item() == 2.0
        assert loss_struct_mse(Tensor(d), d).item() == 0.0

    @pytest.mark.parametrize("x,y,expect", [(20.0, 100.0, 0.0), (5.0, 3.0, 4.0), (10.0, 100.0, 25.0)])
    def test_snp_penalty_cases(self, x, y, expect):
        assert snp_penalty(x, y, 15.0) == expect
        pd = Tensor([[0.0, x], [x, 0.0]])
        d = np.array([[0.0, y], [y, 0.0]])
        assert loss_struct_snp(pd, d, 15.0).item() == pytest.approx(2 * expect / 4)

    @given(x=st.floats(0, 40), y=st.floats(0, 30), t=st.floats(0.5, 20))
    @settings(max_examples=100, deadline=None)
    def test_snp_penalty_continuous_in_x(self, x, y, t):
        eps = 1e-7
        assert abs(snp_penalty(x + eps, y, t) - snp_penalty(x, y, t)) < 1e-4

    @given(perm_seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_joint_permutation_invariance(self, perm_seed):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(6, 3))
        d = np.abs(rng.normal(size=(6, 6)))
        d = np.triu(d, 1) + np.triu(d, 1).T
        p = np.random.default_rng(perm_seed).permutation(6)
        cfg = tiny_config()
        snp = tiny_config(struct_loss="snp", snp_threshold=1.0)
        for c in (cfg, snp):
            a = loss_struct(Tensor(h), d, c).item()
            b = loss_struct(Tensor(h[p]), d[np.ix_(p, p)], c).item()
            assert a == pytest.approx(b, rel=1e-12)

    def test_zero_when_pdist_matches(self):
        h = np.random.default_rng(4).normal(size=(5, 2))
        d = np.linalg.norm(h[:, None] - h[None], axis=-1)
        assert loss_struct(Tensor(h), d, tiny_config()).item() < 1e-28
        far = np.where(d > 1.0, 50.0, d)  # pairs beyond t=1 already have pdist >= 1
        assert loss_struct(Tensor(h), far, tiny_config(struct_loss="snp", snp_threshold=1.0)).item() < 1e-28

    def test_total_arithmetic(self):
        comps = {"recon": Tensor(2.0), "pretext": Tensor(3.0), "struct": Tensor(4.0)}
        assert loss_total(comps, tiny_config()).item() == 9.0
        assert loss_total(comps, tiny_config(lambda_pretext=0.0, lambda_struct=0.0)).item() == 2.0
        assert loss_total(comps, tiny_config(variant="onlycls")).item() == 5.0

    def test_total_gradient_is_weighted_sum(self):
        rng = np.random.default_rng(5)
        net = MSPLNet.build(tiny_config(lambda_pretext=0.7, lambda_struct=1.3), seed=2)
        batch = tiny_batch(rng)
        parts = {}
        for key in ("recon", "pretext", "struct", "total"):
            for p in net.params.values():
                p.grad = None
            total, comps, _ = compute_losses(net, batch)
            backward(total if key == "total" else comps[key])
            parts[key] = {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for n, p in net.params.items()}
        for n in net.params:
            combo = parts["recon"][n] + 0.7 * parts["pretext"][n] + 1.3 * parts["struct"][n]
            np.testing.assert_allclose(parts["total"][n], combo, atol=1e-10)


def full_loss_check(variant, seed, **kw):
    rng = np.random.default_rng(seed)
    cfg = tiny_config(variant=variant, num_cluster_classes=3 if variant == "cluscls" else 0, **kw)
    net = MSPLNet.build(cfg, seed=seed)
    batch = tiny_batch(rng)
    return grad_check(lambda: compute_losses(net, batch)[0], net.params, tolerance=1e-4)


class TestFullLossGradients:
    @pytest.mark.parametrize("seed", range(4))
    def test_mspl_mse(self, seed):
        report = full_loss_check("mspl", seed)
        assert report.passed, report.failures()

    @pytest.mark.parametrize("seed", range(4))
    def test_mspl_snp(self, seed):
        report = full_loss_check("mspl", seed, struct_loss="snp", snp_threshold=1.5)
        assert report.passed, report.failures()

    def test_cluscls(self):
        report = full_loss_check("cluscls", 0)
        assert report.passed, report.failures()


@pytest.fixture(scope="module")
def toy():
    return build_dataset(SynthConfig(m=2, n=6, seed=1))


class TestTraining:
    def test_zero_lr_keeps_parameters(self, toy):
        net = MSPLNet.build(ModelConfig(), seed=0)
        before = {k: p.data.copy() for k, p in net.params.items()}
        stats = fit(net, toy.x, toy.y, epochs=1, batch_size=16, lr=0.0, d=toy.dissim)
        assert all(np.array_equal(before[k], net.params[k].data) for k in before)
        assert np.isfinite(stats[0].total) and stats[0].n_batches == 3

    def test_loss_decreases(self, toy):
        net = MSPLNet.build(ModelConfig(), seed=0)
        stats = fit(net, toy.x, toy.y, epochs=20, batch_size=16, lr=1e-3, d=toy.dissim, seed=0)
        assert stats[-1].total < stats[0].total

    def test_same_seed_same_statistics(self, toy):
        runs = []
        for _ in range(2):
            net = MSPLNet.build(ModelConfig(), seed=4)
            runs.append([s.as_dict() for s in fit(net, toy.x, toy.y, epochs=2, batch_size=16, d=toy.dissim, seed=9)])
        assert runs[0] == runs[1]

    def test_singleton_batch_skipped(self, toy, caplog):
        net = MSPLNet.build(ModelConfig(), seed=0)
        x, y, d = toy.x[:17], toy.y[:17], toy.dissim[:17, :17]
        stats = train_epoch(net, x, y, Adam(net.params), 16, np.random.default_rng(0), d=d)
        assert stats.n_batches == 1 and stats.n_skipped == 1
        assert "skipping" in caplog.text

    def test_lambda_zero_equals_onlycls(self, toy):
        def run(variant, lam):
            net = MSPLNet.build(ModelConfig(variant=variant, lambda_struct=lam), seed=5)
            # 17 samples in batches of 16 leave a single-sample batch
            fit(net, toy.x[:17], toy.y[:17], epochs=2, batch_size=16, d=toy.dissim[:17, :17], seed=3)
            return net

        a, b = run("mspl", 0.0), run("onlycls", 1.0)
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

    def test_mspl_needs_dissimilarity(self, toy):
        net = MSPLNet.build(ModelConfig(), seed=0)
        with pytest.raises(DataError):
            fit(net, toy.x, toy.y, epochs=1, batch_size=8)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = MSPLNet.build(tiny_config(variant="cluscls", num_cluster_classes=3), seed=8)
        save_checkpoint(net, tmp_path / "m.ckpt", epoch=7, extra={"note": "x"})
        loaded, header = load_checkpoint(tmp_path / "m.ckpt")
        assert header["epoch"] == 7 and header["extra"] == {"note": "x"}
        assert loaded.config == net.config
        assert all(np.array_equal(loaded.params[k].data, net.params[k].data) for k in net.params)
        x = np.random.default_rng(0).normal(size=(3, 16))
        np.testing.assert_array_equal(loaded.forward(x).h.data, net.forward(x).h.data)

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_rejects_truncated(self, tmp_path):
        save_checkpoint(MSPLNet.build(tiny_config(), seed=0), tmp_path / "m.ckpt")
        raw = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "m.ckpt").write_bytes(raw + b"\0" * 8)
        with pytest.raises(DataError, match="trailing"):
            load_checkpoint(tmp_path / "m.ckpt")
