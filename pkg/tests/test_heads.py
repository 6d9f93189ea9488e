import numpy as np
import pytest
import torch

from speechattr.heads import (
    TaskSpec,
    batch_sequences,
    build_bilstm,
    build_head,
    build_mlp,
    build_resnet32,
    forward,
    param_count,
)
from speechattr.trainer import loss_classification, loss_regression
from conftest import finite_difference_check


def cls_task(k, input_kind="pooled"):
    return TaskSpec("gender", "classification", k, input_kind)


def reg_task(input_kind="pooled"):
    return TaskSpec("age", "regression", None, input_kind)


class TestMlp:
    def test_param_count_classification(self):
        model = build_mlp(768, cls_task(2))
        expected = (768 * 128 + 128) + (128 * 64 + 64) + (64 * 2 + 2)
        assert param_count(model) == expected == 106_818

    def test_param_count_regression(self):
        model = build_mlp(768, reg_task())
        assert param_count(model) == 106_818 - (64 * 2 + 2) + (64 * 1 + 1) == 106_753

    def test_seeded_build_identical(self):
        a = build_mlp(16, cls_task(3), seed=11)
        b = build_mlp(16, cls_task(3), seed=11)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

    def test_different_seed_same_count(self):
        assert param_count(build_mlp(768, cls_task(2), seed=1)) == param_count(
            build_mlp(768, cls_task(2), seed=2)
        )

    def test_forward_shape_and_finite(self):
        model = build_mlp(12, cls_task(5))
        out = forward(model, np.random.default_rng(0).standard_normal((4, 12)))
        assert out.shape == (4, 5)
        assert torch.isfinite(out).all()

    def test_eval_deterministic(self):
        model = build_mlp(8, cls_task(3))
        x = np.random.default_rng(1).standard_normal((3, 8))
        assert torch.equal(forward(model, x), forward(model, x))

    def test_zero_weights_zero_logits(self):
        model = build_mlp(6, cls_task(4))
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        out = forward(model, np.random.default_rng(2).standard_normal((3, 6)))
        assert torch.equal(out, torch.zeros(3, 4))

    def test_dropout_eval_is_identity(self):
        with_drop = build_mlp(8, cls_task(3), dropout=0.5, seed=4)
        no_drop = build_mlp(8, cls_task(3), dropout=0.0, seed=4)
        x = np.random.default_rng(3).standard_normal((5, 8))
        assert torch.equal(forward(with_drop, x), forward(no_drop, x))

    def test_shape_mismatch_rejected(self):
        model = build_mlp(8, cls_task(3))
        with pytest.raises(ValueError, match="expected"):
            forward(model, np.zeros((2, 9)))

    def test_bad_input_dim(self):
        with pytest.raises(ValueError):
            build_mlp(0, cls_task(2))

    def test_softmax_rows_sum_to_one(self):
        model = build_mlp(8, cls_task(5))
        out = forward(model, np.random.default_rng(5).standard_normal((6, 8)))
        probs = torch.softmax(out, dim=1)
        assert torch.allclose(probs.sum(dim=1), torch.ones(6), atol=1e-6)

    def test_argmax_shift_invariant(self):
        model = build_mlp(8, cls_task(5))
        out = forward(model, np.random.default_rng(6).standard_normal((6, 8)))
        assert torch.equal(out.argmax(dim=1), (out + 3.7).argmax(dim=1))


class TestResNet:
    def test_audit_blocks_widths_depth(self):
        model = build_resnet32(cls_task(4))
        assert model.num_blocks == 15
        assert model.stage_channels == (16, 32, 64)
        assert model.depth == 32

    def test_default_map_shape_768(self):
        model = build_resnet32(cls_task(2))
        assert model.map_shape == (24, 32)

    def test_non_factoring_dim_rejected(self):
        with pytest.raises(ValueError, match="factor"):
            build_resnet32(cls_task(2), input_dim=768, map_shape=(5, 7))

    def test_param_count_closed_form(self):
        # hand-summed: initial conv + per-block convs/bns + projections + output
        k = 3
        model = build_resnet32(cls_task(k), input_dim=768, blocks_per_stage=5)

        def block_params(cin, cout, projected):
            p = cin * cout * 9 + 2 * cout  # conv1 + bn1
            p += cout * cout * 9 + 2 * cout  # conv2 + bn2
            if projected:
                p += cin * cout + 2 * cout  # 1x1 projection + bn
            return p

        expected = 1 * 16 * 9 + 2 * 16  # initial conv + bn
        for stage, (cin, cout) in enumerate(((16, 16), (16, 32), (32, 64))):
            expected += block_params(cin, cout, projected=stage > 0)
            expected += 4 * block_params(cout, cout, projected=False)
        expected += 64 * k + k
        assert param_count(model) == expected

    def test_forward_shape(self):
        model = build_resnet32(cls_task(3), input_dim=64, map_shape=(8, 8), blocks_per_stage=1)
        out = forward(model, np.random.default_rng(0).standard_normal((2, 64)))
        assert out.shape == (2, 3)

    def test_zeroed_residual_branch_reduces_to_skip(self):
        from speechattr.heads import ResidualBlock

        block = ResidualBlock(4, 4, stride=1)
        with torch.no_grad():
            for name, p in block.named_parameters():
                if not name.startswith("shortcut"):
                    p.zero_()
        block.eval()
        x = torch.rand(2, 4, 6, 6)  # non-negative, as after an upstream ReLU
        assert torch.allclose(block(x), x)

    def test_zeroed_branch_projection_block(self):
        from speechattr.heads import ResidualBlock

        block = ResidualBlock(4, 8, stride=2)
        with torch.no_grad():
            for name, p in block.named_parameters():
                if not name.startswith("shortcut"):
                    p.zero_()
        block.eval()
        x = torch.rand(2, 4, 6, 6)
        assert torch.allclose(block(x), torch.relu(block.shortcut(x)))

    def test_eval_uses_running_stats(self):
        model = build_resnet32(cls_task(2), input_dim=16, map_shape=(4, 4), blocks_per_stage=1)
        x = np.random.default_rng(1).standard_normal((4, 16))
        a = forward(model, x)
        b = forward(model, x[:1])  # batch-size independence in eval mode
        assert torch.allclose(a[:1], b, atol=1e-6)


class TestBiLstm:
    def test_attention_weights_sum_to_one(self):
        model = build_bilstm(6, cls_task(3, "sequence"), hidden=4)
        rng = np.random.default_rng(0)
        x, lengths = batch_sequences([rng.standard_normal((t, 6)) for t in (3, 7, 5)])
        w = model.attention_weights(x, lengths)
        sums = w.sum(dim=1)
        assert torch.allclose(sums, torch.ones(3), atol=1e-6)
        # padded positions carry zero weight
        assert torch.all(w[0, 3:] == 0)

    def test_single_timestep_attention_trivial(self):
        model = build_bilstm(5, reg_task("sequence"), hidden=3)
        x, lengths = batch_sequences([np.random.default_rng(1).standard_normal((1, 5))])
        w = model.attention_weights(x, lengths)
        assert torch.allclose(w, torch.ones(1, 1))

    def test_constant_sequence_output_converges_with_length(self):
        # Recurrent state needs time to saturate and the boundary timesteps
        # always differ, so constant input gives exactly length-invariant
        # output only in the T -> inf limit; the gap must shrink like 1/T.
        model = build_bilstm(4, reg_task("sequence"), hidden=3, dropout=0.0)
        frame = np.random.default_rng(2).standard_normal((1, 4))

        def out(t):
            return forward(model, [np.repeat(frame, t, axis=0)])

        gap_short = float((out(25) - out(50)).abs().max())
        gap_long = float((out(200) - out(400)).abs().max())
        assert gap_long < gap_short / 4
        assert gap_long < 0.05

    def test_layer_count(self):
        model = build_bilstm(8, cls_task(2, "sequence"), hidden=4)
        assert len(model.lstms) == 3
        assert all(l.bidirectional for l in model.lstms)

    def test_bad_hidden(self):
        with pytest.raises(ValueError):
            build_bilstm(8, cls_task(2, "sequence"), hidden=0)

    def test_eval_deterministic_with_padding(self):
        model = build_bilstm(4, cls_task(2, "sequence"), hidden=3)
        rng = np.random.default_rng(3)
        seqs = [rng.standard_normal((t, 4)) for t in (2, 6)]
        a = forward(model, seqs)
        b = forward(model, seqs)
        assert torch.equal(a, b)
        # padding must not change a sequence's prediction
        solo = forward(model, seqs[:1])
        assert torch.allclose(a[0], solo[0], atol=1e-6)


class TestGradients:
    def test_mlp_finite_differences(self):
        task = cls_task(3)
        model = build_mlp(5, task, dropout=0.0, seed=7).double()
        rng = np.random.default_rng(0)
        x = torch.as_tensor(rng.standard_normal((2, 5)))
        t = torch.as_tensor(rng.integers(0, 3, 2))
        err = finite_difference_check(model, x, t, loss_classification, n_coords=300)
        assert err <= 1e-4

    def test_bilstm_finite_differences(self):
        model = build_bilstm(4, reg_task("sequence"), hidden=3, dropout=0.0, seed=8).double()
        rng = np.random.default_rng(1)
        x, lengths = batch_sequences(
            [rng.standard_normal((5, 4)), rng.standard_normal((5, 4))], dtype=torch.float64
        )
        t = torch.as_tensor(rng.standard_normal(2))
        err = finite_difference_check(model, (x, lengths), t, loss_regression, n_coords=300)
        assert err <= 1e-4

    def test_resnet_finite_differences(self):
        model = build_resnet32(
            cls_task(2), input_dim=16, map_shape=(4, 4), blocks_per_stage=1, seed=9
        ).double()
        rng = np.random.default_rng(2)
        x = torch.as_tensor(rng.standard_normal((2, 16)))
        t = torch.as_tensor(rng.integers(0, 2, 2))
        err = finite_difference_check(model, x, t, loss_classification, n_coords=150)
        assert err <= 1e-4

    def test_gradient_zero_at_minimum(self):
        # 1-parameter toy: loss = |w*1 - 0| has a kink at 0, so use the
        # squared toy via regression on a matching target instead.
        model = build_mlp(1, reg_task(), dropout=0.0, seed=0).double()
        x = torch.zeros(1, 1, dtype=torch.float64)
        target = forward(model, x).reshape(-1).detach()  # prediction == target
        from speechattr.heads import gradient

        grads = gradient(model, x, target, loss_regression)
        total = sum(float(g.abs().sum()) for g in grads.values())
        assert total == pytest.approx(0.0, abs=1e-12)


def test_build_head_dispatch():
    assert build_head("mlp", 8, cls_task(2)).architecture == "mlp"
    assert build_head("bilstm", 8, cls_task(2, "sequence")).architecture == "bilstm"
    assert build_head("resnet32", 16, cls_task(2), map_shape=(4, 4)).architecture == "resnet32"
    with pytest.raises(ValueError, match="unknown architecture"):
        build_head("transformer", 8, cls_task(2))
