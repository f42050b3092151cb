"""Learned positions, Q-former shape contract, and the adapter's two paths."""

from __future__ import annotations

import pytest
import torch

from gebc.adapter import (
    LearnedPositions,
    VideoAdapter,
    VideoQFormer,
    VideoQFormerConfig,
)
from gebc.errors import ConfigError, PositionOverflow, ShapeMismatch

D0 = 32
LM_DIM = 24


def small_cfg(q=4, layers=2, heads=4):
    return VideoQFormerConfig(
        num_query_tokens=q, hidden_dim=D0, num_layers=layers, num_heads=heads
    )


def make_adapter(max_positions=128) -> VideoAdapter:
    torch.manual_seed(0)
    return VideoAdapter(small_cfg(), small_cfg(), lm_dim=LM_DIM,
                        max_positions=max_positions)


class TestLearnedPositions:
    def test_zero_init_is_identity(self):
        pos = LearnedPositions(16, 8)
        x = torch.randn(5, 3, 8)
        assert torch.equal(pos(x), x)

    def test_zero_features_expose_table(self):
        pos = LearnedPositions(16, 8)
        with torch.no_grad():
            pos.table.normal_()
        out = pos(torch.zeros(4, 3, 8))
        for t in range(4):
            for k in range(3):
                assert torch.equal(out[t, k], pos.table[t])

    def test_overflow(self):
        pos = LearnedPositions(4, 8)
        with pytest.raises(PositionOverflow):
            pos(torch.zeros(5, 1, 8))

    def test_table_gradient_matches_finite_differences(self):
        torch.manual_seed(1)
        pos = LearnedPositions(6, 4).double()
        x = torch.randn(3, 2, 4, dtype=torch.float64)
        weights = torch.randn(3, 2, 4, dtype=torch.float64)
        (pos(x) * weights).sum().backward()
        eps = 1e-5
        for t in range(3):
            for d in range(4):
                with torch.no_grad():
                    pos.table[t, d] += eps
                    up = (pos(x) * weights).sum().item()
                    pos.table[t, d] -= 2 * eps
                    dn = (pos(x) * weights).sum().item()
                    pos.table[t, d] += eps
                fd = (up - dn) / (2 * eps)
                grad = pos.table.grad[t, d].item()
                assert abs(fd - grad) <= 1e-4 * max(1.0, abs(fd))


class TestVideoQFormer:
    def test_output_shape_independent_of_length(self):
        torch.manual_seed(0)
        qf = VideoQFormer(small_cfg(q=4))
        for length in (1, 8, 64):
            out = qf(torch.randn(length, 3, D0))
            assert out.shape == (4, D0)

    def test_constant_rows_permutation_invariant(self):
        torch.manual_seed(0)
        qf = VideoQFormer(small_cfg())
        row = torch.randn(D0)
        feats = row.expand(6, 2, D0).clone()
        base = qf(feats)
        permuted = feats[torch.tensor([3, 1, 5, 0, 2, 4])]
        assert torch.equal(qf(permuted), base)

    def test_deterministic_forward(self):
        torch.manual_seed(0)
        qf = VideoQFormer(small_cfg())
        x = torch.randn(5, 2, D0)
        assert torch.equal(qf(x), qf(x))

    def test_rejects_wrong_width(self):
        qf = VideoQFormer(small_cfg())
        with pytest.raises(ShapeMismatch):
            qf(torch.randn(4, 2, D0 + 1))

    def test_query_gradient_matches_finite_differences(self):
        # Reduced config per the gradient contract: 2 layers, d_0=32, q=4.
        torch.manual_seed(2)
        qf = VideoQFormer(small_cfg(q=4, layers=2)).double()
        x = torch.randn(3, 2, D0, dtype=torch.float64)
        qf(x).mean().backward()
        grad = qf.queries.grad.clone()
        eps = 1e-3
        rng = torch.Generator().manual_seed(3)
        flat = qf.queries.view(-1)
        picks = torch.randperm(flat.numel(), generator=rng)[:24]
        for idx in picks:
            with torch.no_grad():
                flat[idx] += eps
                up = qf(x).mean().item()
                flat[idx] -= 2 * eps
                dn = qf(x).mean().item()
                flat[idx] += eps
            fd = (up - dn) / (2 * eps)
            an = grad.view(-1)[idx].item()
            assert abs(fd - an) <= 1e-3 * max(1.0, abs(fd))

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            VideoQFormerConfig(num_query_tokens=4, hidden_dim=30, num_heads=4)
        with pytest.raises(ConfigError):
            VideoQFormerConfig(num_query_tokens=0, hidden_dim=32)


class TestVideoAdapter:
    @pytest.mark.parametrize("length", [1, 4, 8, 64])
    @pytest.mark.parametrize("n_others", [0, 1, 2, 3])
    def test_shape_invariance(self, length, n_others):
        adapter = make_adapter()
        primary = torch.randn(length, 2, D0)
        others = [torch.randn(length, k + 1, D0) for k in range(n_others)]
        emb = torch.randn(D0)
        v0, v1 = adapter(primary, others, emb)
        assert v0.shape == (4, LM_DIM)
        if n_others == 0:
            assert v1 is None
        else:
            assert v1.shape == (4, LM_DIM)

    def test_mismatched_other_lengths_rejected(self):
        adapter = make_adapter()
        with pytest.raises(ShapeMismatch):
            adapter(
                torch.randn(4, 2, D0),
                [torch.randn(4, 1, D0), torch.randn(5, 1, D0)],
                torch.randn(D0),
            )

    def test_boundary_box_changes_v0(self):
        adapter = make_adapter()
        primary = torch.randn(6, 2, D0)
        v0_a, _ = adapter(primary, [], torch.randn(D0))
        v0_b, _ = adapter(primary, [], torch.randn(D0))
        assert (v0_a - v0_b).norm().item() > 0

    def test_no_dead_parameters(self):
        torch.manual_seed(4)
        adapter = make_adapter()
        primary = torch.randn(5, 2, D0)
        others = [torch.randn(5, 3, D0), torch.randn(5, 1, D0)]
        emb = torch.randn(D0, requires_grad=True)
        v0, v1 = adapter(primary, others, emb)
        loss = v0.square().sum() + v1.square().sum()
        loss.backward()
        for name, p in adapter.named_parameters():
            assert p.grad is not None, f"no grad for {name}"
            # Positional rows beyond L=5 legitimately stay untouched.
            if "positions.table" in name:
                assert p.grad[:5].abs().sum().item() > 0, f"dead rows in {name}"
            else:
                assert p.grad.abs().sum().item() > 0, f"dead parameter {name}"

    def test_mismatched_hidden_dims_rejected(self):
        with pytest.raises(ConfigError):
            VideoAdapter(
                small_cfg(),
                VideoQFormerConfig(num_query_tokens=4, hidden_dim=16, num_heads=4),
                lm_dim=LM_DIM,
            )

    def test_to_lm_zero_input_gives_bias(self):
        adapter = make_adapter()
        zero = torch.zeros(3, D0)
        out = adapter.primary_to_lm(zero)
        for row in out:
            torch.testing.assert_close(row, adapter.primary_to_lm.bias)

    def test_to_lm_identity_passthrough(self):
        lin = torch.nn.Linear(D0, D0)
        with torch.no_grad():
            lin.weight.copy_(torch.eye(D0))
            lin.bias.zero_()
        x = torch.randn(4, D0)
        torch.testing.assert_close(lin(x), x)

    def test_to_lm_weight_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        adapter = make_adapter()
        lin = adapter.primary_to_lm.double()
        x = torch.randn(3, D0, dtype=torch.float64)
        lin(x).sum().backward()
        eps = 1e-4
        w = lin.weight
        rng = torch.Generator().manual_seed(6)
        picks = torch.randperm(w.numel(), generator=rng)[:20]
        flat = w.view(-1)
        for idx in picks:
            with torch.no_grad():
                flat[idx] += eps
                up = lin(x).sum().item()
                flat[idx] -= 2 * eps
                dn = lin(x).sum().item()
                flat[idx] += eps
            fd = (up - dn) / (2 * eps)
            an = w.grad.view(-1)[idx].item()
            assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd))
