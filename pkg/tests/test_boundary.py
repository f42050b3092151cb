"""Time-box normalization, inverse sigmoid, and the boundary embedding pipeline."""

from __future__ import annotations

import math
import random

import pytest
import torch

from gebc.boundary import (
    EPS,
    BoundaryEncoder,
    NormalizedTimeBox,
    apply_boundary,
    inverse_sigmoid,
    normalize_timebox,
    sinusoidal_encoding,
)
from gebc.errors import InvalidBox, LogitDomainError, ShapeMismatch


class TestNormalizeTimebox:
    def test_plain_division(self):
        box = normalize_timebox((5.0, 7.5), 10.0)
        assert box == NormalizedTimeBox(0.5, 0.75)

    def test_edges_clamped(self):
        box = normalize_timebox((0.0, 10.0), 10.0)
        assert box.start == EPS == 1e-4
        assert box.end == 1.0 - EPS

    def test_inverted_box_rejected(self):
        with pytest.raises(InvalidBox):
            normalize_timebox((7.5, 5.0), 10.0)

    def test_outside_duration_rejected(self):
        with pytest.raises(InvalidBox):
            normalize_timebox((0.0, 11.0), 10.0)
        with pytest.raises(InvalidBox):
            normalize_timebox((-1.0, 5.0), 10.0)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(InvalidBox):
            normalize_timebox((0.0, 0.0), 0.0)


class TestInverseSigmoid:
    def test_symmetry_point(self):
        assert inverse_sigmoid(0.5) == 0.0

    def test_unit_logit(self):
        assert abs(inverse_sigmoid(0.7310586) - 1.0) <= 1e-6

    def test_clamp_edge_value(self):
        expected = math.log(1e-4 / (1.0 - 1e-4))
        assert abs(inverse_sigmoid(1e-4) - expected) <= 1e-4
        assert abs(expected + 9.2102) < 1e-3

    def test_domain_enforced(self):
        with pytest.raises(LogitDomainError):
            inverse_sigmoid(0.0)
        with pytest.raises(LogitDomainError):
            inverse_sigmoid(1.0)
        with pytest.raises(LogitDomainError):
            inverse_sigmoid(-0.5)

    def test_antisymmetry_1000_random(self):
        rng = random.Random(0)
        for _ in range(1000):
            x = rng.uniform(EPS, 1.0 - EPS)
            assert abs(inverse_sigmoid(1.0 - x) + inverse_sigmoid(x)) <= 1e-9

    def test_strictly_monotone(self):
        rng = random.Random(1)
        xs = sorted(rng.uniform(EPS, 1.0 - EPS) for _ in range(200))
        ys = [inverse_sigmoid(x) for x in xs]
        for a, b in zip(ys, ys[1:]):
            assert a < b


class TestSinusoidalEncoding:
    def test_shape_and_bounds(self):
        values = torch.linspace(-9.0, 9.0, 7)
        out = sinusoidal_encoding(values, 16)
        assert out.shape == (7, 16)
        assert out.abs().max() <= 1.0 + 1e-6

    def test_zero_value_pattern(self):
        out = sinusoidal_encoding(torch.zeros(1), 8)[0]
        torch.testing.assert_close(out[0::2], torch.zeros(4))
        torch.testing.assert_close(out[1::2], torch.ones(4))

    def test_odd_dim_rejected(self):
        with pytest.raises(ShapeMismatch):
            sinusoidal_encoding(torch.zeros(1), 7)


class TestBoundaryEncoder:
    def test_deterministic(self):
        enc = BoundaryEncoder(d_0=16, d_pe=32)
        box = NormalizedTimeBox(0.25, 0.5)
        a = enc.encode(box)
        b = enc.encode(box)
        assert torch.equal(a, b)

    def test_pre_projection_is_normalized(self):
        enc = BoundaryEncoder(d_0=16, d_pe=32)
        for start, end in [(0.25, 0.5), (EPS, 1 - EPS), (0.1, 0.9)]:
            vec = enc.pre_projection(torch.tensor([start, end], dtype=torch.float64))
            assert abs(vec.mean().item()) <= 1e-5
            assert abs(vec.var(unbiased=False).item() - 1.0) <= 1e-5

    def test_jacobian_matches_finite_differences(self):
        torch.manual_seed(0)
        enc = BoundaryEncoder(d_0=8, d_pe=16).double()
        box = torch.tensor([0.3, 0.6], dtype=torch.float64, requires_grad=True)
        out = enc(box)
        jac = torch.zeros(out.shape[0], 2, dtype=torch.float64)
        for i in range(out.shape[0]):
            grad = torch.autograd.grad(out[i], box, retain_graph=True)[0]
            jac[i] = grad
        eps = 1e-6
        with torch.no_grad():
            for j in range(2):
                up = box.detach().clone()
                dn = box.detach().clone()
                up[j] += eps
                dn[j] -= eps
                fd_col = (enc(up) - enc(dn)) / (2 * eps)
                denom = jac[:, j].abs().clamp_min(1e-8)
                rel = ((fd_col - jac[:, j]).abs() / denom).max().item()
                assert rel <= 1e-4

    def test_gradients_reach_projection(self):
        enc = BoundaryEncoder(d_0=8, d_pe=16)
        out = enc.encode(NormalizedTimeBox(0.3, 0.6)).sum()
        out.backward()
        assert enc.proj.weight.grad is not None
        assert enc.proj.weight.grad.abs().sum() > 0
        assert enc.proj.bias.grad is not None
        assert enc.proj.bias.grad.abs().sum() > 0


class TestApplyBoundary:
    def test_zero_embedding_identity(self):
        feats = torch.randn(3, 2, 5)
        out = apply_boundary(feats, torch.zeros(5))
        assert torch.equal(out, feats)

    def test_zero_features_rows_equal_embedding(self):
        emb = torch.randn(5)
        out = apply_boundary(torch.zeros(3, 2, 5), emb)
        for t in range(3):
            for k in range(2):
                assert torch.equal(out[t, k], emb)

    def test_additivity_in_embedding(self):
        feats = torch.randn(2, 3, 4)
        e1 = torch.randn(4)
        e2 = torch.randn(4)
        lhs = apply_boundary(feats, e1) + e2
        rhs = apply_boundary(feats, e1 + e2)
        torch.testing.assert_close(lhs, rhs)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            apply_boundary(torch.zeros(2, 2, 4), torch.zeros(5))
        with pytest.raises(ShapeMismatch):
            apply_boundary(torch.zeros(2, 4), torch.zeros(4))
