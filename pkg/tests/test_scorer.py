import math

import numpy as np
import pytest
import torch
from torch.nn import functional as F

from symdet.errors import DivergenceError, InvalidInputError, InvalidLabelError
from symdet.hemisphere import fibonacci_hemisphere, knn_graph
from symdet.scorer import (
    LEAKY_SLOPE,
    ConvStack,
    EdgeConv,
    StageLabels,
    batch_loss,
    build_head,
    class_balanced_bce,
    descriptor_length,
    downscale3d,
    head_forward,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    train_step,
)
from symdet.search import SearchConfig
from symdet.synth import generate_scene
from symdet.training import stage_samples, train
from symdet.volume import DepthSweep

GRAPH8 = knn_graph(fibonacci_hemisphere(8), 3)


def numeric_grad(f, x, eps=1e-6):
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        up = f().item()
        flat[i] = old - eps
        down = f().item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def check_gradients(module, inputs, loss_fn):
    params = [inputs] + [p for p in module.parameters()]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    with torch.no_grad():
        for p, g in zip(params, grads):
            num = numeric_grad(loss_fn, p)
            # floor the scale: batch normalization cancels the linear bias, whose gradient is exactly 0
            rel = (g - num).abs().max() / max(num.abs().max().item(), 1e-3)
            assert rel < 1e-4, rel


class TestEdgeConv:
    def test_gradients(self):
        torch.manual_seed(0)
        layer = EdgeConv(5, 4).double()
        h = torch.randn(8, 5, dtype=torch.float64, requires_grad=True)
        weights = torch.randn(8, 4, dtype=torch.float64)
        check_gradients(layer, h, lambda: (layer(h, GRAPH8) * weights).sum())

    def test_matches_concatenated_form(self):
        torch.manual_seed(1)
        layer = EdgeConv(5, 4).double()
        h = torch.randn(8, 5, dtype=torch.float64)
        g = torch.as_tensor(GRAPH8)
        # edge features [h_i ; h_j - h_i] through the full linear map
        feats = torch.cat([h[:, None].expand(-1, g.shape[1], -1), h[g] - h[:, None]], dim=-1)
        edges = layer.linear(feats)
        edges = layer.norm(edges.reshape(-1, 4)).reshape(8, -1, 4)
        expected = F.leaky_relu(edges, LEAKY_SLOPE).max(dim=1).values
        torch.testing.assert_close(layer(h, GRAPH8), expected, rtol=0, atol=1e-12)

    def test_zero_weight_gives_activated_bias(self):
        layer = EdgeConv(3, 4).double().eval()
        with torch.no_grad():
            layer.linear.weight.zero_()
            layer.linear.bias.copy_(torch.tensor([-1.0, 0.5, 2.0, -0.1]))
        out = layer(torch.randn(8, 3, dtype=torch.float64), GRAPH8)
        b = layer.linear.bias / math.sqrt(1 + layer.norm.eps)
        torch.testing.assert_close(out, F.leaky_relu(b, LEAKY_SLOPE).expand(8, -1))

    def test_permutation_equivariance(self):
        torch.manual_seed(2)
        layer = EdgeConv(5, 4).double()
        h = torch.randn(8, 5, dtype=torch.float64)
        perm = np.random.default_rng(0).permutation(8)
        inv = np.argsort(perm)
        # node perm[i] becomes node i
        g2 = inv[GRAPH8[perm]]
        torch.testing.assert_close(layer(h[perm], g2), layer(h, GRAPH8)[perm], rtol=0, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(InvalidInputError):
            EdgeConv(5, 4)(torch.zeros(8, 6), GRAPH8)


class TestDownscale:
    def test_gradients(self):
        torch.manual_seed(3)
        conv = ConvStack().double()
        vol = torch.randn(1, 8, 8, 8, dtype=torch.float64, requires_grad=True)
        weights = torch.randn(1, 2, dtype=torch.float64)
        check_gradients(conv, vol, lambda: (conv(vol) * weights).sum())

    def test_shape(self):
        conv = ConvStack()
        out = downscale3d(np.random.default_rng(0).standard_normal((64, 64, 64)).astype(np.float32), conv)
        assert out.shape == (descriptor_length(64, 64, 64),) == (16 * 8 * 8,)

    def test_divisibility(self):
        with pytest.raises(InvalidInputError):
            downscale3d(np.zeros((6, 8, 8), np.float32), ConvStack())
        with pytest.raises(InvalidInputError):
            downscale3d(np.zeros((8, 12, 8), np.float32), ConvStack())


class TestLoss:
    labels = StageLabels(np.array([0]), np.array([1, 2, 3]))

    def test_half(self):
        assert class_balanced_bce(np.full(4, 0.5), self.labels) == pytest.approx(math.log(2), abs=1e-9)

    def test_perfect(self):
        assert class_balanced_bce(np.array([1.0, 0.0, 0.0, 0.0]), self.labels) < 1e-6

    def test_duplicated_negatives(self):
        c = np.array([0.7, 0.2, 0.4, 0.1])
        dup = StageLabels(np.array([0]), np.array([1, 2, 3, 1, 2, 3]))
        assert class_balanced_bce(c, dup) == pytest.approx(class_balanced_bce(c, self.labels), abs=1e-12)

    def test_hand_value(self):
        c = np.array([0.8, 0.3, 0.1, 0.6])
        expected = 0.5 * -math.log(0.8) + 0.5 * np.mean([-math.log(0.7), -math.log(0.9), -math.log(0.4)])
        assert class_balanced_bce(c, self.labels) == pytest.approx(expected, abs=1e-12)

    def test_empty_class(self):
        with pytest.raises(InvalidLabelError):
            class_balanced_bce(np.full(3, 0.5), StageLabels(np.array([], int), np.array([0, 1, 2])))
        with pytest.raises(InvalidLabelError):
            class_balanced_bce(np.full(3, 0.5), StageLabels(np.array([0]), np.array([], int)))

    def test_nearest_labels(self):
        normals = fibonacci_hemisphere(16).normals
        lab = StageLabels.nearest(normals, normals[5] * -1)
        assert list(lab.positives) == [5]
        assert sorted(lab.negatives) == [i for i in range(16) if i != 5]


def tiny_batch(seed=0, nodes=8, width=16):
    rng = np.random.default_rng(seed)
    sample = [(rng.standard_normal((nodes, width)).astype(np.float32), GRAPH8,
               StageLabels(np.array([1]), np.array([i for i in range(nodes) if i != 1])))]
    return [sample]


class TestHead:
    def test_zero_output_layer_gives_half(self):
        head = build_head(16, (8, 4), seed=0)
        with torch.no_grad():
            head.out.weight.zero_()
            head.out.bias.zero_()
        desc, graph, _ = tiny_batch()[0][0]
        np.testing.assert_array_equal(head_forward(head, desc, graph), np.full(8, 0.5, np.float32))

    def test_seed_determinism(self):
        a, b = build_head(16, (8, 4), seed=3), build_head(16, (8, 4), seed=3)
        for (na, ta), (nb, tb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb and torch.equal(ta, tb)
        c = build_head(16, (8, 4), seed=4)
        assert not torch.equal(a.out.weight, c.out.weight)

    def test_conv_stack_is_frozen(self):
        head = build_head(16, (8, 4))
        assert not any(p.requires_grad for p in head.conv.parameters())
        opt = make_optimizer(head)
        n_trainable = sum(p.numel() for g in opt.param_groups for p in g["params"])
        assert n_trainable == sum(p.numel() for p in head.parameters()) - sum(p.numel() for p in head.conv.parameters())

    def test_fifty_steps_decrease(self):
        head = build_head(16, (8, 4), seed=0)
        opt = make_optimizer(head)
        batch = tiny_batch()
        losses = [train_step(head, batch, opt) for _ in range(50)]
        assert np.all(np.diff(losses) < 0)

    def test_weight_decay_only_step(self):
        head = build_head(16, (8, 4), seed=0)
        with torch.no_grad():
            head.out.weight.zero_()
            head.out.bias.zero_()
        # identical nodes, one positive and one negative: the gradient vanishes exactly
        desc = np.tile(np.random.default_rng(0).standard_normal(16).astype(np.float32), (2, 1))
        batch = [[(desc, np.array([[1], [0]]), StageLabels(np.array([0]), np.array([1])))]]
        before = {k: v.clone() for k, v in head.named_parameters() if v.requires_grad}
        opt = make_optimizer(head, lr=3e-4, weight_decay=1e-7)
        train_step(head, batch, opt)
        for name, p in head.named_parameters():
            if name in before:
                torch.testing.assert_close(p.detach(), before[name] * (1 - 3e-4 * 1e-7), rtol=0, atol=1e-12)
                assert p.grad is not None and not p.grad.any()

    def test_divergence(self):
        head = build_head(16, (8, 4))
        desc, graph, labels = tiny_batch()[0][0]
        bad = [[(np.full_like(desc, np.nan), graph, labels)]]
        with pytest.raises(DivergenceError):
            train_step(head, bad, make_optimizer(head))

    def test_checkpoint_round_trip(self, tmp_path):
        head = build_head(16, (8, 4), seed=5)
        opt = make_optimizer(head)
        for _ in range(3):
            train_step(head, tiny_batch(), opt)
        path = save_checkpoint(head, tmp_path / "h.json")
        back = load_checkpoint(path)
        desc, graph, _ = tiny_batch(seed=9)[0][0]
        assert head_forward(head, desc, graph).tobytes() == head_forward(back, desc, graph).tobytes()
        for (na, ta), (nb, tb) in zip(head.state_dict().items(), back.state_dict().items()):
            assert na == nb and torch.equal(ta.to(tb.dtype), tb)

    def test_checkpoint_bad_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(InvalidInputError):
            load_checkpoint(tmp_path / "x.json")

    def test_batch_loss_sums_stages(self):
        head = build_head(16, (8, 4), seed=0)
        (stage,) = tiny_batch()[0]
        with torch.no_grad():
            one = float(batch_loss(head.eval(), [[stage]]))
            two = float(batch_loss(head, [[stage, stage]]))
        assert two == pytest.approx(2 * one, rel=1e-6)


def test_toy_training_separates_classes():
    cfg = SearchConfig(stage_counts=(32, 16, 16), sweep=DepthSweep(count=16))
    head = build_head(descriptor_length(16, 32, 32), (32, 16, 8), seed=0)
    samples = [stage_samples(generate_scene(s, height=32, width=32, channels=32, n_pairs=200, n_distractors=25,
                                            frustum_samples=1024), head, cfg) for s in range(64)]
    history = train(head, samples, epochs=8, seed=0)
    assert history[-1] < history[0]
    pos, neg = [], []
    for sample in samples:
        for desc, graph, labels in sample:
            c = head_forward(head, desc, graph)
            pos.extend(c[labels.positives])
            neg.extend(c[labels.negatives])
    assert np.mean(pos) > np.mean(neg)
