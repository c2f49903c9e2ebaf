import numpy as np
import pytest
import torch

from polyplan.config import ConfigError, ModelConfig
from polyplan.model import (
    Backbone,
    FloorplanModel,
    MSDeformableAttention,
    Prediction,
    TwoLevelDecoder,
    decode_to_floorplan,
    intra_polygon_mask,
    inverse_sigmoid,
    positional_encode,
)


def tiny_config(**overrides):
    defaults = dict(
        map_size=64,
        channels=32,
        ffn_dim=64,
        num_heads=4,
        enc_layers=2,
        dec_layers=2,
        num_rooms=3,
        num_corners=5,
        num_line_queries=4,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


class TestPositionalEncode:
    def test_origin_pattern(self):
        enc = positional_encode(torch.zeros(1, 2, dtype=torch.float64), 16)[0]
        np.testing.assert_allclose(enc[0::2].numpy(), 0.0)
        np.testing.assert_allclose(enc[1::2].numpy(), 1.0)

    def test_distinct_coords_distinct_encodings(self):
        grid = torch.stack(
            torch.meshgrid(torch.linspace(0, 1, 9), torch.linspace(0, 1, 9), indexing="ij"),
            dim=-1,
        ).reshape(-1, 2)
        enc = positional_encode(grid, 32)
        dists = torch.cdist(enc, enc)
        dists.fill_diagonal_(torch.inf)
        assert float(dists.min()) > 1e-6

    def test_continuity(self):
        q = torch.tensor([[0.4, 0.7]], dtype=torch.float64)
        base = positional_encode(q, 64)
        for delta in (1e-2, 1e-4, 1e-6):
            moved = positional_encode(q + delta, 64)
            assert float((moved - base).norm()) < 50 * delta

    def test_rejects_odd_channels(self):
        with pytest.raises(ValueError):
            positional_encode(torch.zeros(1, 2), 30)


class TestBackbone:
    def test_level_shapes(self):
        cfg = ModelConfig(map_size=256, channels=64, num_heads=4)
        bb = Backbone(cfg)
        levels = bb(torch.zeros(1, 1, 256, 256))
        assert [tuple(l.shape[2:]) for l in levels] == [(32, 32), (16, 16), (8, 8), (4, 4)]
        assert all(l.shape[1] == 64 for l in levels)

    def test_zero_input_finite(self):
        bb = Backbone(tiny_config())
        levels = bb(torch.zeros(2, 1, 64, 64))
        assert all(torch.isfinite(l).all() for l in levels)

    def test_deterministic(self):
        torch.manual_seed(0)
        bb = Backbone(tiny_config())
        x = torch.rand(1, 1, 64, 64)
        with torch.no_grad():
            a, b = bb(x), bb(x)
        for la, lb in zip(a, b):
            assert torch.equal(la, lb)

    def test_indivisible_size_rejected(self):
        bb = Backbone(tiny_config())
        with pytest.raises(ValueError, match="divisible"):
            bb(torch.zeros(1, 1, 60, 60))
        with pytest.raises(ConfigError):
            ModelConfig(map_size=100)


def constant_feature_setup(channels=8, heads=2, points=2):
    torch.manual_seed(0)
    attn = MSDeformableAttention(channels, heads, num_levels=1, num_points=points).double()
    h = w = 8
    return attn, h, w


class TestMSDeformableAttention:
    def test_one_hot_attention_returns_sampled_feature(self):
        attn, h, w = constant_feature_setup(channels=8, heads=1, points=2)
        values = torch.randn(1, h * w, 8, dtype=torch.float64)
        with torch.no_grad():
            attn.sampling_offsets.bias.zero_()
            attn.attention_weights.bias.copy_(torch.tensor([50.0, -50.0]))  # one-hot on point 0
        ref = torch.tensor([[[2.5 / w, 3.5 / h]]], dtype=torch.float64)  # pixel (3, 2) center
        out = attn(torch.zeros(1, 1, 8, dtype=torch.float64), ref, values, [(h, w)])
        expected = attn.output_proj(attn.value_proj(values[0, 3 * w + 2]))
        assert torch.allclose(out[0, 0], expected, atol=1e-10)

    def test_constant_map_reference_independent(self):
        attn, h, w = constant_feature_setup()
        values = torch.ones(1, h * w, 8, dtype=torch.float64)
        queries = torch.randn(1, 4, 8, dtype=torch.float64)
        with torch.no_grad():
            attn.sampling_offsets.bias.zero_()
        refs1 = torch.rand(1, 4, 2, dtype=torch.float64) * 0.5 + 0.25
        refs2 = torch.rand(1, 4, 2, dtype=torch.float64) * 0.5 + 0.25
        out1 = attn(queries, refs1, values, [(h, w)])
        out2 = attn(queries, refs2, values, [(h, w)])
        assert torch.allclose(out1, out2, atol=1e-10)

    def test_gradient_wrt_reference_matches_fd(self):
        torch.manual_seed(3)
        attn = MSDeformableAttention(8, 2, num_levels=2, num_points=2).double()
        shapes = [(8, 8), (4, 4)]
        values = torch.randn(1, 8 * 8 + 4 * 4, 8, dtype=torch.float64)
        queries = torch.randn(1, 3, 8, dtype=torch.float64)
        base = np.array([[[0.312, 0.533], [0.661, 0.274], [0.437, 0.818]]])  # off cell boundaries
        ref = torch.tensor(base, requires_grad=True)
        attn(queries, ref, values, shapes).sum().backward()
        h_step = 1e-6
        for qi in range(3):
            for c in range(2):
                plus, minus = base.copy(), base.copy()
                plus[0, qi, c] += h_step
                minus[0, qi, c] -= h_step
                fd = (
                    attn(queries, torch.tensor(plus), values, shapes).sum()
                    - attn(queries, torch.tensor(minus), values, shapes).sum()
                ).item() / (2 * h_step)
                grad = ref.grad[0, qi, c].item()
                assert grad == pytest.approx(fd, rel=1e-3, abs=1e-7)

    def test_output_shape_matches_queries(self):
        attn, h, w = constant_feature_setup()
        values = torch.randn(2, h * w, 8, dtype=torch.float64)
        queries = torch.randn(2, 7, 8, dtype=torch.float64)
        refs = torch.rand(2, 7, 2, dtype=torch.float64)
        assert attn(queries, refs, values, [(h, w)]).shape == (2, 7, 8)


class TestEncoder:
    def test_shape_preservation_and_determinism(self):
        torch.manual_seed(1)
        cfg = tiny_config()
        model = FloorplanModel(cfg)
        x = torch.rand(1, 64, 64)
        with torch.no_grad():
            levels = model.backbone(x[:, None])
            mem1, shapes = model.encoder(levels)
            mem2, _ = model.encoder(levels)
        assert mem1.shape == (1, 8 * 8 + 4 * 4 + 2 * 2 + 1, cfg.channels)
        assert torch.equal(mem1, mem2)
        assert torch.isfinite(mem1).all()


class TestDecoder:
    def test_zero_offsets_keep_coords(self):
        torch.manual_seed(0)
        cfg = tiny_config()
        dec = TwoLevelDecoder(cfg, 2, 3, cfg.num_room_types).double()
        memory = torch.randn(1, 16, cfg.channels, dtype=torch.float64)
        with torch.no_grad():
            outs = dec(memory, [(4, 4)])
        init = torch.sigmoid(dec.coord_logits).view(2, 3, 2)
        # offset heads are zero-initialized, so coordinates pass through
        assert torch.allclose(outs[-1].coords[0], init, atol=1e-9)

    def test_intra_mask_blocks_cross_polygon_influence(self):
        torch.manual_seed(2)
        cfg = tiny_config()
        layer_cfg = tiny_config(dec_layers=1)
        dec = TwoLevelDecoder(layer_cfg, 2, 3, 4).double()
        memory = torch.randn(1, 16 + 4 + 1 + 1, layer_cfg.channels, dtype=torch.float64)
        shapes = [(4, 4), (2, 2), (1, 1), (1, 1)]
        mask = intra_polygon_mask(2, 3)
        content = torch.randn(1, 6, layer_cfg.channels, dtype=torch.float64)
        pos = torch.randn(1, 6, layer_cfg.channels, dtype=torch.float64)
        coords = torch.rand(1, 6, 2, dtype=torch.float64)
        perturbed = content.clone()
        perturbed[0, :3] += torch.randn(3, layer_cfg.channels, dtype=torch.float64)
        with torch.no_grad():
            out_a = dec.layers[0](content, pos, coords, memory, shapes, mask)
            out_b = dec.layers[0](perturbed, pos, coords, memory, shapes, mask)
        assert torch.allclose(out_a[0, 3:], out_b[0, 3:], atol=1e-10)
        # without the mask the same perturbation must leak across polygons
        with torch.no_grad():
            out_c = dec.layers[0](content, pos, coords, memory, shapes, None)
            out_d = dec.layers[0](perturbed, pos, coords, memory, shapes, None)
        assert not torch.allclose(out_c[0, 3:], out_d[0, 3:], atol=1e-6)

    def test_coords_stay_in_unit_interval(self):
        torch.manual_seed(4)
        cfg = tiny_config(dec_layers=4)
        model = FloorplanModel(cfg)
        with torch.no_grad():
            out = model(torch.rand(1, 64, 64))
        for pred in out["rooms"]:
            assert float(pred.coords.min()) >= 0.0 and float(pred.coords.max()) <= 1.0


class TestHeads:
    def test_type_probabilities_sum_to_one(self):
        torch.manual_seed(0)
        model = FloorplanModel(tiny_config())
        with torch.no_grad():
            out = model(torch.rand(1, 64, 64))
        pred = out["rooms"][-1]
        assert pred.coords.shape == (1, 3, 5, 2)
        assert pred.probs.shape == (1, 3, 5)
        assert pred.type_logits.shape == (1, 3, 17)
        sums = pred.type_probs().sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_mean_pool_permutation_invariance(self):
        torch.manual_seed(1)
        cfg = tiny_config()
        dec = TwoLevelDecoder(cfg, 2, 4, cfg.num_room_types).double()
        emb = torch.randn(1, 2, 4, cfg.channels, dtype=torch.float64)
        logits = dec.type_head(emb.mean(dim=2))
        permuted = emb[:, :, torch.randperm(4)]
        assert torch.allclose(dec.type_head(permuted.mean(dim=2)), logits, atol=1e-12)


class TestForwardVariants:
    def test_rooms_variant_per_layer_predictions(self):
        model = FloorplanModel(tiny_config(dec_layers=3))
        with torch.no_grad():
            out = model(torch.rand(64, 64))
        assert len(out["rooms"]) == 3
        assert out["lines"] is None
        assert out["rooms"][0].coords.shape == (1, 3, 5, 2)

    def test_default_paper_scale_shapes(self):
        cfg = ModelConfig()
        assert (cfg.num_rooms, cfg.num_corners, cfg.enc_layers, cfg.dec_layers) == (20, 40, 6, 6)
        joint = ModelConfig.for_variant("joint")
        assert joint.num_rooms == 20 * 70 // 20

    def test_joint_variant_type_space(self):
        cfg = tiny_config(variant="joint", num_rooms=6)
        model = FloorplanModel(cfg)
        with torch.no_grad():
            out = model(torch.rand(1, 64, 64))
        assert out["rooms"][-1].coords.shape == (1, 6, 5, 2)
        assert out["rooms"][-1].type_logits.shape == (1, 6, 16 + 2 + 1)

    def test_line_single_level_endpoints(self):
        cfg = tiny_config(variant="lines_single_level")
        model = FloorplanModel(cfg)
        with torch.no_grad():
            out = model(torch.rand(1, 64, 64))
        assert out["lines"][-1].coords.shape == (1, 4, 2, 2)
        assert out["lines"][-1].type_logits.shape == (1, 4, 3)

    def test_line_two_level_shapes(self):
        cfg = tiny_config(variant="lines_two_level")
        model = FloorplanModel(cfg)
        with torch.no_grad():
            out = model(torch.rand(1, 64, 64))
        assert out["lines"][-1].coords.shape == (1, 4, 2, 2)

    def test_single_level_room_mode(self):
        cfg = tiny_config(room_query_mode="single_level")
        model = FloorplanModel(cfg)
        with torch.no_grad():
            out = model(torch.rand(1, 64, 64))
        assert out["rooms"][-1].coords.shape == (1, 3, 5, 2)
        assert out["rooms"][-1].probs.shape == (1, 3, 5)

    def test_forward_deterministic(self):
        torch.manual_seed(7)
        model = FloorplanModel(tiny_config())
        x = torch.rand(1, 64, 64)
        with torch.no_grad():
            a = model(x)["rooms"][-1]
            b = model(x)["rooms"][-1]
        assert torch.equal(a.coords, b.coords)
        assert torch.equal(a.probs, b.probs)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(variant="unknown")


def manual_prediction(coords, probs, logits):
    return {
        "rooms": [
            Prediction(
                coords=torch.tensor(coords, dtype=torch.float64)[None],
                probs=torch.tensor(probs, dtype=torch.float64)[None],
                type_logits=torch.tensor(logits, dtype=torch.float64)[None],
            )
        ],
        "lines": None,
    }


class TestDecodeToFloorplan:
    def setup_method(self):
        self.cfg = tiny_config(num_rooms=2, num_corners=4)

    def test_all_invalid_gives_empty(self):
        out = manual_prediction(np.full((2, 4, 2), 0.5), np.zeros((2, 4)), np.zeros((2, 17)))
        plan = decode_to_floorplan(out, self.cfg)
        assert plan.rooms == [] and plan.doors == [] and plan.windows == []

    def test_valid_square_kept_in_order(self):
        coords = np.zeros((2, 4, 2))
        coords[0] = [(0.1, 0.1), (0.5, 0.1), (0.5, 0.5), (0.1, 0.5)]
        probs = np.zeros((2, 4))
        probs[0] = 0.9
        logits = np.zeros((2, 17))
        logits[0, 3] = 5.0
        plan = decode_to_floorplan(manual_prediction(coords, probs, logits), self.cfg)
        assert len(plan.rooms) == 1
        poly, label = plan.rooms[0]
        assert label == 3
        np.testing.assert_allclose(poly, np.array(coords[0]) * 64)

    def test_two_valid_room_vertices_dropped(self):
        coords = np.zeros((2, 4, 2))
        coords[0] = [(0.1, 0.1), (0.5, 0.1), (0.5, 0.5), (0.1, 0.5)]
        probs = np.zeros((2, 4))
        probs[0, :2] = 0.9
        plan = decode_to_floorplan(manual_prediction(coords, probs, np.zeros((2, 17))), self.cfg)
        assert plan.rooms == []

    def test_joint_variant_line_entities(self):
        cfg = tiny_config(variant="joint", num_rooms=2, num_corners=4)
        coords = np.zeros((2, 4, 2))
        coords[0, :2] = [(0.2, 0.2), (0.2, 0.4)]
        probs = np.zeros((2, 4))
        probs[0, :2] = 0.95
        logits = np.full((2, 19), -5.0)
        logits[0, 16] = 5.0  # door label
        plan = decode_to_floorplan({"rooms": [Prediction(
            coords=torch.tensor(coords, dtype=torch.float64)[None],
            probs=torch.tensor(probs, dtype=torch.float64)[None],
            type_logits=torch.tensor(logits, dtype=torch.float64)[None],
        )], "lines": None}, cfg)
        assert len(plan.doors) == 1 and plan.rooms == []
        np.testing.assert_allclose(plan.doors[0], np.array(coords[0, :2]) * 64)

    def test_degenerate_duplicates_cleaned(self):
        coords = np.zeros((2, 4, 2))
        coords[0] = [(0.1, 0.1), (0.1, 0.1), (0.5, 0.1), (0.3, 0.5)]
        probs = np.zeros((2, 4))
        probs[0] = 0.9
        plan = decode_to_floorplan(manual_prediction(coords, probs, np.zeros((2, 17))), self.cfg)
        assert len(plan.rooms) == 1
        assert plan.rooms[0][0].shape[0] == 3
