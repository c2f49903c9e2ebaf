"""Density-map-to-polygon-set network.

A small convolutional backbone feeds a deformable-attention encoder; a
decoder carries a grid of learned queries organized as polygon slots x
vertex slots, refines each vertex coordinate layer by layer, and shared
heads emit per-vertex validity plus per-polygon semantics. Doors/windows
are handled either by the same decoder (joint variant) or by a separate
line decoder (two-level or single-level).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import ModelConfig
from .data import DOOR_OFFSET, WINDOW_OFFSET, Floorplan
from .geometry import signed_area

LINE_CLASSES = 2  # separate line decoders label door / window


def positional_encode(coords: Tensor, channels: int, temperature: float = 10000.0) -> Tensor:
    """Sinusoidal embedding of 2D coordinates in [0,1]; channels/2 per axis.

    Per axis the position is scaled by 2*pi and divided by a geometric
    frequency ladder; even slots take sine, odd slots cosine, so the origin
    encodes as the (0, 1, 0, 1, ...) pattern.
    """
    if channels % 4 != 0:
        raise ValueError(f"channels must be divisible by 4, got {channels}")
    half = channels // 2
    dim_t = torch.arange(half, dtype=coords.dtype, device=coords.device)
    dim_t = temperature ** (2.0 * torch.div(dim_t, 2, rounding_mode="floor") / half)
    out = []
    for axis in range(2):
        pos = coords[..., axis : axis + 1] * (2.0 * math.pi) / dim_t
        enc = torch.stack([pos[..., 0::2].sin(), pos[..., 1::2].cos()], dim=-1)
        out.append(enc.flatten(-2))
    return torch.cat(out, dim=-1)


def inverse_sigmoid(x: Tensor, eps: float = 1e-5) -> Tensor:
    x = x.clamp(eps, 1.0 - eps)
    return torch.log(x / (1.0 - x))


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int, num_layers: int = 2):
        super().__init__()
        dims = [in_dim] + [hidden] * (num_layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class Backbone(nn.Module):
    """Four stride-2 stages; the last three plus one extra stride-2 conv give
    feature levels at strides 8, 16, 32 and 64, all projected to the model
    width by 1x1 convolutions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2, c3, c4 = cfg.backbone_channels
        c = cfg.channels

        def stage(cin, cout, downsample=True):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=2 if downsample else 1, padding=1),
                _gn(cout),
                nn.ReLU(inplace=True),
                nn.Conv2d(cout, cout, 3, padding=1),
                _gn(cout),
                nn.ReLU(inplace=True),
            )

        self.stage1 = nn.Sequential(  # stride 4
            nn.Conv2d(1, c1, 3, stride=2, padding=1),
            _gn(c1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c1, 3, stride=2, padding=1),
            _gn(c1),
            nn.ReLU(inplace=True),
        )
        self.stage2 = stage(c1, c2)  # stride 8
        self.stage3 = stage(c2, c3)  # stride 16
        self.stage4 = stage(c3, c4)  # stride 32
        self.extra = nn.Sequential(nn.Conv2d(c4, c, 3, stride=2, padding=1), _gn(c))  # stride 64
        self.projections = nn.ModuleList(
            nn.Sequential(nn.Conv2d(ch, c, 1), _gn(c)) for ch in (c2, c3, c4)
        )

    def forward(self, density: Tensor) -> list[Tensor]:
        if density.shape[-1] % 64 or density.shape[-2] % 64:
            raise ValueError(f"input size {tuple(density.shape[-2:])} not divisible by 64")
        x = self.stage1(density)
        feats = []
        for stage in (self.stage2, self.stage3, self.stage4):
            x = stage(x)
            feats.append(x)
        levels = [proj(f) for proj, f in zip(self.projections, feats)]
        levels.append(self.extra(feats[-1]))
        return levels


class MSDeformableAttention(nn.Module):
    """Attention that bilinearly samples a few learned offset locations per
    head around each query's reference point, on every feature level."""

    def __init__(self, channels: int, num_heads: int, num_levels: int, num_points: int):
        super().__init__()
        self.channels = channels
        self.num_heads = num_heads
        self.head_dim = channels // num_heads
        self.num_levels = num_levels
        self.num_points = num_points
        self.sampling_offsets = nn.Linear(channels, num_heads * num_levels * num_points * 2)
        self.attention_weights = nn.Linear(channels, num_heads * num_levels * num_points)
        self.value_proj = nn.Linear(channels, channels)
        self.output_proj = nn.Linear(channels, channels)
        self._reset_parameters()

    @torch.no_grad()
    def _reset_parameters(self):
        # radial per-head offset pattern, uniform attention, variance-keeping
        # projections: the usual deformable-attention initialization
        nn.init.zeros_(self.sampling_offsets.weight)
        angles = torch.arange(self.num_heads) * (2.0 * math.pi / self.num_heads)
        grid = torch.stack([angles.cos(), angles.sin()], dim=-1)
        grid = grid / grid.abs().max(dim=-1, keepdim=True).values
        grid = grid.view(self.num_heads, 1, 1, 2).repeat(1, self.num_levels, self.num_points, 1)
        for p in range(self.num_points):
            grid[:, :, p, :] *= p + 1
        self.sampling_offsets.bias.copy_(grid.flatten())
        nn.init.zeros_(self.attention_weights.weight)
        nn.init.zeros_(self.attention_weights.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.zeros_(self.value_proj.bias)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def forward(self, queries: Tensor, reference_points: Tensor, values: Tensor, shapes) -> Tensor:
        """
        Args:
            queries: (batch, num_queries, channels).
            reference_points: (batch, num_queries, 2), normalized to [0,1].
            values: flattened multi-level features (batch, sum(h*w), channels).
            shapes: list of per-level (h, w).
        """
        b, lq, c = queries.shape
        h, l, p = self.num_heads, self.num_levels, self.num_points
        offsets = self.sampling_offsets(queries).view(b, lq, h, l, p, 2)
        sizes = torch.tensor([[w_, h_] for (h_, w_) in shapes], dtype=queries.dtype, device=queries.device)
        # offsets live in pixels of each level; sampling stays inside the map
        locs = reference_points[:, :, None, None, None, :] + offsets / sizes[None, None, None, :, None, :]
        locs = locs.clamp(0.0, 1.0)
        weights = self.attention_weights(queries).view(b, lq, h, l * p)
        weights = weights.softmax(dim=-1).view(b, lq, h, l, p)

        v = self.value_proj(values)
        v_levels = v.split([h_ * w_ for (h_, w_) in shapes], dim=1)
        out = queries.new_zeros(b * h, self.head_dim, lq)
        for lid, (h_, w_) in enumerate(shapes):
            val = v_levels[lid].view(b, h_ * w_, h, self.head_dim)
            val = val.permute(0, 2, 3, 1).reshape(b * h, self.head_dim, h_, w_)
            grid = locs[:, :, :, lid].permute(0, 2, 1, 3, 4).reshape(b * h, lq, p, 2)
            grid = grid * 2.0 - 1.0
            sampled = F.grid_sample(val, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
            w_attn = weights[:, :, :, lid].permute(0, 2, 1, 3).reshape(b * h, 1, lq, p)
            out = out + (sampled * w_attn).sum(dim=-1)
        out = out.view(b, h, self.head_dim, lq).permute(0, 3, 1, 2).reshape(b, lq, c)
        return self.output_proj(out)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, num_levels: int):
        super().__init__()
        self.attn = MSDeformableAttention(cfg.channels, cfg.num_heads, num_levels, cfg.num_points)
        self.norm1 = nn.LayerNorm(cfg.channels)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.channels, cfg.ffn_dim),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.ffn_dim, cfg.channels),
        )
        self.norm2 = nn.LayerNorm(cfg.channels)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, features, pos, reference_points, shapes):
        out = self.attn(features + pos, reference_points, features, shapes)
        features = self.norm1(features + self.dropout(out))
        features = self.norm2(features + self.dropout(self.ffn(features)))
        return features


class Encoder(nn.Module):
    """Stack of deformable self-attention layers over the flattened multi-scale
    features. Every pixel's reference point is its own normalized location; a
    learned per-level embedding tags which scale each pixel comes from."""

    def __init__(self, cfg: ModelConfig, num_levels: int = 4):
        super().__init__()
        self.cfg = cfg
        self.level_embed = nn.Parameter(torch.randn(num_levels, cfg.channels))
        self.layers = nn.ModuleList(EncoderLayer(cfg, num_levels) for _ in range(cfg.enc_layers))

    @staticmethod
    def _pixel_grid(h: int, w: int, dtype, device) -> Tensor:
        ys = (torch.arange(h, dtype=dtype, device=device) + 0.5) / h
        xs = (torch.arange(w, dtype=dtype, device=device) + 0.5) / w
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        return torch.stack([xx, yy], dim=-1).view(-1, 2)

    def forward(self, levels: list[Tensor]):
        b = levels[0].shape[0]
        dtype, device = levels[0].dtype, levels[0].device
        shapes = [(f.shape[2], f.shape[3]) for f in levels]
        flat, pos, refs = [], [], []
        for lid, feat in enumerate(levels):
            h, w = shapes[lid]
            flat.append(feat.flatten(2).transpose(1, 2))  # (b, h*w, c)
            grid = self._pixel_grid(h, w, dtype, device)
            pos.append(positional_encode(grid, self.cfg.channels) + self.level_embed[lid])
            refs.append(grid)
        features = torch.cat(flat, dim=1)
        pos = torch.cat(pos, dim=0).unsqueeze(0).expand(b, -1, -1)
        reference_points = torch.cat(refs, dim=0).unsqueeze(0).expand(b, -1, -1)
        for layer in self.layers:
            features = layer(features, pos, reference_points, shapes)
        return features, shapes


class DecoderLayer(nn.Module):
    """Self-attention over all queries, deformable cross-attention into the
    encoded map at each query's current coordinate, then an FFN."""

    def __init__(self, cfg: ModelConfig, num_levels: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(cfg.channels, cfg.num_heads, dropout=cfg.dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(cfg.channels)
        self.cross_attn = MSDeformableAttention(cfg.channels, cfg.num_heads, num_levels, cfg.num_points)
        self.norm2 = nn.LayerNorm(cfg.channels)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.channels, cfg.ffn_dim),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.ffn_dim, cfg.channels),
        )
        self.norm3 = nn.LayerNorm(cfg.channels)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, content, pos_query, reference_points, memory, shapes, attn_mask=None):
        q = content + pos_query
        sa, _ = self.self_attn(q, q, content, attn_mask=attn_mask, need_weights=False)
        content = self.norm1(content + self.dropout(sa))
        ca = self.cross_attn(content + pos_query, reference_points, memory, shapes)
        content = self.norm2(content + self.dropout(ca))
        content = self.norm3(content + self.dropout(self.ffn(content)))
        return content


@dataclass
class Prediction:
    """One decoder layer's output for a batch."""

    coords: Tensor  # (batch, M, N, 2) in [0,1]
    probs: Tensor  # (batch, M, N) vertex validity
    type_logits: Tensor  # (batch, M, num_classes + 1), empty class last

    def type_probs(self) -> Tensor:
        return self.type_logits.softmax(dim=-1)


def intra_polygon_mask(num_polygons: int, num_vertices: int, device=None) -> Tensor:
    """Attention mask that confines vertex-slot self-attention to its own
    polygon (True = blocked)."""
    total = num_polygons * num_vertices
    poly_of = torch.arange(total, device=device) // num_vertices
    return poly_of[:, None] != poly_of[None, :]


class TwoLevelDecoder(nn.Module):
    """Polygon decoder: a learned (polygons x vertices) query grid whose
    vertex coordinates double as deformable-attention reference points and
    are refined after every layer."""

    def __init__(self, cfg: ModelConfig, num_polygons: int, num_vertices: int, num_classes: int, num_levels: int = 4):
        super().__init__()
        self.cfg = cfg
        self.num_polygons = num_polygons
        self.num_vertices = num_vertices
        c = cfg.channels
        total = num_polygons * num_vertices
        self.content = nn.Parameter(torch.randn(total, c))
        self.coord_logits = nn.Parameter(torch.randn(total, 2))
        self.layers = nn.ModuleList(DecoderLayer(cfg, num_levels) for _ in range(cfg.dec_layers))
        self.pos_mlp = MLP(c, c, c, 2)
        self.offset_heads = nn.ModuleList(MLP(c, c, 2, 2) for _ in range(cfg.dec_layers))
        for head in self.offset_heads:
            nn.init.zeros_(head.layers[-1].weight)
            nn.init.zeros_(head.layers[-1].bias)
        self.validity_head = MLP(c, c, 1, 2)
        self.type_head = nn.Linear(c, num_classes + 1)

    def forward(self, memory: Tensor, shapes, attn_mask=None) -> list[Prediction]:
        b = memory.shape[0]
        m, n = self.num_polygons, self.num_vertices
        content = self.content.unsqueeze(0).expand(b, -1, -1)
        coords = torch.sigmoid(self.coord_logits).unsqueeze(0).expand(b, -1, -1)
        outputs = []
        for layer, offset_head in zip(self.layers, self.offset_heads):
            pos_query = self.pos_mlp(positional_encode(coords, self.cfg.channels))
            content = layer(content, pos_query, coords, memory, shapes, attn_mask)
            coords = torch.sigmoid(inverse_sigmoid(coords) + offset_head(content))
            probs = torch.sigmoid(self.validity_head(content)).squeeze(-1)
            type_logits = self.type_head(content.view(b, m, n, -1).mean(dim=2))
            outputs.append(
                Prediction(
                    coords=coords.view(b, m, n, 2),
                    probs=probs.view(b, m, n),
                    type_logits=type_logits,
                )
            )
        return outputs


class SingleLevelDecoder(nn.Module):
    """One query per polygon: each query embedding predicts its polygon's full
    vertex sequence; only the per-polygon reference point is refined."""

    def __init__(self, cfg: ModelConfig, num_queries: int, num_vertices: int, num_classes: int, num_levels: int = 4):
        super().__init__()
        self.cfg = cfg
        self.num_queries = num_queries
        self.num_vertices = num_vertices
        c = cfg.channels
        self.content = nn.Parameter(torch.randn(num_queries, c))
        self.ref_logits = nn.Parameter(torch.randn(num_queries, 2))
        self.layers = nn.ModuleList(DecoderLayer(cfg, num_levels) for _ in range(cfg.dec_layers))
        self.pos_mlp = MLP(c, c, c, 2)
        self.ref_heads = nn.ModuleList(MLP(c, c, 2, 2) for _ in range(cfg.dec_layers))
        for head in self.ref_heads:
            nn.init.zeros_(head.layers[-1].weight)
            nn.init.zeros_(head.layers[-1].bias)
        self.coords_head = MLP(c, c, num_vertices * 2, 2)
        self.validity_head = MLP(c, c, num_vertices, 2)
        self.type_head = nn.Linear(c, num_classes + 1)

    def forward(self, memory: Tensor, shapes, attn_mask=None) -> list[Prediction]:
        b = memory.shape[0]
        m, n = self.num_queries, self.num_vertices
        content = self.content.unsqueeze(0).expand(b, -1, -1)
        refs = torch.sigmoid(self.ref_logits).unsqueeze(0).expand(b, -1, -1)
        outputs = []
        for layer, ref_head in zip(self.layers, self.ref_heads):
            pos_query = self.pos_mlp(positional_encode(refs, self.cfg.channels))
            content = layer(content, pos_query, refs, memory, shapes, attn_mask)
            refs = torch.sigmoid(inverse_sigmoid(refs) + ref_head(content))
            coords = torch.sigmoid(self.coords_head(content)).view(b, m, n, 2)
            probs = torch.sigmoid(self.validity_head(content)).view(b, m, n)
            outputs.append(Prediction(coords=coords, probs=probs, type_logits=self.type_head(content)))
        return outputs


class FloorplanModel(nn.Module):
    """Full pipeline; `forward` returns every decoder layer's predictions so
    the trainer can supervise each refinement stage."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.encoder = Encoder(cfg)
        if cfg.room_query_mode == "two_level":
            self.room_decoder = TwoLevelDecoder(cfg, cfg.num_rooms, cfg.num_corners, cfg.num_semantic_classes)
        else:
            self.room_decoder = SingleLevelDecoder(cfg, cfg.num_rooms, cfg.num_corners, cfg.num_semantic_classes)
        self.line_decoder = None
        if cfg.variant == "lines_two_level":
            self.line_decoder = TwoLevelDecoder(cfg, cfg.num_line_queries, 2, LINE_CLASSES)
        elif cfg.variant == "lines_single_level":
            self.line_decoder = SingleLevelDecoder(cfg, cfg.num_line_queries, 2, LINE_CLASSES)

    def forward(self, density) -> dict:
        """
        Args:
            density: (batch, H, W), (H, W) or (batch, 1, H, W) map in [0,1].
        Returns:
            {"rooms": [Prediction per decoder layer],
             "lines": same for the line decoder, or None}
        """
        x = torch.as_tensor(density) if not isinstance(density, torch.Tensor) else density
        x = x.to(next(self.parameters()).dtype)
        if x.dim() == 2:
            x = x[None, None]
        elif x.dim() == 3:
            x = x[:, None]
        levels = self.backbone(x)
        memory, shapes = self.encoder(levels)
        attn_mask = None
        if self.cfg.attn_mask_mode == "intra_polygon" and isinstance(self.room_decoder, TwoLevelDecoder):
            attn_mask = intra_polygon_mask(self.cfg.num_rooms, self.cfg.num_corners, device=x.device)
        rooms = self.room_decoder(memory, shapes, attn_mask)
        lines = self.line_decoder(memory, shapes) if self.line_decoder is not None else None
        return {"rooms": rooms, "lines": lines}


def _clean_polygon(pts: np.ndarray) -> np.ndarray | None:
    """Drop exact consecutive duplicates and reject degenerate polygons;
    returns a CCW copy or None."""
    if pts.shape[0] >= 2:
        keep = ~np.all(pts == np.roll(pts, -1, axis=0), axis=1)
        pts = pts[keep] if keep.any() else pts[:1]
    if pts.shape[0] < 3:
        return None
    if signed_area(pts) == 0.0:
        return None
    if signed_area(pts) < 0:
        pts = np.concatenate([pts[:1], pts[:0:-1]], axis=0)
    return pts


def decode_to_floorplan(
    output: dict,
    cfg: ModelConfig,
    scene: int = 0,
    threshold: float | None = None,
) -> Floorplan:
    """Turn the last decoder layer's predictions into a pixel-space floorplan.

    Per polygon slot the vertices with validity >= threshold are kept in
    sequence order; slots with fewer than 3 kept vertices are dropped, except
    that door/window-typed slots with exactly 2 kept vertices become lines.
    No other post-processing is applied.
    """
    threshold = cfg.validity_threshold if threshold is None else threshold
    size = cfg.map_size
    plan = Floorplan(width=size, height=size)
    pred = output["rooms"][-1]
    coords = pred.coords[scene].detach().cpu().numpy() * size
    probs = pred.probs[scene].detach().cpu().numpy()
    types = pred.type_logits[scene].detach().cpu().numpy()
    for m in range(coords.shape[0]):
        valid = coords[m][probs[m] >= threshold]
        label = int(np.argmax(types[m][:-1]))  # empty class only drives training
        if cfg.variant == "joint" and label >= cfg.num_room_types:
            if valid.shape[0] == 2:
                line = valid.copy()
                if label == cfg.num_room_types + DOOR_OFFSET:
                    plan.doors.append(line)
                else:
                    plan.windows.append(line)
            continue
        if valid.shape[0] < 3:
            continue
        poly = _clean_polygon(valid)
        if poly is not None:
            plan.rooms.append((poly, label))
    if output.get("lines"):
        lpred = output["lines"][-1]
        lcoords = lpred.coords[scene].detach().cpu().numpy() * size
        lprobs = lpred.probs[scene].detach().cpu().numpy()
        ltypes = lpred.type_logits[scene].detach().cpu().numpy()
        for m in range(lcoords.shape[0]):
            valid = lcoords[m][lprobs[m] >= threshold]
            if valid.shape[0] != 2:
                continue
            label = int(np.argmax(ltypes[m][:-1]))
            if label == DOOR_OFFSET:
                plan.doors.append(valid.copy())
            else:
                plan.windows.append(valid.copy())
    return plan
