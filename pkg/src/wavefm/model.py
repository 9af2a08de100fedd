"""Multi-modal masked-autoencoder backbone.

One token stream carries a learnable global-aggregator token, CSI patch
tokens, a separator, scene-height patch tokens, a separator, and the user
location token. The encoder sees only visible tokens; the decoder re-inserts
modality-specific mask tokens and feeds modality heads: per-patch CSI
reconstruction, a 2-D location estimate, per-patch occupancy logits, and a
coarse spatial-spectrum heatmap decoded from the aggregator token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .profiles import Profile
from .tensor import Tensor

# token kinds
PHYSC, CSI, SEP, SCENE, LOC = 0, 1, 2, 3, 4
PHYSC_POS = 0  # aggregator token is always first
PHYSC_CHANNELS = 32  # feature channels ahead of the conv refinement


@dataclass(frozen=True)
class ModelConfig:
    csi_nx: int
    csi_ny: int
    csi_patch: int
    scene_n: int
    scene_patch_cells: int
    embed_dim: int
    encoder_layers: int
    decoder_layers: int
    heads: int
    mlp_ratio: int
    coarse: tuple
    conv_physc_head: bool = True

    @classmethod
    def from_profile(cls, profile: Profile, conv_physc_head=True):
        return cls(
            csi_nx=profile.array_nx,
            csi_ny=profile.array_ny,
            csi_patch=profile.csi_patch,
            scene_n=profile.grid_n,
            scene_patch_cells=profile.scene_patch_cells,
            embed_dim=profile.embed_dim,
            encoder_layers=profile.encoder_layers,
            decoder_layers=profile.decoder_layers,
            heads=profile.attention_heads,
            mlp_ratio=profile.mlp_ratio,
            coarse=tuple(profile.coarse_spectrum),
            conv_physc_head=conv_physc_head,
        )

    def __post_init__(self):
        if self.csi_nx % self.csi_patch or self.csi_ny % self.csi_patch:
            raise ValueError("CSI patch size must divide the antenna grid")
        if self.scene_n % self.scene_patch_cells:
            raise ValueError("scene patch size must divide the height grid")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by attention heads")

    @property
    def n_csi_tokens(self):
        return (self.csi_nx // self.csi_patch) * (self.csi_ny // self.csi_patch)

    @property
    def n_scene_tokens(self):
        return (self.scene_n // self.scene_patch_cells) ** 2

    @property
    def scene_patches_per_side(self):
        return self.scene_n // self.scene_patch_cells

    @property
    def csi_patch_values(self):
        return 2 * self.csi_patch**2

    @property
    def seq_len(self):
        return self.n_csi_tokens + self.n_scene_tokens + 4

    # absolute slot ranges
    @property
    def csi_positions(self):
        return np.arange(1, 1 + self.n_csi_tokens)

    @property
    def sep_positions(self):
        return np.array([1 + self.n_csi_tokens, 2 + self.n_csi_tokens + self.n_scene_tokens])

    @property
    def scene_positions(self):
        start = 2 + self.n_csi_tokens
        return np.arange(start, start + self.n_scene_tokens)

    @property
    def loc_position(self):
        return self.seq_len - 1

    def token_kinds(self):
        kinds = np.empty(self.seq_len, dtype=np.int8)
        kinds[PHYSC_POS] = PHYSC
        kinds[self.csi_positions] = CSI
        kinds[self.sep_positions] = SEP
        kinds[self.scene_positions] = SCENE
        kinds[self.loc_position] = LOC
        return kinds


@dataclass
class SampleFeatures:
    """Normalized per-sample model inputs (numpy, not on the graph)."""

    csi_patches: np.ndarray  # (n_csi_tokens, 2 * patch^2)
    scene_patches: np.ndarray  # (n_scene_tokens, patch_cells^2)
    loc: np.ndarray  # (1, 2) in [-1, 1]
    csi_grid: np.ndarray  # (csi_nx, csi_ny) complex, normalized


@dataclass
class TokenBatch:
    embeddings: Tensor  # (seq_len, embed_dim)
    kinds: np.ndarray
    positions: np.ndarray
    visible: np.ndarray = None  # filled by the masking stage


@dataclass
class DecodedOutputs:
    csi: Tensor = None  # (n_masked_csi, 2 * patch^2)
    loc: Tensor = None  # (1, 2)
    occ_logits: Tensor = None  # (n_masked_scene, 1)
    physc: Tensor = None  # (coarse_x, coarse_y), non-negative


def patchify(grid, patch):
    """(H, W) -> (H/p * W/p, p*p), patches in row-major patch-grid order."""
    h, w = grid.shape
    g = grid.reshape(h // patch, patch, w // patch, patch)
    return g.transpose(0, 2, 1, 3).reshape(-1, patch * patch)


def unpatchify(patches, grid_shape, patch):
    h, w = grid_shape
    g = patches.reshape(h // patch, w // patch, patch, patch)
    return g.transpose(0, 2, 1, 3).reshape(h, w)


def normalize_location(rx_rel, bs_xy, half_extent):
    """BS-relative coordinates -> scene-centered [-1, 1] range."""
    absolute = np.asarray(rx_rel, dtype=np.float64) + np.asarray(bs_xy)[:2]
    return (absolute - half_extent) / half_extent


def sample_features(h_row, scene_height, rx_rel, config: ModelConfig,
                    csi_rms, height_max, half_extent, bs_xy):
    """Build normalized token features for one (channel row, scene, user)."""
    grid = np.asarray(h_row).reshape(config.csi_nx, config.csi_ny) / csi_rms
    re = patchify(grid.real, config.csi_patch)
    im = patchify(grid.imag, config.csi_patch)
    csi_patches = np.concatenate([re, im], axis=1).astype(np.float32)
    scene_patches = patchify(
        np.asarray(scene_height) / height_max, config.scene_patch_cells
    ).astype(np.float32)
    loc = normalize_location(rx_rel, bs_xy, half_extent).astype(np.float32).reshape(1, 2)
    return SampleFeatures(
        csi_patches=csi_patches,
        scene_patches=scene_patches,
        loc=loc,
        csi_grid=grid,
    )


def _trunc_normal(rng, shape, std=0.02):
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


class Model:
    """Encoder/decoder transformer with per-modality embeddings and heads."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        self.params = {}
        rng = np.random.default_rng(seed)
        d = config.embed_dim

        def weight(name, *shape, std=0.02):
            self.params[name] = Tensor(
                _trunc_normal(rng, shape, std), requires_grad=True, dtype=np.float32
            )

        def zeros(name, *shape):
            self.params[name] = Tensor(
                np.zeros(shape), requires_grad=True, dtype=np.float32
            )

        def ones(name, *shape):
            self.params[name] = Tensor(
                np.ones(shape), requires_grad=True, dtype=np.float32
            )

        weight("embed.csi.w", config.csi_patch_values, d)
        zeros("embed.csi.b", d)
        weight("embed.scene.w", config.scene_patch_cells**2, d)
        zeros("embed.scene.b", d)
        weight("embed.loc.w", 2, d)
        zeros("embed.loc.b", d)
        weight("pos.csi", config.n_csi_tokens, d)
        weight("pos.scene", config.n_scene_tokens, d)
        weight("pos.loc", 1, d)
        for kind in ("csi", "scene", "loc", "physc", "sep"):
            weight(f"mod.{kind}", 1, d)
        weight("tok.physc", 1, d)
        weight("tok.sep", 1, d)
        for i in range(config.encoder_layers):
            self._init_block(f"enc{i}", d, config.mlp_ratio, weight, zeros, ones)
        ones("enc.norm.g", d)
        zeros("enc.norm.b", d)
        for kind in ("csi", "scene", "loc"):
            weight(f"mask.{kind}", 1, d)
        weight("dpos.csi", config.n_csi_tokens, d)
        weight("dpos.scene", config.n_scene_tokens, d)
        weight("dpos.loc", 1, d)
        weight("dpos.physc", 1, d)
        weight("dpos.sep", 2, d)
        for kind in ("csi", "scene", "loc", "physc", "sep"):
            weight(f"dmod.{kind}", 1, d)
        for i in range(config.decoder_layers):
            self._init_block(f"dec{i}", d, config.mlp_ratio, weight, zeros, ones)
        ones("dec.norm.g", d)
        zeros("dec.norm.b", d)
        weight("head.csi.w", d, config.csi_patch_values)
        zeros("head.csi.b", config.csi_patch_values)
        weight("head.loc.w", d, 2)
        zeros("head.loc.b", 2)
        weight("head.occ.w", d, 1)
        zeros("head.occ.b", 1)
        cx, cy = config.coarse
        if config.conv_physc_head:
            weight("head.physc.w", d, PHYSC_CHANNELS * cx * cy)
            zeros("head.physc.b", PHYSC_CHANNELS * cx * cy)
            weight("head.physc.conv.w", 1, PHYSC_CHANNELS, 3, 3)
            zeros("head.physc.conv.b", 1)
        else:
            weight("head.physc.w", d, cx * cy)
            zeros("head.physc.b", cx * cy)

    @staticmethod
    def _init_block(prefix, d, mlp_ratio, weight, zeros, ones):
        ones(f"{prefix}.ln1.g", d)
        zeros(f"{prefix}.ln1.b", d)
        weight(f"{prefix}.attn.wqkv", d, 3 * d)
        zeros(f"{prefix}.attn.bqkv", 3 * d)
        weight(f"{prefix}.attn.wo", d, d)
        zeros(f"{prefix}.attn.bo", d)
        ones(f"{prefix}.ln2.g", d)
        zeros(f"{prefix}.ln2.b", d)
        weight(f"{prefix}.mlp.w1", d, mlp_ratio * d)
        zeros(f"{prefix}.mlp.b1", mlp_ratio * d)
        weight(f"{prefix}.mlp.w2", mlp_ratio * d, d)
        zeros(f"{prefix}.mlp.b2", d)

    # -- persistence -----------------------------------------------------

    def count_params(self):
        return sum(int(np.prod(p.shape)) for p in self.params.values())

    def state_arrays(self):
        return {name: p.data for name, p in self.params.items()}

    def load_state_arrays(self, arrays):
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if tuple(arrays[name].shape) != tuple(p.shape):
                raise ValueError(
                    f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}"
                )
            p.data = arrays[name].astype(np.float32)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # -- forward ----------------------------------------------------------

    def tokenize(self, features: SampleFeatures):
        p = self.params
        csi = T.add(
            T.matmul(Tensor(features.csi_patches), p["embed.csi.w"]), p["embed.csi.b"]
        )
        csi = T.add(T.add(csi, p["pos.csi"]), p["mod.csi"])
        scene = T.add(
            T.matmul(Tensor(features.scene_patches), p["embed.scene.w"]),
            p["embed.scene.b"],
        )
        scene = T.add(T.add(scene, p["pos.scene"]), p["mod.scene"])
        loc = T.add(T.matmul(Tensor(features.loc), p["embed.loc.w"]), p["embed.loc.b"])
        loc = T.add(T.add(loc, p["pos.loc"]), p["mod.loc"])
        physc = T.add(p["tok.physc"], p["mod.physc"])
        sep = T.add(p["tok.sep"], p["mod.sep"])
        emb = T.concat([physc, csi, sep, scene, sep, loc], axis=0)
        cfg = self.config
        return TokenBatch(
            embeddings=emb,
            kinds=cfg.token_kinds(),
            positions=np.arange(cfg.seq_len),
        )

    def _block(self, x, prefix, collect):
        p = self.params
        cfg = self.config
        d = cfg.embed_dim
        heads = cfg.heads
        dh = d // heads
        t = x.shape[0]
        h = T.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
        qkv = T.add(T.matmul(h, p[f"{prefix}.attn.wqkv"]), p[f"{prefix}.attn.bqkv"])
        qkv = T.reshape(qkv, (t, 3, heads, dh))
        q = T.transpose(qkv[:, 0], (1, 0, 2))  # (heads, T, dh)
        k = T.transpose(qkv[:, 1], (1, 0, 2))
        v = T.transpose(qkv[:, 2], (1, 0, 2))
        scores = T.mul(
            T.matmul(q, T.transpose(k, (0, 2, 1))),
            Tensor(np.float32(1.0 / np.sqrt(dh))),
        )
        attn = T.softmax(scores, axis=-1)
        if collect is not None:
            collect.append(attn.data.copy())
        ctx = T.transpose(T.matmul(attn, v), (1, 0, 2))  # (T, heads, dh)
        ctx = T.reshape(ctx, (t, d))
        x = T.add(x, T.add(T.matmul(ctx, p[f"{prefix}.attn.wo"]), p[f"{prefix}.attn.bo"]))
        h = T.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
        h = T.gelu(T.add(T.matmul(h, p[f"{prefix}.mlp.w1"]), p[f"{prefix}.mlp.b1"]))
        h = T.add(T.matmul(h, p[f"{prefix}.mlp.w2"]), p[f"{prefix}.mlp.b2"])
        return T.add(x, h)

    def encode(self, batch: TokenBatch, visible_idx, collect_attention=False):
        """Run the encoder over visible tokens only (masked tokens dropped).

        Returns (latents, physc_latent, attention) where attention is a list
        of per-layer (heads, T, T) arrays when requested.
        """
        visible_idx = np.asarray(visible_idx, dtype=np.intp)
        if PHYSC_POS not in visible_idx:
            raise ValueError("the aggregator token must stay visible")
        x = T.gather(batch.embeddings, visible_idx, axis=0)
        attention = [] if collect_attention else None
        for i in range(self.config.encoder_layers):
            x = self._block(x, f"enc{i}", attention)
        x = T.layer_norm(x, self.params["enc.norm.g"], self.params["enc.norm.b"])
        physc_row = int(np.flatnonzero(visible_idx == PHYSC_POS)[0])
        physc = x[physc_row : physc_row + 1, :]
        return x, physc, attention

    def decode(self, latents, batch: TokenBatch, visible_idx):
        """Insert mask tokens at hidden positions, run the decoder, apply heads."""
        cfg = self.config
        p = self.params
        visible_idx = np.asarray(visible_idx, dtype=np.intp)
        seq = cfg.seq_len
        visible = np.zeros(seq, dtype=bool)
        visible[visible_idx] = True
        kinds = batch.kinds
        # decoder input: encoder latent if visible, modality mask token if not
        table = T.concat([latents, p["mask.csi"], p["mask.scene"], p["mask.loc"]], axis=0)
        n_vis = len(visible_idx)
        mask_slot = {CSI: n_vis, SCENE: n_vis + 1, LOC: n_vis + 2}
        index = np.empty(seq, dtype=np.intp)
        pos_in_visible = {int(pos): i for i, pos in enumerate(visible_idx)}
        for t in range(seq):
            index[t] = pos_in_visible[t] if visible[t] else mask_slot[int(kinds[t])]
        x = T.gather(table, index, axis=0)
        dpos = T.concat(
            [
                p["dpos.physc"],
                p["dpos.csi"],
                p["dpos.sep"][0:1, :],
                p["dpos.scene"],
                p["dpos.sep"][1:2, :],
                p["dpos.loc"],
            ],
            axis=0,
        )
        dmod_table = T.concat(
            [p["dmod.physc"], p["dmod.csi"], p["dmod.sep"], p["dmod.scene"], p["dmod.loc"]],
            axis=0,
        )
        dmod = T.gather(dmod_table, kinds.astype(np.intp), axis=0)
        x = T.add(x, T.add(dpos, dmod))
        for i in range(cfg.decoder_layers):
            x = self._block(x, f"dec{i}", None)
        x = T.layer_norm(x, p["dec.norm.g"], p["dec.norm.b"])

        out = DecodedOutputs()
        csi_masked = cfg.csi_positions[~visible[cfg.csi_positions]]
        if len(csi_masked):
            rows = T.gather(x, csi_masked, axis=0)
            out.csi = T.add(T.matmul(rows, p["head.csi.w"]), p["head.csi.b"])
        loc_row = x[cfg.loc_position : cfg.loc_position + 1, :]
        out.loc = T.add(T.matmul(loc_row, p["head.loc.w"]), p["head.loc.b"])
        scene_masked = cfg.scene_positions[~visible[cfg.scene_positions]]
        if len(scene_masked):
            rows = T.gather(x, scene_masked, axis=0)
            out.occ_logits = T.add(T.matmul(rows, p["head.occ.w"]), p["head.occ.b"])
        physc_row = x[PHYSC_POS : PHYSC_POS + 1, :]
        feat = T.add(T.matmul(physc_row, p["head.physc.w"]), p["head.physc.b"])
        cx, cy = cfg.coarse
        if cfg.conv_physc_head:
            feat = T.reshape(feat, (PHYSC_CHANNELS, cx, cy))
            feat = T.conv3x3(feat, p["head.physc.conv.w"], p["head.physc.conv.b"])
        out.physc = T.reshape(T.softplus(feat), (cx, cy))
        return out

    def forward_full(self, features: SampleFeatures, collect_attention=False):
        """Full-visibility encode; returns (latents, physc, attention)."""
        batch = self.tokenize(features)
        return self.encode(
            batch, np.arange(self.config.seq_len), collect_attention=collect_attention
        )

    def attention_maps(self, features: SampleFeatures, layer=None):
        """Aggregator-token attention over scene tokens, head-averaged and
        max-normalized, as (P, P) grids; one per layer or a single layer."""
        cfg = self.config
        _, _, attention = self.forward_full(features, collect_attention=True)
        grids = []
        for att in attention:
            row = att[:, PHYSC_POS, :].mean(axis=0)  # heads averaged
            scene_row = row[cfg.scene_positions]
            peak = scene_row.max()
            if peak > 0:
                scene_row = scene_row / peak
            side = cfg.scene_patches_per_side
            grids.append(scene_row.reshape(side, side))
        if layer is None:
            return grids
        if not 0 <= layer < len(grids):
            raise ValueError(f"layer {layer} out of range [0, {len(grids)})")
        return grids[layer]
