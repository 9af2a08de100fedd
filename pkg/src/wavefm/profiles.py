"""Experiment profiles: full-scale geometry vs a laptop-sized twin.

The "paper" profile matches the published setup (200 m scene at 1 m
resolution, 32x32 transmit array, 128-dim model); "desk" shrinks every
axis so the whole pipeline runs in minutes on a CPU while preserving the
token counts' structure. Both cover the same 200 m x 200 m area.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

SPEED_OF_LIGHT = 299_792_458.0
BUILDING_HEIGHT_RANGE = (5.0, 60.0)


@dataclass(frozen=True)
class Profile:
    name: str
    # scene grid
    grid_n: int
    cell_m: float
    scene_patch_cells: int
    bs_height_m: float = 15.0
    user_height_m: float = 1.5
    # transmit array
    array_nx: int = 32
    array_ny: int = 32
    spacing_wl: float = 0.5
    carrier_hz: float = 28.5e9
    # building generator (cells per side)
    building_side_cells: tuple = (10, 30)
    # model
    csi_patch: int = 4
    embed_dim: int = 128
    encoder_layers: int = 8
    decoder_layers: int = 2
    attention_heads: int = 4
    mlp_ratio: int = 4
    coarse_spectrum: tuple = (8, 8)
    # dataset
    users_per_scene: int = 400
    # downstream tasks
    mu_num_users: int = 8
    su_rx_antennas: int = 4
    su_streams: int = 2
    su_tx_codebook: int = 1024
    su_rx_codebook: int = 4

    @property
    def extent_m(self):
        return self.grid_n * self.cell_m

    @property
    def half_extent_m(self):
        return self.extent_m / 2.0

    @property
    def num_antennas(self):
        return self.array_nx * self.array_ny

    @property
    def scene_patches_per_side(self):
        return self.grid_n // self.scene_patch_cells

    @property
    def num_scene_tokens(self):
        return self.scene_patches_per_side**2

    @property
    def num_csi_tokens(self):
        return (self.array_nx // self.csi_patch) * (self.array_ny // self.csi_patch)

    @property
    def wavelength_m(self):
        return SPEED_OF_LIGHT / self.carrier_hz


PAPER = Profile(
    name="paper",
    grid_n=200,
    cell_m=1.0,
    scene_patch_cells=10,
)

DESK = Profile(
    name="desk",
    grid_n=40,
    cell_m=5.0,
    scene_patch_cells=10,
    array_nx=8,
    array_ny=8,
    building_side_cells=(4, 12),
    csi_patch=2,
    embed_dim=32,
    encoder_layers=2,
    decoder_layers=1,
    attention_heads=2,
    coarse_spectrum=(4, 4),
    users_per_scene=32,
    su_tx_codebook=64,
)

_PROFILES = {"paper": PAPER, "desk": DESK}


def get_profile(name, **overrides):
    try:
        profile = _PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(_PROFILES)}")
    return replace(profile, **overrides) if overrides else profile
