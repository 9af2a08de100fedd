"""Dataset generation, binary shards, and deterministic splits.

Shard layout (little-endian), one shard per scene:
  magic "WFMD", version u16, N_t u16,
  scene block {scene_id u32, N u16, height f32 x N^2},
  sample count u32,
  sample records {scene_id u32, rx_x f32, rx_y f32, N_r u8,
                  H interleaved re/im f32 x (N_t * N_r)},
  CRC32 u32 over all preceding bytes.

Users are dropped uniformly over free cells; drops whose traced path list
comes back empty (deep NLOS under LOS + first-order reflections) are
redrawn a bounded number of times so stored channels are non-degenerate.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelSample, channel_for_user
from .profiles import Profile, get_profile
from .scene import SceneMap, bs_position_for, generate_scene, sample_user_positions

SHARD_MAGIC = b"WFMD"
SHARD_VERSION = 1
MANIFEST_NAME = "manifest.txt"
_MAX_USER_REDRAWS = 64


@dataclass
class DatasetManifest:
    profile: str
    scene_count: int
    samples_per_scene: int
    seed: int
    density: float = 0.25
    n_rx: int = 1
    format_version: int = SHARD_VERSION
    # normalization constants, filled during generation
    csi_rms: float = 0.0
    height_max: float = 60.0
    half_extent: float = 0.0

    def config_hash(self):
        """Hash of every generation-relevant field."""
        key = "|".join(
            str(v)
            for v in (
                self.format_version,
                self.profile,
                self.scene_count,
                self.samples_per_scene,
                self.seed,
                self.density,
                self.n_rx,
            )
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def save(self, directory):
        path = Path(directory) / MANIFEST_NAME
        lines = [
            f"format_version = {self.format_version}",
            f"profile = {self.profile}",
            f"scene_count = {self.scene_count}",
            f"samples_per_scene = {self.samples_per_scene}",
            f"seed = {self.seed}",
            f"density = {self.density}",
            f"n_rx = {self.n_rx}",
            f"csi_rms = {self.csi_rms!r}",
            f"height_max = {self.height_max}",
            f"half_extent = {self.half_extent}",
            f"config_hash = {self.config_hash()}",
        ]
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory):
        path = Path(directory) / MANIFEST_NAME
        values = {}
        for line in path.read_text().splitlines():
            key, _, value = line.partition(" = ")
            values[key.strip()] = value.strip()
        manifest = cls(
            profile=values["profile"],
            scene_count=int(values["scene_count"]),
            samples_per_scene=int(values["samples_per_scene"]),
            seed=int(values["seed"]),
            density=float(values["density"]),
            n_rx=int(values["n_rx"]),
            format_version=int(values["format_version"]),
            csi_rms=float(values["csi_rms"]),
            height_max=float(values["height_max"]),
            half_extent=float(values["half_extent"]),
        )
        if values.get("config_hash") not in (None, manifest.config_hash()):
            raise ValueError(f"{path}: config hash mismatch; manifest edited?")
        return manifest


@dataclass
class Dataset:
    manifest: DatasetManifest
    profile: Profile
    scenes: dict  # scene_id -> SceneMap
    samples: list  # ChannelSample, ordered (scene-major, user-minor)

    def __len__(self):
        return len(self.samples)

    def scene_of(self, sample):
        return self.scenes[sample.scene_id]

    def rx_xyz(self, sample):
        bs = self.scenes[sample.scene_id].bs_position
        return np.array(
            [bs[0] + sample.rx_position[0], bs[1] + sample.rx_position[1],
             self.profile.user_height_m]
        )


def _write_shard(path, scene: SceneMap, samples, n_t):
    buf = bytearray()
    buf += SHARD_MAGIC
    buf += struct.pack("<HH", SHARD_VERSION, n_t)
    height = np.ascontiguousarray(scene.height, dtype="<f4")
    buf += struct.pack("<IH", scene.scene_id, scene.grid_n)
    buf += height.tobytes()
    buf += struct.pack("<I", len(samples))
    for s in samples:
        buf += struct.pack("<Iff", s.scene_id, float(s.rx_position[0]), float(s.rx_position[1]))
        n_r = s.H.shape[0]
        buf += struct.pack("<B", n_r)
        inter = np.empty(2 * n_r * n_t, dtype="<f4")
        flat = s.H.reshape(-1)
        inter[0::2] = flat.real
        inter[1::2] = flat.imag
        buf += inter.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def _read_shard(path, profile: Profile):
    blob = Path(path).read_bytes()
    if blob[:4] != SHARD_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if stored_crc != (zlib.crc32(blob[:-4]) & 0xFFFFFFFF):
        raise ValueError(f"{path}: CRC32 mismatch, shard corrupt")
    version, n_t = struct.unpack_from("<HH", blob, 4)
    if version != SHARD_VERSION:
        raise ValueError(f"{path}: unsupported shard version {version}")
    offset = 8
    scene_id, grid_n = struct.unpack_from("<IH", blob, offset)
    offset += 6
    height = np.frombuffer(blob, dtype="<f4", count=grid_n * grid_n, offset=offset)
    offset += 4 * grid_n * grid_n
    scene = SceneMap(
        height=height.reshape(grid_n, grid_n).astype(np.float64),
        cell_m=profile.cell_m,
        bs_position=bs_position_for(profile),
        scene_id=scene_id,
        buildings=[],
    )
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    samples = []
    for _ in range(count):
        sid, rx_x, rx_y = struct.unpack_from("<Iff", blob, offset)
        offset += 12
        (n_r,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        inter = np.frombuffer(blob, dtype="<f4", count=2 * n_r * n_t, offset=offset)
        offset += 8 * n_r * n_t
        h = (inter[0::2] + 1j * inter[1::2]).astype(np.complex128).reshape(n_r, n_t)
        samples.append(
            ChannelSample(H=h, rx_position=np.array([rx_x, rx_y], dtype=np.float64),
                          scene_id=sid, paths=[])
        )
    return scene, samples


def generate_dataset(manifest: DatasetManifest, out_dir):
    """Build scenes and channels from the manifest; returns the Dataset.

    Deterministic: per-user RNG streams are keyed (seed, scene_id, user_idx)
    so scene-level parallel regeneration cannot perturb byte output.
    """
    profile = get_profile(manifest.profile, users_per_scene=manifest.samples_per_scene)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = {}
    all_samples = []
    sq_sum, count = 0.0, 0
    for scene_id in range(manifest.scene_count):
        scene = generate_scene(
            np.random.SeedSequence((manifest.seed, scene_id)), profile,
            manifest.density, scene_id=scene_id,
        )
        samples = []
        for user_idx in range(manifest.samples_per_scene):
            rng = np.random.default_rng(
                np.random.SeedSequence((manifest.seed, scene_id, user_idx))
            )
            sample = None
            for _ in range(_MAX_USER_REDRAWS):
                pos = sample_user_positions(scene, 1, rng, profile.user_height_m)[0]
                sample = channel_for_user(scene, profile, pos, n_rx=manifest.n_rx)
                if not sample.deep_nlos:
                    break
            # quantize to the shard's f32 precision so write -> read is exact
            sample.H = sample.H.astype(np.complex64).astype(np.complex128)
            sample.rx_position = sample.rx_position.astype(np.float32).astype(np.float64)
            samples.append(sample)
            sq_sum += float((np.abs(sample.H) ** 2).sum())
            count += sample.H.size
        scene.height = scene.height.astype(np.float32).astype(np.float64)
        shard_path = out_dir / f"scene_{scene_id:04d}.wfmd"
        try:
            _write_shard(shard_path, scene, samples, profile.num_antennas)
        except OSError:
            shard_path.unlink(missing_ok=True)
            raise
        scenes[scene_id] = scene
        all_samples.extend(samples)
    manifest.csi_rms = float(np.sqrt(sq_sum / max(count, 1)))
    manifest.height_max = 60.0
    manifest.half_extent = profile.half_extent_m
    manifest.save(out_dir)
    return Dataset(manifest=manifest, profile=profile, scenes=scenes, samples=all_samples)


def load_dataset(directory):
    directory = Path(directory)
    manifest = DatasetManifest.load(directory)
    profile = get_profile(manifest.profile, users_per_scene=manifest.samples_per_scene)
    scenes, samples = {}, []
    for shard in sorted(directory.glob("scene_*.wfmd")):
        scene, shard_samples = _read_shard(shard, profile)
        scenes[scene.scene_id] = scene
        samples.extend(shard_samples)
    return Dataset(manifest=manifest, profile=profile, scenes=scenes, samples=samples)


def split(dataset: Dataset, scheme, seed=0, train_frac=0.8, val_frac=0.0, scene_id=None):
    """Deterministic train/val/test index lists.

    cross-scene: scenes are shuffled and partitioned, so no scene straddles
    splits. within-scene: samples of one scene are shuffled and partitioned.
    """
    rng = np.random.default_rng(seed)
    if scheme == "cross-scene":
        scene_ids = sorted(dataset.scenes)
        if len(scene_ids) < 2:
            raise ValueError("cross-scene split needs at least two scenes")
        order = rng.permutation(len(scene_ids))
        n_train = int(round(train_frac * len(scene_ids)))
        n_val = int(round(val_frac * len(scene_ids)))
        train_scenes = {scene_ids[i] for i in order[:n_train]}
        val_scenes = {scene_ids[i] for i in order[n_train : n_train + n_val]}
        groups = ([], [], [])
        for idx, sample in enumerate(dataset.samples):
            if sample.scene_id in train_scenes:
                groups[0].append(idx)
            elif sample.scene_id in val_scenes:
                groups[1].append(idx)
            else:
                groups[2].append(idx)
        return groups
    if scheme == "within-scene":
        if scene_id is None:
            scene_id = sorted(dataset.scenes)[0]
        indices = [i for i, s in enumerate(dataset.samples) if s.scene_id == scene_id]
        order = rng.permutation(len(indices))
        n_train = int(round(train_frac * len(indices)))
        n_val = int(round(val_frac * len(indices)))
        train = [indices[i] for i in order[:n_train]]
        val = [indices[i] for i in order[n_train : n_train + n_val]]
        test = [indices[i] for i in order[n_train + n_val :]]
        return train, val, test
    raise ValueError(f"unknown split scheme {scheme!r}")
