"""Self-supervised pretraining: masking curriculum, loss stack, trainer.

Four reconstruction objectives: masked-CSI magnitude/phase RMSE, masked
location RMSE, masked occupancy BCE, and the coarse spatial-spectrum match
(linear plus log RMSE) decoded from the aggregator token. Scene masking is
always corridor-constrained around the TX-RX segment; CSI masking is
uniform. Stage 2 widens the ratios and masks the location token half the
time in its moderate variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .model import (
    Model,
    ModelConfig,
    SampleFeatures,
    normalize_location,
    patchify,
    sample_features,
)
from .scene import build_occupancy, corridor_mask
from .spectra import coarsen_spectrum, spatial_spectrum
from .tensor import Tensor

MASK_VARIANTS = ("csi-large", "scene-large", "csi-mod", "scene-mod")
STAGE1_RATIOS = {
    "csi-large": 0.5,
    "scene-large": 0.1,
    "csi-mod": 0.3,
    "scene-mod": 0.05,
}
STAGE2_RANGES = {
    "csi-large": (0.7, 0.9),
    "scene-large": (0.2, 0.3),
    "csi-mod": (0.5, 0.7),
    "scene-mod": (0.1, 0.2),
}
LOC_MASK_PROB = 0.5  # stage-2 moderate variants only
DEFAULT_STAGE1_FRACTION = 0.2  # of total epochs before interleaving starts


@dataclass
class LossWeights:
    lam_csi: float = 1.0
    lam_loc: float = 1.0
    lam_occ: float = 1.0
    lam_spec: float = 1.0
    alpha_spec: float = 0.5
    eps_spec: float = 1e-6

    def __post_init__(self):
        if max(self.lam_csi, self.lam_loc, self.lam_occ, self.lam_spec) <= 0.0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class MaskPlan:
    variant: str
    stage: int
    csi_ratio: float
    scene_ratio: float
    csi_masked: np.ndarray  # CSI patch ids
    scene_masked: np.ndarray  # scene patch ids
    loc_masked: bool
    visible_idx: np.ndarray  # absolute token positions fed to the encoder


def stage_for_epoch(epoch, total_epochs, rng, stage1_fraction=DEFAULT_STAGE1_FRACTION):
    """Interleave schedule: stage 1 only early on, then stage 2 sampled with
    a linearly growing probability p_hard = epoch / total_epochs."""
    if epoch < stage1_fraction * total_epochs:
        return 1
    p_hard = epoch / max(total_epochs, 1)
    return 2 if rng.random() < p_hard else 1


def make_mask_plan(stage, rng, config: ModelConfig, occupancy, tx_xy, rx_xy,
                   variant=None):
    """Sample one masking plan. Exactly round(ratio * tokens) indices are
    masked for the variant's modality; scene masking routes through the
    corridor selector so every masked patch is geometry-relevant."""
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if variant is None:
        variant = MASK_VARIANTS[rng.integers(0, len(MASK_VARIANTS))]
    if stage == 1:
        ratio = STAGE1_RATIOS[variant]
    else:
        lo, hi = STAGE2_RANGES[variant]
        ratio = float(rng.uniform(lo, hi))
    csi_masked = np.empty(0, dtype=np.intp)
    scene_masked = np.empty(0, dtype=np.intp)
    csi_ratio = scene_ratio = 0.0
    if variant.startswith("csi"):
        csi_ratio = ratio
        count = int(round(ratio * config.n_csi_tokens))
        csi_masked = np.sort(rng.choice(config.n_csi_tokens, size=count, replace=False))
    else:
        scene_ratio = ratio
        scene_masked = corridor_mask(occupancy, tx_xy, rx_xy, ratio, rng).masked_indices
    loc_masked = bool(
        stage == 2 and variant.endswith("mod") and rng.random() < LOC_MASK_PROB
    )
    hidden = np.concatenate(
        [
            config.csi_positions[csi_masked],
            config.scene_positions[scene_masked],
            [config.loc_position] if loc_masked else [],
        ]
    ).astype(np.intp)
    visible = np.setdiff1d(np.arange(config.seq_len), hidden)
    return MaskPlan(
        variant=variant,
        stage=stage,
        csi_ratio=csi_ratio,
        scene_ratio=scene_ratio,
        csi_masked=csi_masked,
        scene_masked=scene_masked,
        loc_masked=loc_masked,
        visible_idx=visible,
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_csi(pred_reim, truth_patches, config: ModelConfig, wrap=True):
    """RMSE over masked CSI entries of squared magnitude error plus squared
    phase error. `truth_patches` is (n_masked, patch^2) complex. Phase
    differences wrap to (-pi, pi] by default; wrap=False keeps the raw
    difference for ablation."""
    if pred_reim is None or len(truth_patches) == 0:
        raise ValueError("CSI loss requires at least one masked patch")
    n = config.csi_patch**2
    re = pred_reim[:, :n]
    im = pred_reim[:, n:]
    mag_pred = T.sqrt(T.add(T.mul(re, re), T.mul(im, im)))
    phase_pred = T.atan2(im, re)
    mag_true = Tensor(np.abs(truth_patches), dtype=pred_reim.dtype)
    phase_true = Tensor(np.angle(truth_patches), dtype=pred_reim.dtype)
    dmag = T.sub(mag_pred, mag_true)
    dphase = T.sub(phase_pred, phase_true)
    if wrap:
        dphase = T.wrap_phase(dphase)
    return T.sqrt(T.mean(T.add(T.mul(dmag, dmag), T.mul(dphase, dphase))))


def loss_loc(pred_xy, true_xy):
    """Euclidean distance in normalized coordinates."""
    diff = T.sub(pred_xy, Tensor(np.asarray(true_xy).reshape(1, 2), dtype=pred_xy.dtype))
    return T.sqrt(T.sum_(T.mul(diff, diff)))


def loss_occ(logits, truth_bits):
    """Mean BCE over masked patches, stable in the logits."""
    y = Tensor(np.asarray(truth_bits, dtype=np.float64).reshape(-1, 1), dtype=logits.dtype)
    return T.mean(T.sub(T.softplus(logits), T.mul(y, logits)))


def loss_spectrum(pred_coarse, truth_coarse, alpha, eps):
    """alpha * linear RMSE + (1 - alpha) * log-domain RMSE."""
    if eps <= 0.0:
        raise ValueError("spectrum eps must be positive")
    truth = Tensor(np.asarray(truth_coarse), dtype=pred_coarse.dtype)
    diff = T.sub(pred_coarse, truth)
    linear = T.sqrt(T.mean(T.mul(diff, diff)))
    log_diff = T.sub(
        T.log(T.add(pred_coarse, Tensor(np.float64(eps), dtype=pred_coarse.dtype))),
        T.log(T.add(truth, Tensor(np.float64(eps), dtype=pred_coarse.dtype))),
    )
    log_rmse = T.sqrt(T.mean(T.mul(log_diff, log_diff)))
    return T.add(
        T.mul(linear, Tensor(np.float64(alpha), dtype=pred_coarse.dtype)),
        T.mul(log_rmse, Tensor(np.float64(1.0 - alpha), dtype=pred_coarse.dtype)),
    )


def total_loss(components, weights: LossWeights):
    """Weighted sum over the active components."""
    lams = {
        "csi": weights.lam_csi,
        "loc": weights.lam_loc,
        "occ": weights.lam_occ,
        "spec": weights.lam_spec,
    }
    total = None
    for name, value in components.items():
        if value is None:
            continue
        term = T.mul(value, Tensor(np.float64(lams[name]), dtype=value.dtype))
        total = term if total is None else T.add(total, term)
    if total is None:
        raise ValueError("no active loss components")
    return total


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


@dataclass
class SampleTargets:
    csi_patches: np.ndarray  # (n_csi_tokens, patch^2) complex, normalized
    loc: np.ndarray  # (2,) normalized
    occupancy: np.ndarray  # (P^2,) bits
    coarse_spectrum: np.ndarray  # (cx, cy)


def build_targets(sample, scene, config: ModelConfig, csi_rms, half_extent,
                  occupancy=None, antenna=0):
    """Ground-truth quantities for one sample; spectrum from the clean CSI.

    The distillation target is the pooled spectrum divided by the antenna
    count, so a typical RMS-normalized sample pools to O(1) values while
    relative power across samples (the distance cue) is preserved.
    """
    row = sample.H[antenna]
    grid = row.reshape(config.csi_nx, config.csi_ny) / csi_rms
    csi_patches = patchify(grid.real, config.csi_patch) + 1j * patchify(
        grid.imag, config.csi_patch
    )
    if occupancy is None:
        occupancy = build_occupancy(scene, config.scene_patch_cells)
    spectrum = spatial_spectrum(row.conj() / csi_rms, config.csi_nx, config.csi_ny)
    n_t = config.csi_nx * config.csi_ny
    coarse = coarsen_spectrum(
        spectrum, config.csi_nx, config.csi_ny, *config.coarse
    ) / n_t
    return SampleTargets(
        csi_patches=csi_patches,
        loc=normalize_location(sample.rx_position, scene.bs_position, half_extent),
        occupancy=occupancy.grid.reshape(-1),
        coarse_spectrum=coarse,
    )


def sample_losses(model: Model, features: SampleFeatures, targets: SampleTargets,
                  plan: MaskPlan, weights: LossWeights):
    """Forward pass under a mask plan; returns (total, component dict)."""
    batch = model.tokenize(features)
    latents, _, _ = model.encode(batch, plan.visible_idx)
    decoded = model.decode(latents, batch, plan.visible_idx)
    components = {"csi": None, "loc": None, "occ": None, "spec": None}
    if len(plan.csi_masked):
        components["csi"] = loss_csi(
            decoded.csi, targets.csi_patches[plan.csi_masked], model.config
        )
    if plan.loc_masked:
        components["loc"] = loss_loc(decoded.loc, targets.loc)
    if len(plan.scene_masked):
        components["occ"] = loss_occ(
            decoded.occ_logits, targets.occupancy[plan.scene_masked]
        )
    components["spec"] = loss_spectrum(
        decoded.physc, targets.coarse_spectrum, weights.alpha_spec, weights.eps_spec
    )
    return total_loss(components, weights), components


# ---------------------------------------------------------------------------
# optimizer and trainer
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment optimizer with global gradient-norm clipping."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_norm=1.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=np.float32) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape, dtype=np.float32) for k, p in params.items()}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if norm > self.clip_norm:
                scale = np.float32(self.clip_norm / norm)
                for g in grads.values():
                    g *= scale
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            self.params[key].data -= np.float32(lr) * update

    def state_arrays(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays):
        for key in self.m:
            self.m[key] = arrays[f"adam.m.{key}"].astype(np.float32)
            self.v[key] = arrays[f"adam.v.{key}"].astype(np.float32)
        self.t = int(arrays["adam.t"][0])


def cosine_lr(epoch, total_epochs, base_lr):
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(total_epochs, 1)))


@dataclass
class TrainState:
    epoch: int  # next epoch to run
    step: int
    log_rows: list = field(default_factory=list)


class Trainer:
    """Single-writer training loop with deterministic per-sample RNG streams
    keyed (seed, epoch, sample_id) so resume reproduces trajectories bit for
    bit."""

    def __init__(self, dataset, model: Model, weights: LossWeights = None,
                 lr=1e-3, batch_size=32, seed=0,
                 stage1_fraction=DEFAULT_STAGE1_FRACTION, antenna=0):
        self.dataset = dataset
        self.model = model
        self.weights = weights or LossWeights()
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.stage1_fraction = stage1_fraction
        self.antenna = antenna
        self.optimizer = Adam(model.params, lr=lr)
        self.occupancy = {
            sid: build_occupancy(scene, model.config.scene_patch_cells)
            for sid, scene in dataset.scenes.items()
        }
        m = dataset.manifest
        self._features = {}
        self._targets = {}
        for idx, sample in enumerate(dataset.samples):
            scene = dataset.scenes[sample.scene_id]
            self._features[idx] = sample_features(
                sample.H[antenna], scene.height, sample.rx_position, model.config,
                m.csi_rms, m.height_max, m.half_extent, scene.bs_position,
            )
            self._targets[idx] = build_targets(
                sample, scene, model.config, m.csi_rms, m.half_extent,
                occupancy=self.occupancy[sample.scene_id], antenna=antenna,
            )

    def plan_for(self, epoch, total_epochs, sample_idx):
        sample = self.dataset.samples[sample_idx]
        scene = self.dataset.scenes[sample.scene_id]
        rng = np.random.default_rng(
            np.random.SeedSequence((self.seed, epoch, sample_idx))
        )
        stage = stage_for_epoch(epoch, total_epochs, rng, self.stage1_fraction)
        tx_xy = scene.bs_position[:2]
        rx_xy = tx_xy + sample.rx_position
        return make_mask_plan(
            stage, rng, self.model.config, self.occupancy[sample.scene_id],
            tx_xy, rx_xy,
        )

    def run(self, epochs, train_indices=None, state: TrainState = None,
            out_dir=None, checkpoint_every=10):
        if len(self.dataset) == 0:
            raise ValueError("cannot train on an empty dataset")
        indices = list(range(len(self.dataset))) if train_indices is None else list(train_indices)
        state = state or TrainState(epoch=0, step=0)
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        for epoch in range(state.epoch, epochs):
            lr_e = cosine_lr(epoch, epochs, self.lr)
            order_rng = np.random.default_rng(
                np.random.SeedSequence((self.seed, epoch, 0x0BDE))
            )
            order = order_rng.permutation(len(indices))
            for start in range(0, len(order), self.batch_size):
                chunk = [indices[i] for i in order[start : start + self.batch_size]]
                self.model.zero_grad()
                sums = {"csi": 0.0, "loc": 0.0, "occ": 0.0, "spec": 0.0}
                counts = dict.fromkeys(sums, 0)
                batch_total = 0.0
                for idx in chunk:
                    plan = self.plan_for(epoch, epochs, idx)
                    total, comps = sample_losses(
                        self.model, self._features[idx], self._targets[idx],
                        plan, self.weights,
                    )
                    value = total.item()
                    if not np.isfinite(value):
                        self._dump_log(state, out_dir)
                        raise FloatingPointError(
                            f"non-finite loss at epoch {epoch}; last-good checkpoint retained"
                        )
                    batch_total += value
                    for name, comp in comps.items():
                        if comp is not None:
                            sums[name] += comp.item()
                            counts[name] += 1
                    T.mul(total, Tensor(np.float32(1.0 / len(chunk)))).backward()
                self.optimizer.step(lr=lr_e)
                state.step += 1
                state.log_rows.append(
                    {
                        "epoch": epoch,
                        "step": state.step,
                        "csi": sums["csi"] / max(counts["csi"], 1),
                        "loc": sums["loc"] / max(counts["loc"], 1),
                        "occ": sums["occ"] / max(counts["occ"], 1),
                        "spec": sums["spec"] / max(counts["spec"], 1),
                        "total": batch_total / len(chunk),
                        "lr": lr_e,
                    }
                )
            state.epoch = epoch + 1
            if out_dir is not None and (
                state.epoch % checkpoint_every == 0 or state.epoch == epochs
            ):
                self.save_checkpoint(out_dir / f"checkpoint_ep{state.epoch:04d}.wfmc", state)
        self._dump_log(state, out_dir)
        return state

    def _dump_log(self, state, out_dir):
        if out_dir is None or not state.log_rows:
            return
        from .report import repro_header, write_csv

        header = repro_header(
            self.dataset.manifest.config_hash(), self.seed,
            lr=self.lr, batch_size=self.batch_size,
        )
        write_csv(
            out_dir / "training_log.csv",
            header,
            ["epoch", "step", "L_csi", "L_loc", "L_occ", "L_spec", "total", "lr"],
            [
                [r["epoch"], r["step"], f"{r['csi']:.6e}", f"{r['loc']:.6e}",
                 f"{r['occ']:.6e}", f"{r['spec']:.6e}", f"{r['total']:.6e}",
                 f"{r['lr']:.6e}"]
                for r in state.log_rows
            ],
        )

    def save_checkpoint(self, path, state: TrainState):
        arrays = dict(self.model.state_arrays())
        arrays.update(self.optimizer.state_arrays())
        arrays["meta.epoch"] = np.array([state.epoch], dtype=np.float32)
        arrays["meta.step"] = np.array([state.step], dtype=np.float32)
        save_arrays(path, arrays)
        sidecar = Path(path).with_suffix(".txt")
        sidecar.write_text(
            f"config_hash = {self.dataset.manifest.config_hash()}\n"
            f"seed = {self.seed}\nepoch = {state.epoch}\nstep = {state.step}\n"
        )

    def load_checkpoint(self, path):
        arrays = load_arrays(path)
        self.model.load_state_arrays(
            {k: v for k, v in arrays.items() if not k.startswith(("adam.", "meta."))}
        )
        self.optimizer.load_state_arrays(arrays)
        return TrainState(
            epoch=int(arrays["meta.epoch"][0]),
            step=int(arrays["meta.step"][0]),
        )


def load_model_from_checkpoint(path, config: ModelConfig):
    model = Model(config, seed=0)
    arrays = load_arrays(path)
    model.load_state_arrays(
        {k: v for k, v in arrays.items() if not k.startswith(("adam.", "meta."))}
    )
    return model


def masked_csi_eval(model: Model, dataset, indices, ratio=0.3, seed=0, antenna=0):
    """Held-out masked-CSI RMSE for the model vs a constant-mean predictor.

    The baseline predicts the train-set mean (re, im) entry everywhere; both
    are scored with the same magnitude/phase RMSE, the baseline through an
    independent numpy evaluation.
    """
    m = dataset.manifest
    cfg = model.config
    occ = {}
    # constant predictor from the full dataset's normalized entries
    all_entries = np.concatenate(
        [s.H[antenna].reshape(-1) / m.csi_rms for i, s in enumerate(dataset.samples)]
    )
    const = complex(all_entries.real.mean(), all_entries.imag.mean())
    model_scores, baseline_scores = [], []
    for idx in indices:
        sample = dataset.samples[idx]
        scene = dataset.scenes[sample.scene_id]
        if sample.scene_id not in occ:
            occ[sample.scene_id] = build_occupancy(scene, cfg.scene_patch_cells)
        feats = sample_features(
            sample.H[antenna], scene.height, sample.rx_position, cfg,
            m.csi_rms, m.height_max, m.half_extent, scene.bs_position,
        )
        targets = build_targets(
            sample, scene, cfg, m.csi_rms, m.half_extent,
            occupancy=occ[sample.scene_id], antenna=antenna,
        )
        rng = np.random.default_rng(np.random.SeedSequence((seed, idx, 0xC51)))
        count = int(round(ratio * cfg.n_csi_tokens))
        masked = np.sort(rng.choice(cfg.n_csi_tokens, size=count, replace=False))
        hidden = cfg.csi_positions[masked]
        visible = np.setdiff1d(np.arange(cfg.seq_len), hidden)
        batch = model.tokenize(feats)
        latents, _, _ = model.encode(batch, visible)
        plan = MaskPlan(
            variant="csi-mod", stage=1, csi_ratio=ratio, scene_ratio=0.0,
            csi_masked=masked, scene_masked=np.empty(0, dtype=np.intp),
            loc_masked=False, visible_idx=visible,
        )
        decoded = model.decode(latents, batch, plan.visible_idx)
        model_scores.append(
            loss_csi(decoded.csi, targets.csi_patches[masked], cfg).item()
        )
        truth = targets.csi_patches[masked].reshape(-1)
        dmag = np.abs(const) - np.abs(truth)
        dph = np.angle(const) - np.angle(truth)
        dph = dph - 2.0 * np.pi * np.ceil((dph - np.pi) / (2.0 * np.pi))
        baseline_scores.append(float(np.sqrt(np.mean(dmag**2 + dph**2))))
    return float(np.mean(model_scores)), float(np.mean(baseline_scores))
