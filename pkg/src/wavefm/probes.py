"""Downstream adaptation: partial-CSI encoding, probe heads, beam
classifiers, the single-user fine-tuning path, and task metrics.

Probes consume the frozen aggregator-token embedding; the raw-CSI baseline
flattens the same visible patches and learns a projection of comparable
dimensionality jointly with its head. The CNN baseline operates on the
zero-filled CSI grid with per-channel spatial normalization standing in
for batch statistics (training here is per-sample).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .channel import add_noise
from .model import Model, sample_features
from .pretrain import Adam
from .precoding import (
    mu_solution_for_beams,
    mu_upper_bound,
    select_beams_mu,
    su_exhaustive,
    su_link_rate,
    su_snr_param,
    sum_rate_ecdf,
)
from .tensor import Tensor


@dataclass(frozen=True)
class PartialCsiSpec:
    visible_fraction: float
    selection_seed: int = 0

    def visible_count(self, n_tokens):
        return max(1, int(round(self.visible_fraction * n_tokens)))


def partial_visible_patches(spec: PartialCsiSpec, n_tokens, sample_idx):
    """Deterministic visible-patch subset for one sample."""
    rng = np.random.default_rng(
        np.random.SeedSequence((spec.selection_seed, sample_idx, 0xB41))
    )
    count = spec.visible_count(n_tokens)
    return np.sort(rng.choice(n_tokens, size=count, replace=False))


def encode_partial(model: Model, feats, visible_patches, mask_location):
    """Aggregator embedding with only `visible_patches` CSI tokens fed;
    scene tokens stay fully visible."""
    cfg = model.config
    hidden = list(cfg.csi_positions[np.setdiff1d(np.arange(cfg.n_csi_tokens), visible_patches)])
    if mask_location:
        hidden.append(cfg.loc_position)
    visible = np.setdiff1d(np.arange(cfg.seq_len), np.asarray(hidden, dtype=np.intp))
    batch = model.tokenize(feats)
    _, physc, _ = model.encode(batch, visible)
    return physc.data.reshape(-1).copy()


def features_for_sample(model, dataset, idx, antenna=0, snr_db=None, noise_rng=None):
    sample = dataset.samples[idx]
    scene = dataset.scenes[sample.scene_id]
    m = dataset.manifest
    h_row = sample.H[antenna]
    if snr_db is not None:
        h_row = add_noise(sample.H, snr_db, noise_rng)[antenna]
    return sample_features(
        h_row, scene.height, sample.rx_position, model.config,
        m.csi_rms, m.height_max, m.half_extent, scene.bs_position,
    )


def embed_dataset(model, dataset, indices, spec: PartialCsiSpec,
                  mask_location, antenna=0, snr_db=None, noise_seed=0):
    """Frozen aggregator embeddings plus the matching raw visible-CSI
    vectors (the comparable-dimensionality baseline inputs)."""
    embeds, raws = [], []
    for idx in indices:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence((noise_seed, idx, 0x105E))
        )
        feats = features_for_sample(
            model, dataset, idx, antenna=antenna, snr_db=snr_db, noise_rng=noise_rng
        )
        visible = partial_visible_patches(spec, model.config.n_csi_tokens, idx)
        embeds.append(encode_partial(model, feats, visible, mask_location))
        raws.append(feats.csi_patches[visible].reshape(-1))
    return np.asarray(embeds, dtype=np.float32), np.asarray(raws, dtype=np.float32)


# ---------------------------------------------------------------------------
# probe heads
# ---------------------------------------------------------------------------


@dataclass
class ProbeHead:
    kind: str  # linear | mlp | cnn-baseline
    task: str  # location | classify
    params: dict
    in_dim: int
    out_dim: int
    raw_projection: bool = False
    degenerate_labels: bool = False

    def predict(self, features):
        x = Tensor(np.asarray(features, dtype=np.float32))
        return _probe_forward(self, x).data


def _init_affine(params, rng, name, d_in, d_out):
    params[f"{name}.w"] = Tensor(
        np.clip(rng.standard_normal((d_in, d_out)), -2, 2) * 0.02,
        requires_grad=True, dtype=np.float32,
    )
    params[f"{name}.b"] = Tensor(
        np.zeros(d_out), requires_grad=True, dtype=np.float32
    )


def _affine(params, name, x):
    return T.add(T.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def make_probe(kind, task, in_dim, out_dim, seed=0, raw_projection=False,
               embed_dim=None):
    """Probe factory. `raw_projection` prepends a learned projection to
    `embed_dim` so raw-CSI inputs are probed at comparable dimensionality."""
    rng = np.random.default_rng(seed)
    params = {}
    d = in_dim
    if raw_projection:
        if embed_dim is None:
            raise ValueError("raw_projection requires embed_dim")
        _init_affine(params, rng, "proj", in_dim, embed_dim)
        d = embed_dim
    if kind == "linear":
        _init_affine(params, rng, "out", d, out_dim)
    elif kind == "mlp":
        _init_affine(params, rng, "fc1", d, 64)
        _init_affine(params, rng, "fc2", 64, 64)
        _init_affine(params, rng, "out", 64, out_dim)
    elif kind == "cnn-baseline":
        channels = [2, 16, 32, 64]
        for i in range(3):
            params[f"conv{i}.w"] = Tensor(
                np.clip(rng.standard_normal((channels[i + 1], channels[i], 3, 3)), -2, 2) * 0.05,
                requires_grad=True, dtype=np.float32,
            )
            params[f"conv{i}.b"] = Tensor(
                np.zeros(channels[i + 1]), requires_grad=True, dtype=np.float32
            )
            params[f"norm{i}.g"] = Tensor(
                np.ones((channels[i + 1], 1, 1)), requires_grad=True, dtype=np.float32
            )
            params[f"norm{i}.b"] = Tensor(
                np.zeros((channels[i + 1], 1, 1)), requires_grad=True, dtype=np.float32
            )
        _init_affine(params, rng, "fc1", 64, 32)
        _init_affine(params, rng, "out", 32, out_dim)
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    return ProbeHead(
        kind=kind, task=task, params=params, in_dim=in_dim, out_dim=out_dim,
        raw_projection=raw_projection,
    )


def _spatial_norm(x, gain, bias, eps=1e-5):
    mu = T.mean(x, axis=(1, 2), keepdims=True)
    xc = T.sub(x, mu)
    var = T.mean(T.mul(xc, xc), axis=(1, 2), keepdims=True)
    xn = T.div(xc, T.sqrt(T.add(var, Tensor(np.float32(eps)))))
    return T.add(T.mul(xn, gain), bias)


def _maxpool2(x):
    c, h, w = x.shape
    g = T.reshape(x, (c, h // 2, 2, w // 2, 2))
    g = T.transpose(g, (0, 1, 3, 2, 4))
    g = T.reshape(g, (c, h // 2, w // 2, 4))
    return T.max_(g, axis=-1)


def _cnn_forward(head, grids):
    """grids: (N, 2, H, W) -> (N, out_dim); convolutions run per sample."""
    p = head.params
    outs = []
    for i in range(grids.shape[0]):
        x = grids[i] if isinstance(grids, Tensor) else Tensor(grids[i])
        for b in range(3):
            x = T.conv3x3(x, p[f"conv{b}.w"], p[f"conv{b}.b"])
            x = _spatial_norm(x, p[f"norm{b}.g"], p[f"norm{b}.b"])
            x = T.relu(x)
            if min(x.shape[1], x.shape[2]) >= 2:
                x = _maxpool2(x)
        pooled = T.mean(x, axis=(1, 2))  # global average -> (64,)
        outs.append(T.reshape(pooled, (1, -1)))
    feat = T.concat(outs, axis=0)
    h = T.relu(_affine(p, "fc1", feat))
    return T.tanh(_affine(p, "out", h))


def _probe_forward(head: ProbeHead, x):
    p = head.params
    if head.kind == "cnn-baseline":
        return _cnn_forward(head, x)
    if head.raw_projection:
        x = _affine(p, "proj", x)
    if head.kind == "linear":
        out = _affine(p, "out", x)
        return out
    h = T.relu(_affine(p, "fc1", x))
    h = T.relu(_affine(p, "fc2", h))
    out = _affine(p, "out", h)
    if head.task == "location":
        out = T.tanh(out)
    return out


def class_weights_from_labels(labels, n_classes, clip=(0.1, 10.0)):
    """Inverse-frequency weights over observed classes, clipped."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    weights = np.ones(n_classes)
    seen = counts > 0
    weights[seen] = len(labels) / (seen.sum() * counts[seen])
    return np.clip(weights, *clip)


def fit_probe(features, labels, head_kind, task, out_dim, lr=1e-3, epochs=200,
              seed=0, weighted=True, raw_projection=False, embed_dim=None,
              batch_size=None):
    """Train a probe head; deterministic in seed.

    task "location": labels are (N, 2) normalized coordinates, RMSE loss.
    task "classify": integer labels, (weighted) cross-entropy.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels)
    if len(features) < 2:
        raise ValueError("probe training needs at least two samples")
    if not np.all(np.isfinite(features)):
        raise ValueError("probe features must be finite")
    in_dim = features.shape[1] if features.ndim == 2 else None
    head = make_probe(
        head_kind, task, in_dim or 0, out_dim, seed=seed,
        raw_projection=raw_projection, embed_dim=embed_dim,
    )
    weights = None
    if task == "classify":
        if len(np.unique(labels)) < 2:
            head.degenerate_labels = True
        if weighted:
            weights = class_weights_from_labels(labels, out_dim)
    optimizer = Adam(head.params, lr=lr, clip_norm=1.0)
    rng = np.random.default_rng(seed)
    n = len(features)
    batch = n if batch_size is None else min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            for p in head.params.values():
                p.grad = None
            x = Tensor(features[idx])
            out = _probe_forward(head, x)
            if task == "location":
                target = Tensor(labels[idx].astype(np.float32))
                diff = T.sub(out, target)
                loss = T.sqrt(T.add(T.mean(T.mul(diff, diff)), Tensor(np.float32(1e-12))))
            else:
                loss = T.softmax_cross_entropy(out, labels[idx], weights=weights)
            loss.backward()
            optimizer.step()
    return head


def predict_beams_mu(features, head: ProbeHead, k):
    """Top-k beam indices per row, descending by logit."""
    logits = head.predict(features)
    if k > logits.shape[1]:
        raise ValueError(f"k={k} exceeds {logits.shape[1]} classes")
    order = np.argsort(-logits, axis=1, kind="stable")
    return order[:, :k]


def top_k_accuracy(topk_indices, labels):
    labels = np.asarray(labels).reshape(-1, 1)
    return float((topk_indices == labels).any(axis=1).mean())


# ---------------------------------------------------------------------------
# task evaluations
# ---------------------------------------------------------------------------


def eval_localization(head: ProbeHead, features, true_xy_m, half_extent):
    """Median Euclidean error in meters; predictions denormalized from the
    probe's [-1, 1] output range."""
    pred = head.predict(features)
    if head.task != "location":
        raise ValueError("head is not a location probe")
    err = np.linalg.norm(pred * half_extent - np.asarray(true_xy_m), axis=1)
    return float(np.median(err)), err


def mu_clusters(dataset, indices, cluster_size):
    """Group sample indices scene by scene into fixed-size user clusters."""
    by_scene = {}
    for idx in indices:
        by_scene.setdefault(dataset.samples[idx].scene_id, []).append(idx)
    clusters = []
    for sid in sorted(by_scene):
        members = by_scene[sid]
        for start in range(0, len(members) - cluster_size + 1, cluster_size):
            clusters.append(members[start : start + cluster_size])
    return clusters


def eval_sum_rate_mu(dataset, clusters, predicted_top1, codebook, power=1.0,
                     snr_db=10.0, alpha=None):
    """Sum rate of predicted beams vs the exhaustive two-step bound.

    predicted_top1: {sample_idx: beam index}. Noise power is set from the
    mean user channel energy at the requested SNR. Returns per-cluster rows
    [cluster_id, predicted_rate, oracle_rate, ratio] plus both ECDFs.
    """
    rows, pred_rates, oracle_rates = [], [], []
    for cid, cluster in enumerate(clusters):
        h_rows = np.stack([dataset.samples[i].H[0] for i in cluster])
        sigma2 = sigma2_for_snr(h_rows, snr_db)
        oracle = mu_upper_bound(h_rows, codebook, alpha=alpha, power=power, sigma2=sigma2)
        beams = np.array([predicted_top1[i] for i in cluster])
        predicted = mu_solution_for_beams(
            h_rows, codebook, beams, alpha=alpha, power=power, sigma2=sigma2
        )
        ratio = predicted.sum_rate / oracle.sum_rate if oracle.sum_rate > 0 else 0.0
        rows.append([cid, predicted.sum_rate, oracle.sum_rate, ratio])
        pred_rates.append(predicted.sum_rate)
        oracle_rates.append(oracle.sum_rate)
    return rows, sum_rate_ecdf(pred_rates), sum_rate_ecdf(oracle_rates)


def sigma2_for_snr(h_rows, snr_db):
    """Noise power giving the requested mean per-user SNR before precoding."""
    mean_energy = float((np.abs(h_rows) ** 2).sum(axis=1).mean())
    return mean_energy / 10.0 ** (snr_db / 10.0)


def mu_oracle_labels(dataset, indices, codebook, antenna=0):
    labels = {}
    for idx in indices:
        beam, _ = select_beams_mu(dataset.samples[idx].H[antenna][None, :], codebook)
        labels[idx] = int(beam[0])
    return labels


# ---------------------------------------------------------------------------
# single-user fine-tuning
# ---------------------------------------------------------------------------

RX_PAIRS = tuple(itertools.combinations(range(4), 2))  # unordered rx pairs


def su_pair_to_rx_class(pair):
    return RX_PAIRS.index(tuple(sorted(pair)))


@dataclass
class SuHeads:
    params: dict
    n_tx: int

    def predict(self, feats):
        x = Tensor(np.asarray(feats, dtype=np.float32))
        tx_logits = _affine(self.params, "tx", x).data.reshape(len(feats), 2, self.n_tx)
        rx_logits = _affine(self.params, "rx", x).data
        return tx_logits, rx_logits


def su_predicted_pairs(heads: SuHeads, feats):
    """Sorted tx pair from two per-position softmaxes (distinct indices
    enforced) and the rx pair from the 6-way head."""
    tx_logits, rx_logits = heads.predict(feats)
    pairs = []
    for i in range(len(feats)):
        first = int(tx_logits[i, 0].argmax())
        order = np.argsort(-tx_logits[i, 1], kind="stable")
        second = int(order[0]) if order[0] != first else int(order[1])
        tx_pair = tuple(sorted((first, second)))
        rx_pair = RX_PAIRS[int(rx_logits[i].argmax())]
        pairs.append((tx_pair, rx_pair))
    return pairs


def su_embed(model: Model, dataset, idx, spec: PartialCsiSpec):
    """Concatenated aggregator embeddings across the receiver antennas."""
    feats_rows = []
    n_rx = dataset.samples[idx].H.shape[0]
    for antenna in range(n_rx):
        feats = features_for_sample(model, dataset, idx, antenna=antenna)
        visible = partial_visible_patches(spec, model.config.n_csi_tokens, idx)
        feats_rows.append(encode_partial(model, feats, visible, mask_location=True))
    return np.concatenate(feats_rows)


def finetune_su(model: Model, dataset, train_indices, labels,
                spec: PartialCsiSpec, lr_trunk=1e-5, lr_heads=1e-3,
                epochs=10, seed=0):
    """Fine-tune the trunk at reduced lr with fresh tx/rx pair heads.

    labels: {idx: (tx_pair, rx_pair)}. Each receive antenna is encoded
    independently; the four aggregator embeddings concatenate into the
    classifier feature. Returns (SuHeads, embed function).
    """
    cfg = model.config
    n_tx = dataset.profile.su_tx_codebook
    rng = np.random.default_rng(seed)
    params = {}
    _init_affine(params, rng, "tx", 4 * cfg.embed_dim, 2 * n_tx)
    _init_affine(params, rng, "rx", 4 * cfg.embed_dim, len(RX_PAIRS))
    head_opt = Adam(params, lr=lr_heads, clip_norm=1.0)
    trunk_opt = Adam(model.params, lr=lr_trunk, clip_norm=1.0)
    heads = SuHeads(params=params, n_tx=n_tx)
    n_rx = dataset.profile.su_rx_antennas
    for epoch in range(epochs):
        order = rng.permutation(len(train_indices))
        for oi in order:
            idx = train_indices[oi]
            model.zero_grad()
            for p in params.values():
                p.grad = None
            physcs = []
            for antenna in range(n_rx):
                feats = features_for_sample(model, dataset, idx, antenna=antenna)
                visible_p = partial_visible_patches(spec, cfg.n_csi_tokens, idx)
                hidden = list(
                    cfg.csi_positions[np.setdiff1d(np.arange(cfg.n_csi_tokens), visible_p)]
                )
                hidden.append(cfg.loc_position)
                visible = np.setdiff1d(np.arange(cfg.seq_len), np.asarray(hidden))
                batch = model.tokenize(feats)
                _, physc, _ = model.encode(batch, visible)
                physcs.append(physc)
            feat = T.concat(physcs, axis=1)  # (1, 4 * embed_dim)
            tx_pair, rx_pair = labels[idx]
            tx_sorted = sorted(tx_pair)
            tx_out = T.reshape(_affine(params, "tx", feat), (2, n_tx))
            loss = T.softmax_cross_entropy(tx_out, np.array(tx_sorted))
            rx_out = _affine(params, "rx", feat)
            loss = T.add(
                loss,
                T.softmax_cross_entropy(rx_out, np.array([su_pair_to_rx_class(rx_pair)])),
            )
            loss.backward()
            head_opt.step()
            trunk_opt.step()
    return heads


def su_oracle_labels(dataset, indices, cb_tx, cb_rx, n_s, snr_db, budget=None):
    """Exhaustive-search beam pairs at a per-sample energy-referred SNR."""
    labels = {}
    for idx in indices:
        h = dataset.samples[idx].H
        kwargs = {} if budget is None else {"budget": budget}
        sol = su_exhaustive(h, cb_tx, cb_rx, n_s, su_snr_param(h, snr_db), **kwargs)
        labels[idx] = (sol.tx_indices, sol.rx_indices)
    return labels


def eval_sum_rate_su(dataset, indices, predicted, labels, cb_tx, cb_rx, n_s, snr_db):
    """Achieved spectral efficiency of predicted vs oracle beam pairs."""
    rows = []
    for idx in indices:
        h = dataset.samples[idx].H
        snr = su_snr_param(h, snr_db)
        tx_p, rx_p = predicted[idx]
        tx_o, rx_o = labels[idx]
        rate_p = su_link_rate(h, cb_tx, cb_rx, tx_p, rx_p, n_s, snr)
        rate_o = su_link_rate(h, cb_tx, cb_rx, tx_o, rx_o, n_s, snr)
        rows.append([idx, rate_p, rate_o, rate_p / rate_o if rate_o > 0 else 0.0])
    return rows
