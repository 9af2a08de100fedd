"""End-to-end downstream experiments over a pretrained checkpoint.

Each experiment returns plain row lists ready for CSV export; the CLI adds
figures. Label budgets and training ratios mirror the sweep style of the
evaluation figures (error or accuracy vs available labeled data).
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, split
from .model import Model, normalize_location
from .probes import (
    PartialCsiSpec,
    embed_dataset,
    eval_localization,
    eval_sum_rate_mu,
    eval_sum_rate_su,
    fit_probe,
    mu_clusters,
    mu_oracle_labels,
    predict_beams_mu,
    su_embed,
    su_oracle_labels,
    su_predicted_pairs,
    finetune_su,
    top_k_accuracy,
)
from .spectra import dft_codebook

LOC_FRACTION = 0.25  # visible CSI share for localization
MIMO_FRACTION = 0.05  # visible CSI share for precoding tasks


def localization_experiment(model: Model, dataset: Dataset, label_counts,
                            seeds, snr_db=10.0, probe_kind="linear",
                            probe_lr=1e-3, probe_epochs=300, split_seed=0):
    """Aggregator-embedding probe vs raw-partial-CSI probe.

    Returns rows [method, labels, seed, median_error_m]. Probes are trained
    on up to `labels` samples from the train portion and scored on the held
    test portion; CSI is noised at `snr_db` before encoding.
    """
    train_idx, _, test_idx = _pooled_split(dataset, split_seed)
    spec = PartialCsiSpec(LOC_FRACTION, selection_seed=split_seed)
    all_idx = train_idx + test_idx
    embeds, raws = embed_dataset(
        model, dataset, all_idx, spec, mask_location=True,
        snr_db=snr_db, noise_seed=split_seed,
    )
    pos = {idx: i for i, idx in enumerate(all_idx)}
    half = dataset.manifest.half_extent
    truth_norm = np.stack(
        [
            normalize_location(
                dataset.samples[i].rx_position,
                dataset.scenes[dataset.samples[i].scene_id].bs_position,
                half,
            )
            for i in all_idx
        ]
    ).astype(np.float32)
    truth_m = truth_norm * half  # shared affine offset cancels in errors
    test_rows = [pos[i] for i in test_idx]
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence((split_seed, seed, 0x10C)))
        order = rng.permutation(len(train_idx))
        for budget in label_counts:
            chosen = [pos[train_idx[i]] for i in order[:budget]]
            for method, feats in (("physc", embeds), ("raw-csi", raws)):
                head = fit_probe(
                    feats[chosen], truth_norm[chosen], probe_kind, "location",
                    out_dim=2, lr=probe_lr, epochs=probe_epochs, seed=seed,
                    raw_projection=(method == "raw-csi"),
                    embed_dim=model.config.embed_dim,
                )
                median, _ = eval_localization(
                    head, feats[test_rows], truth_m[test_rows], half
                )
                rows.append([method, budget, seed, median])
    return rows


def mu_experiment(model: Model, dataset: Dataset, ratios, seeds, snr_db=10.0,
                  top_k=5, probe_lr=1e-3, probe_epochs=300, split_seed=0,
                  power=1.0):
    """Beam-index classification from 5%-visible CSI plus the sum-rate KPI.

    Returns (accuracy_rows, rate_rows, ecdf_tables):
      accuracy rows  [method, ratio, seed, top1, topk]
      rate rows      [method, ratio, seed, mean_ratio_vs_oracle]
      ecdf_tables    {label: EcdfTable} for the full-ratio run of seed[0].
    """
    codebook = dft_codebook(model.config.csi_nx, model.config.csi_ny)
    k_users = dataset.profile.mu_num_users
    train_idx, test_idx, clusters = _cluster_split(dataset, split_seed, k_users)
    spec = PartialCsiSpec(MIMO_FRACTION, selection_seed=split_seed)
    all_idx = train_idx + test_idx
    embeds, raws = embed_dataset(
        model, dataset, all_idx, spec, mask_location=False, noise_seed=split_seed,
    )
    pos = {idx: i for i, idx in enumerate(all_idx)}
    labels = mu_oracle_labels(dataset, all_idx, codebook)
    label_arr = np.array([labels[i] for i in all_idx])
    test_rows = [pos[i] for i in test_idx]
    test_labels = label_arr[test_rows]
    acc_rows, rate_rows = [], []
    ecdfs = {}
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence((split_seed, seed, 0x30B)))
        order = rng.permutation(len(train_idx))
        for ratio in ratios:
            budget = max(2, int(round(ratio * len(train_idx))))
            chosen = [pos[train_idx[i]] for i in order[:budget]]
            for method, feats in (("physc", embeds), ("raw-csi", raws)):
                head = fit_probe(
                    feats[chosen], label_arr[chosen], "linear", "classify",
                    out_dim=codebook.size, lr=probe_lr, epochs=probe_epochs,
                    seed=seed, raw_projection=(method == "raw-csi"),
                    embed_dim=model.config.embed_dim,
                )
                topk = predict_beams_mu(feats[test_rows], head, top_k)
                acc1 = top_k_accuracy(topk[:, :1], test_labels)
                acck = top_k_accuracy(topk, test_labels)
                acc_rows.append([method, ratio, seed, acc1, acck])
                predicted = {
                    idx: int(topk[i, 0]) for i, idx in enumerate(test_idx)
                }
                rows, pred_ecdf, oracle_ecdf = eval_sum_rate_mu(
                    dataset, clusters, predicted, codebook,
                    power=power, snr_db=snr_db,
                )
                mean_ratio = float(np.mean([r[3] for r in rows]))
                rate_rows.append([method, ratio, seed, mean_ratio])
                if seed == seeds[0] and ratio == max(ratios):
                    ecdfs[method] = pred_ecdf
                    ecdfs.setdefault("oracle", oracle_ecdf)
    # random-beam baseline at full ratio
    rng = np.random.default_rng(np.random.SeedSequence((split_seed, 0xF00D)))
    random_pred = {idx: int(rng.integers(0, codebook.size)) for idx in test_idx}
    rows, rand_ecdf, _ = eval_sum_rate_mu(
        dataset, clusters, random_pred, codebook, power=power, snr_db=snr_db
    )
    rate_rows.append(["random", 1.0, -1, float(np.mean([r[3] for r in rows]))])
    ecdfs["random"] = rand_ecdf
    # oracle-label sanity: identical pipeline must hit ratio 1 exactly
    oracle_pred = {idx: labels[idx] for idx in test_idx}
    rows, _, _ = eval_sum_rate_mu(
        dataset, clusters, oracle_pred, codebook, power=power, snr_db=snr_db
    )
    rate_rows.append(["oracle", 1.0, -1, float(np.mean([r[3] for r in rows]))])
    return acc_rows, rate_rows, ecdfs


def su_experiment(model: Model, dataset: Dataset, train_count, seeds,
                  snr_db=10.0, epochs=4, lr_trunk=1e-5, lr_heads=1e-3,
                  split_seed=0, budget=None):
    """Single-user task: fine-tune, predict tx/rx pairs, compare rates.

    Returns rows [seed, tx_acc, rx_acc, joint_acc, mean_rate_ratio].
    """
    if dataset.manifest.n_rx < 2:
        raise ValueError("single-user task needs a multi-antenna dataset (n_rx=4)")
    profile = dataset.profile
    cb_tx = dft_codebook(profile.array_nx, profile.array_ny)
    cb_rx = dft_codebook(profile.su_rx_antennas, 1)
    n_s = profile.su_streams
    train_idx, _, test_idx = _pooled_split(dataset, split_seed)
    labels = su_oracle_labels(
        dataset, train_idx + test_idx, cb_tx, cb_rx, n_s, snr_db, budget=budget
    )
    spec = PartialCsiSpec(MIMO_FRACTION, selection_seed=split_seed)
    rows = []
    for seed in seeds:
        import copy

        tuned = copy.deepcopy(model)
        rng = np.random.default_rng(np.random.SeedSequence((split_seed, seed, 0x5E)))
        chosen = [train_idx[i] for i in rng.permutation(len(train_idx))[:train_count]]
        heads = finetune_su(
            tuned, dataset, chosen, labels, spec,
            lr_trunk=lr_trunk, lr_heads=lr_heads, epochs=epochs, seed=seed,
        )
        feats = np.stack([su_embed(tuned, dataset, i, spec) for i in test_idx])
        predicted = dict(zip(test_idx, su_predicted_pairs(heads, feats)))
        tx_hits = [predicted[i][0] == tuple(sorted(labels[i][0])) for i in test_idx]
        rx_hits = [predicted[i][1] == tuple(sorted(labels[i][1])) for i in test_idx]
        joint = [t and r for t, r in zip(tx_hits, rx_hits)]
        rate_rows = eval_sum_rate_su(
            dataset, test_idx, predicted, labels, cb_tx, cb_rx, n_s, snr_db
        )
        rows.append(
            [
                seed,
                float(np.mean(tx_hits)),
                float(np.mean(rx_hits)),
                float(np.mean(joint)),
                float(np.mean([r[3] for r in rate_rows])),
            ]
        )
    return rows


def _pooled_split(dataset, split_seed, train_frac=0.8):
    """Deterministic sample-level split pooled over all scenes."""
    rng = np.random.default_rng(np.random.SeedSequence((split_seed, 0x5B117)))
    order = rng.permutation(len(dataset))
    n_train = int(round(train_frac * len(dataset)))
    train = [int(i) for i in order[:n_train]]
    test = [int(i) for i in order[n_train:]]
    return train, [], test


def _cluster_split(dataset, split_seed, cluster_size, train_frac=0.8):
    """Split whole same-scene user clusters so every test cluster can be
    precoded jointly."""
    clusters = mu_clusters(dataset, range(len(dataset)), cluster_size)
    if not clusters:
        raise ValueError(
            f"no complete {cluster_size}-user clusters; generate more users per scene"
        )
    rng = np.random.default_rng(np.random.SeedSequence((split_seed, 0xC1)))
    order = rng.permutation(len(clusters))
    n_train = max(1, int(round(train_frac * len(clusters))))
    if n_train == len(clusters):
        n_train = len(clusters) - 1
    train = [i for ci in order[:n_train] for i in clusters[ci]]
    test_clusters = [clusters[ci] for ci in order[n_train:]]
    test = [i for cluster in test_clusters for i in cluster]
    return train, test, test_clusters
