import numpy as np
import pytest

from wavefm.data import DatasetManifest, generate_dataset
from wavefm.model import Model, ModelConfig
from wavefm.probes import (
    RX_PAIRS,
    PartialCsiSpec,
    class_weights_from_labels,
    embed_dataset,
    encode_partial,
    eval_localization,
    eval_sum_rate_mu,
    features_for_sample,
    fit_probe,
    make_probe,
    mu_clusters,
    mu_oracle_labels,
    partial_visible_patches,
    predict_beams_mu,
    su_embed,
    su_pair_to_rx_class,
    top_k_accuracy,
)
from wavefm.profiles import get_profile
from wavefm.spectra import dft_codebook

DESK_CFG = ModelConfig.from_profile(get_profile("desk"))


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("probe_ds")
    manifest = DatasetManifest(profile="desk", scene_count=2, samples_per_scene=16, seed=21)
    dataset = generate_dataset(manifest, out)
    model = Model(DESK_CFG, seed=0)
    return dataset, model


def test_visible_counts_follow_rounding():
    assert PartialCsiSpec(0.25).visible_count(64) == 16
    assert PartialCsiSpec(0.05).visible_count(64) == 3
    assert PartialCsiSpec(0.01).visible_count(16) == 1  # clamped to one


def test_visible_selection_deterministic():
    spec = PartialCsiSpec(0.25, selection_seed=3)
    a = partial_visible_patches(spec, 16, sample_idx=5)
    b = partial_visible_patches(spec, 16, sample_idx=5)
    np.testing.assert_array_equal(a, b)
    c = partial_visible_patches(spec, 16, sample_idx=6)
    assert not np.array_equal(a, c)


def test_encode_partial_shape(desk_data):
    dataset, model = desk_data
    feats = features_for_sample(model, dataset, 0)
    visible = partial_visible_patches(PartialCsiSpec(0.25), 16, 0)
    emb = encode_partial(model, feats, visible, mask_location=True)
    assert emb.shape == (DESK_CFG.embed_dim,)
    emb2 = encode_partial(model, feats, visible, mask_location=True)
    np.testing.assert_array_equal(emb, emb2)


def test_fit_probe_separable_classes():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-3, 0.3, (30, 4)), rng.normal(3, 0.3, (30, 4))])
    y = np.array([0] * 30 + [1] * 30)
    head = fit_probe(x, y, "linear", "classify", out_dim=2, lr=1e-2, epochs=100, seed=0)
    pred = head.predict(x).argmax(axis=1)
    assert (pred == y).mean() == 1.0


def test_fit_probe_zero_lr_keeps_params():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10, 4)).astype(np.float32)
    y = rng.integers(0, 3, 10)
    head = fit_probe(x, y, "linear", "classify", out_dim=3, lr=0.0, epochs=5, seed=7)
    fresh = make_probe("linear", "classify", 4, 3, seed=7)
    for key in head.params:
        np.testing.assert_array_equal(head.params[key].data, fresh.params[key].data)


def test_fit_probe_constant_location_labels():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 8)).astype(np.float32)
    y = np.tile([0.25, -0.5], (40, 1))
    head = fit_probe(x, y, "mlp", "location", out_dim=2, lr=1e-2, epochs=300, seed=0)
    pred = head.predict(x)
    assert np.abs(pred - y).max() < 0.05


def test_fit_probe_flags_degenerate_labels():
    x = np.random.default_rng(3).standard_normal((8, 4)).astype(np.float32)
    head = fit_probe(x, np.zeros(8, dtype=int), "linear", "classify", out_dim=4,
                     lr=1e-3, epochs=5, seed=0)
    assert head.degenerate_labels


def test_fit_probe_requires_two_samples():
    with pytest.raises(ValueError, match="two samples"):
        fit_probe(np.ones((1, 4)), np.array([0]), "linear", "classify", out_dim=2)


def test_class_weights_inverse_frequency_clipped():
    labels = np.array([0] * 99 + [1])
    w = class_weights_from_labels(labels, 3)
    assert w[1] == 10.0  # clipped top
    assert w[0] == pytest.approx(100 / (2 * 99))
    assert w[2] == 1.0  # unseen class defaults to neutral


def test_predict_beams_topk():
    head = make_probe("linear", "classify", 4, 8, seed=0)
    head.params["out.w"].data[:] = 0.0
    head.params["out.b"].data[:] = 0.0
    head.params["out.b"].data[5] = 10.0
    head.params["out.b"].data[2] = 5.0
    feats = np.zeros((3, 4), dtype=np.float32)
    top1 = predict_beams_mu(feats, head, 1)
    assert (top1 == 5).all()
    top5 = predict_beams_mu(feats, head, 5)
    assert (top5[:, 0] == 5).all() and (top5[:, 1] == 2).all()
    with pytest.raises(ValueError, match="exceeds"):
        predict_beams_mu(feats, head, 9)


def test_topk_accuracy_counting_oracle():
    topk = np.array([[1, 2], [3, 4], [5, 6]])
    labels = [2, 4, 0]
    # hand-counted confusion: hits on rows 0 and 1
    assert top_k_accuracy(topk, labels) == pytest.approx(2 / 3)
    assert top_k_accuracy(topk[:, :1], labels) == 0.0


def test_eval_localization_perfect_predictor():
    rng = np.random.default_rng(4)
    truth_norm = rng.uniform(-1, 1, (20, 2)).astype(np.float32)
    head = make_probe("linear", "location", 2, 2, seed=0)
    head.params["out.w"].data = np.eye(2, dtype=np.float32)
    head.params["out.b"].data[:] = 0.0
    median, err = eval_localization(head, truth_norm, truth_norm * 100.0, 100.0)
    assert median == pytest.approx(0.0, abs=1e-5)
    assert err.max() < 1e-4


def test_eval_localization_center_predictor_median():
    rng = np.random.default_rng(5)
    truth_norm = rng.uniform(-1, 1, (4000, 2)).astype(np.float32)
    head = make_probe("linear", "location", 2, 2, seed=0)
    head.params["out.w"].data[:] = 0.0
    head.params["out.b"].data[:] = 0.0
    half = 100.0
    median, _ = eval_localization(head, truth_norm, truth_norm * half, half)
    # Monte-Carlo oracle: median distance of uniform square points to center
    oracle = np.median(np.linalg.norm(truth_norm * half, axis=1))
    assert median == pytest.approx(oracle, rel=1e-6)


def test_mu_cluster_grouping(desk_data):
    dataset, _ = desk_data
    clusters = mu_clusters(dataset, range(len(dataset)), 8)
    assert len(clusters) == 4  # 2 scenes x 16 users / 8
    for cluster in clusters:
        scene_ids = {dataset.samples[i].scene_id for i in cluster}
        assert len(scene_ids) == 1 and len(cluster) == 8


def test_eval_sum_rate_oracle_identity(desk_data):
    dataset, _ = desk_data
    codebook = dft_codebook(8, 8)
    clusters = mu_clusters(dataset, range(len(dataset)), 8)
    labels = mu_oracle_labels(dataset, range(len(dataset)), codebook)
    rows, pred_ecdf, oracle_ecdf = eval_sum_rate_mu(
        dataset, clusters, labels, codebook, snr_db=10.0
    )
    for row in rows:
        assert row[3] == 1.0  # identical pipeline, exact unity
    np.testing.assert_array_equal(pred_ecdf.values, oracle_ecdf.values)


def test_eval_sum_rate_random_below_oracle(desk_data):
    dataset, _ = desk_data
    codebook = dft_codebook(8, 8)
    clusters = mu_clusters(dataset, range(len(dataset)), 8)
    rng = np.random.default_rng(0)
    random_pred = {i: int(rng.integers(0, 64)) for i in range(len(dataset))}
    rows, rand_ecdf, oracle_ecdf = eval_sum_rate_mu(
        dataset, clusters, random_pred, codebook, snr_db=10.0
    )
    assert np.mean([r[3] for r in rows]) < 1.0
    # oracle rates stochastically dominate the random-beam rates
    grid = np.linspace(oracle_ecdf.values.min(), oracle_ecdf.values.max(), 32)
    for x in grid:
        frac_oracle = (oracle_ecdf.values <= x).mean()
        frac_random = (rand_ecdf.values <= x).mean()
        assert frac_oracle <= frac_random + 1e-12


def test_embed_dataset_shapes(desk_data):
    dataset, model = desk_data
    spec = PartialCsiSpec(0.25, selection_seed=1)
    embeds, raws = embed_dataset(model, dataset, [0, 1, 2], spec, mask_location=True)
    assert embeds.shape == (3, DESK_CFG.embed_dim)
    assert raws.shape == (3, 4 * DESK_CFG.csi_patch_values)  # 4 visible patches


def test_rx_pair_class_space():
    assert len(RX_PAIRS) == 6
    assert su_pair_to_rx_class((2, 0)) == RX_PAIRS.index((0, 2))


def test_su_embed_concatenates_antennas(tmp_path):
    manifest = DatasetManifest(profile="desk", scene_count=1, samples_per_scene=4,
                               seed=31, n_rx=4)
    dataset = generate_dataset(manifest, tmp_path)
    model = Model(DESK_CFG, seed=0)
    feat = su_embed(model, dataset, 0, PartialCsiSpec(0.05, selection_seed=0))
    assert feat.shape == (4 * DESK_CFG.embed_dim,)
    # identical channels on all antennas -> identical per-antenna latents
    dataset.samples[0].H = np.tile(dataset.samples[0].H[:1], (4, 1))
    feat_same = su_embed(model, dataset, 0, PartialCsiSpec(0.05, selection_seed=0))
    blocks = feat_same.reshape(4, DESK_CFG.embed_dim)
    for antenna in range(1, 4):
        np.testing.assert_array_equal(blocks[antenna], blocks[0])
