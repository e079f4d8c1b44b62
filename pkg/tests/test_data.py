import numpy as np
import pytest

from adaptgauge.data import (DomainDataset, GeneratorConfig, Heterogeneity,
                             channel_stats, drop_classes, generate_synthetic,
                             read_csv, sample_target_sets, split_dataset,
                             standardize, write_csv)

TINY = GeneratorConfig(n_domains=4, n_classes=3, channels=2, length=64,
                       instances_per_domain=120)


def spectral_centroid_classifier(train: DomainDataset):
    """Independent oracle: nearest class centroid over per-channel FFT magnitudes."""
    def embed(ds):
        spec = np.abs(np.fft.rfft(ds.windows, axis=2))
        return spec.reshape(len(ds), -1)

    emb = embed(train)
    centroids = np.stack([emb[train.labels == c].mean(axis=0)
                          for c in range(train.n_classes)])

    def accuracy(ds):
        d = ((embed(ds)[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        return float(np.mean(d.argmin(axis=1) == ds.labels))

    return accuracy


def test_seed_determinism_byte_identical():
    a = generate_synthetic(TINY, seed=5)
    b = generate_synthetic(TINY, seed=5)
    for da, db in zip(a, b):
        assert da.windows.tobytes() == db.windows.tobytes()
        assert da.labels.tobytes() == db.labels.tobytes()


def test_different_seed_differs():
    a = generate_synthetic(TINY, seed=5)
    b = generate_synthetic(TINY, seed=6)
    assert a[0].windows.tobytes() != b[0].windows.tobytes()


def test_zero_heterogeneity_domains_interchangeable():
    cfg = GeneratorConfig(n_domains=3, n_classes=3, channels=2, length=64,
                          instances_per_domain=240,
                          heterogeneity=Heterogeneity.scaled(0.0))
    doms = generate_synthetic(cfg, seed=9)
    clf = spectral_centroid_classifier(doms[0])
    in_domain = clf(doms[0])
    for other in doms[1:]:
        assert in_domain - clf(other) < 0.05


def test_moderate_heterogeneity_creates_gaps():
    # source-trained oracle scores strictly lower on an unseen domain for
    # at least 80% of seeds
    drops = 0
    seeds = range(10)
    for seed in seeds:
        doms = generate_synthetic(
            GeneratorConfig(n_domains=2, n_classes=3, channels=2, length=64,
                            instances_per_domain=240,
                            heterogeneity=Heterogeneity.scaled(1.0)), seed=seed)
        train, holdout = split_dataset(doms[0], 0.7, seed=0)
        clf = spectral_centroid_classifier(train)
        if clf(doms[1]) < clf(holdout):
            drops += 1
    assert drops >= 0.8 * len(seeds)


def test_degenerate_configs_rejected():
    with pytest.raises(ValueError):
        generate_synthetic(GeneratorConfig(n_classes=1), seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(GeneratorConfig(n_classes=20, instances_per_domain=10),
                           seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(GeneratorConfig(length=4), seed=0)


def test_labels_balanced():
    doms = generate_synthetic(TINY, seed=1)
    for d in doms:
        counts = np.bincount(d.labels, minlength=d.n_classes)
        assert counts.max() - counts.min() <= 1


# ---------------------------------------------------------------------------
# standardization


def test_standardize_constant_channel_zeroed():
    win = np.ones((5, 2, 8))
    win[:, 1] = 3.0
    ds = DomainDataset("c", win, np.zeros(5, dtype=np.int64), 2)
    stats = channel_stats([ds])
    out = standardize([ds], stats)[0]
    assert np.allclose(out.windows, 0.0)


def test_standardize_source_postcondition():
    doms = generate_synthetic(TINY, seed=2)
    stats = channel_stats(doms[:2])
    std = standardize(doms[:2], stats)
    pooled = np.concatenate([d.windows for d in std])
    for ch in range(pooled.shape[1]):
        assert abs(pooled[:, ch, :].mean()) < 1e-9
        assert abs(pooled[:, ch, :].std() - 1.0) < 1e-9


def test_target_mean_shifted_under_source_stats():
    doms = generate_synthetic(
        GeneratorConfig(n_domains=3, n_classes=3, channels=2, length=64,
                        instances_per_domain=120), seed=3)
    stats = channel_stats(doms[:2])
    target = standardize([doms[2]], stats)[0]
    assert np.abs(target.windows.mean(axis=(0, 2))).max() > 0.0


def test_standardize_empty_rejected():
    with pytest.raises(ValueError):
        channel_stats([])


def test_standardize_idempotence_composition():
    # standardizing twice equals standardizing once with composed stats
    doms = generate_synthetic(TINY, seed=4)
    m1, s1 = channel_stats(doms[:2])
    once = standardize(doms, (m1, s1))
    m2, s2 = channel_stats(once[:2])
    twice = standardize(once, (m2, s2))
    composed = standardize(doms, (m1 + s1 * m2, s1 * s2))
    for a, b in zip(twice, composed):
        assert np.allclose(a.windows, b.windows, atol=1e-12)


# ---------------------------------------------------------------------------
# splits


def test_sample_target_sets_sizes_and_disjoint():
    ds = generate_synthetic(GeneratorConfig(n_domains=1, instances_per_domain=1000,
                                            n_classes=4, channels=2, length=32),
                            seed=11)[0]
    train, val = sample_target_sets(ds, 50, 500, seed=13)
    assert len(train) == 50 and len(val) == 500
    train_keys = {w.tobytes() for w in train.windows}
    assert all(w.tobytes() not in train_keys for w in val.windows)


def test_sample_target_sets_val_fixed_independent_of_train_size():
    ds = generate_synthetic(TINY, seed=11)[0]
    _, val_a = sample_target_sets(ds, 10, 40, seed=3)
    _, val_b = sample_target_sets(ds, 35, 40, seed=3)
    assert val_a.windows.tobytes() == val_b.windows.tobytes()


def test_sample_target_sets_deterministic():
    ds = generate_synthetic(TINY, seed=11)[0]
    a = sample_target_sets(ds, 20, 40, seed=5)
    b = sample_target_sets(ds, 20, 40, seed=5)
    assert a[0].windows.tobytes() == b[0].windows.tobytes()
    assert a[1].windows.tobytes() == b[1].windows.tobytes()


def test_sample_target_sets_insufficient_rejected():
    ds = generate_synthetic(TINY, seed=11)[0]
    with pytest.raises(ValueError, match="120"):
        sample_target_sets(ds, 100, 100, seed=0)


def test_drop_spec_keeps_ceil():
    ds = generate_synthetic(GeneratorConfig(n_domains=1, n_classes=4, channels=2,
                                            length=32, instances_per_domain=400),
                            seed=2)[0]
    _, val = sample_target_sets(ds, 5, 200, seed=1,
                                imbalance={0: 0.8, 1: 0.8})
    counts = np.bincount(val.labels, minlength=4)
    base = np.bincount(sample_target_sets(ds, 5, 200, seed=1)[1].labels, minlength=4)
    for cls in (0, 1):
        assert counts[cls] == int(np.ceil(0.2 * base[cls]))
    for cls in (2, 3):
        assert counts[cls] == base[cls]


def test_drop_classes_rejects_bad_rate():
    ds = generate_synthetic(TINY, seed=2)[0]
    with pytest.raises(ValueError):
        drop_classes(ds, {0: 1.5}, seed=0)


# ---------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip_exact(tmp_path):
    doms = generate_synthetic(TINY, seed=8)
    path = tmp_path / "data.csv"
    write_csv(path, doms)
    back = read_csv(path)
    assert len(back) == len(doms)
    by_id = {d.domain_id: d for d in back}
    for d in doms:
        r = by_id[d.domain_id]
        assert np.abs(r.windows - d.windows).max() < 1e-12
        assert np.array_equal(r.labels, d.labels)
        assert r.n_classes == d.n_classes


def test_csv_bad_header_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("foo,bar\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(path)
