import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbal.datasets import (ConfigurationError, Dataset, DatasetImportError, SplitError, SyntheticConfig,
                           derive_damage_split, generate_synthetic, import_labelled_csv, split_and_init,
                           standardize, write_labelled_csv)


def small_config(**kw):
    base = dict(cycles=2, points_per_cycle_per_class=(5, 6, 7, 8), first_cycle_points=None, seed=3)
    base.update(kw)
    return SyntheticConfig(**base)


def test_default_size_is_11997():
    assert len(generate_synthetic(SyntheticConfig())) == 11997


def test_same_seed_bit_identical():
    a, b = generate_synthetic(small_config()), generate_synthetic(small_config())
    assert a.features.tobytes() == b.features.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    c = generate_synthetic(small_config(seed=4))
    assert not np.array_equal(a.features, c.features)


def test_labels_sweep_and_reset():
    d = generate_synthetic(small_config())
    n_cycle = 5 + 6 + 7 + 8
    assert len(d) == 2 * n_cycle
    for c in range(2):
        block = d.labels[c * n_cycle:(c + 1) * n_cycle]
        assert np.all(np.diff(block) >= 0)
        assert block[0] == 1 and block[-1] == 4
    assert np.array_equal(np.bincount(d.labels)[1:], [10, 12, 14, 16])


def test_non_pd_covariance_rejected():
    bad = ((1.0, 2.0), (2.0, 1.0))
    cfg = small_config(class_covariances=(bad,) * 4)
    with pytest.raises(ConfigurationError):
        generate_synthetic(cfg)
    with pytest.raises(ConfigurationError):
        generate_synthetic(small_config(cycles=0))


def test_class_means_converge():
    cfg = SyntheticConfig(cycles=1, points_per_cycle_per_class=(10000,) * 4, first_cycle_points=None, seed=1)
    d = generate_synthetic(cfg)
    for k in range(4):
        X = d.features[d.labels == k + 1]
        sd = np.sqrt(np.diag(np.asarray(cfg.class_covariances[k])))
        err = np.abs(X.mean(axis=0) - np.asarray(cfg.class_means[k]))
        assert np.all(err < 3 * sd / np.sqrt(len(X)))


def test_csv_round_trip(tmp_path):
    d = generate_synthetic(small_config())
    path = tmp_path / "d.csv"
    write_labelled_csv(d, path)
    back = import_labelled_csv(path, expected_dims=2)
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.labels, d.labels)


def test_csv_single_row(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("f1,f2,f3,f4,label\n1.0,2.0,3.0,4.0,2\n")
    d = import_labelled_csv(path, expected_dims=4)
    assert len(d) == 1 and d.D == 4 and d.labels[0] == 2


@pytest.mark.parametrize("body, fragment", [
    ("f1,label\n", "no rows"),
    ("", "empty file"),
    ("f1,f2\n1,2\n", "missing 'label'"),
    ("f1,label\nx,1\n", "row 2"),
    ("f1,label\n1.0,1\n2.0,0\n", "row 3"),
    ("f1,label\n1.0,1.5\n", "integer"),
    ("f1,label\nnan,1\n", "non-finite"),
])
def test_csv_errors(tmp_path, body, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DatasetImportError, match=fragment):
        import_labelled_csv(path)


def test_csv_label_above_class_count(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f1,label\n1.0,5\n")
    with pytest.raises(DatasetImportError, match="outside 1..4"):
        import_labelled_csv(path, n_classes=4)


def test_csv_dimension_check(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,label\n1,2,1\n")
    with pytest.raises(DatasetImportError, match="expected 4"):
        import_labelled_csv(path, expected_dims=4)


def test_derive_damage_split():
    n = 3932
    d = Dataset(np.zeros((n, 1)), np.ones(n, dtype=int), 4)
    out = derive_damage_split(d)
    # observation 3476 (1-based) is the first damaged one
    assert out.labels[3474] == 1 and out.labels[3475] == 3
    n_dmg = n - 3475
    assert np.sum(out.labels == 3) == n_dmg // 2
    assert np.sum(out.labels == 4) == n_dmg - n_dmg // 2
    assert out.labels[-1] == 4


def test_split_sizes_synthetic():
    d = generate_synthetic(SyntheticConfig())
    lab, pool, test = split_and_init(d, 0.5, 0.002, 0)
    assert len(lab) == round(0.002 * (len(d) - len(test)))
    assert len(test) == 5998 and len(lab) == 12 and len(pool) == 5999 - 12


def test_split_errors():
    d = generate_synthetic(small_config())
    with pytest.raises(SplitError):
        split_and_init(d, 0.5, 1.0, 0)
    with pytest.raises(SplitError):
        split_and_init(d, 0.5, 1e-6, 0)
    with pytest.raises(SplitError):
        split_and_init(d, 0.0, 0.5, 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), tf=st.floats(0.1, 0.9), lf=st.floats(0.05, 0.5))
def test_partition_and_hidden_labels(seed, tf, lf):
    d = generate_synthetic(small_config(seed=seed % 1000))
    try:
        lab, pool, test = split_and_init(d, tf, lf, seed)
    except SplitError:
        return
    assert len(lab) + len(pool) + len(test) == len(d)
    t_all = np.concatenate([lab.time_index, pool.time_index, test.time_index])
    assert np.array_equal(np.sort(t_all), d.time_index)
    assert np.all(np.diff(pool.time_index) > 0)
    np.testing.assert_array_equal(pool.hidden_labels(), d.labels[pool.time_index])
    assert all(pool.reveal(i) == d.labels[t] for i, t in enumerate(pool.time_index))
    np.testing.assert_array_equal(lab.labels, d.labels[lab.time_index])


def test_standardize_uses_training_statistics():
    d = generate_synthetic(small_config())
    lab, pool, test = split_and_init(d, 0.5, 0.2, 1)
    l2, p2, t2 = standardize(lab, pool, test)
    train = np.vstack([l2.features, p2.features])
    np.testing.assert_allclose(train.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(train.std(axis=0), 1, atol=1e-12)
    np.testing.assert_array_equal(p2.hidden_labels(), pool.hidden_labels())
