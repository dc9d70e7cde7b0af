import numpy as np
import pytest

from hyrep import data


def train_with_markers(spikes, ao_start=3.0):
    return data.SpikeTrain(
        (np.asarray(spikes, dtype=float),),
        duration=8.0,
        markers={"prompt": 0.5, "go": 2.0, "ao_start": ao_start, "ao_end": 4.0, "end": 8.0},
    )


# -- segmentation -------------------------------------------------------


def test_segment_window_edges():
    seg = data.segment_trial(train_with_markers([2.4, 2.5, 3.7, 4.49, 4.5]))
    # [2.5, 4.5) kept and re-zeroed: 2.4 and 4.5 fall outside
    np.testing.assert_allclose(seg.units[0], [0.0, 1.2, 1.99])
    assert seg.duration == 2.0


def test_segment_requires_ao_marker():
    st = data.SpikeTrain((np.array([1.0]),), duration=5.0)
    with pytest.raises(ValueError):
        data.segment_trial(st)


def test_spike_train_validation():
    with pytest.raises(ValueError):
        data.SpikeTrain((np.array([2.0, 1.0]),), duration=5.0)  # not ascending
    with pytest.raises(ValueError):
        data.SpikeTrain(
            (np.array([1.0]),),
            duration=5.0,
            markers={"go": 3.0, "ao_start": 2.0, "end": 5.0},
        )


# -- binning ------------------------------------------------------------


def test_bin_no_spikes():
    st = data.SpikeTrain((np.array([]), np.array([])), duration=2.0)
    counts = data.bin_spikes(st)
    assert counts.shape == (2, 77)
    assert not counts.any()


def test_bin_hand_counts():
    st = data.SpikeTrain((np.array([0.01, 0.05, 0.12]),), duration=0.2)
    np.testing.assert_array_equal(data.bin_spikes(st), [[2, 2, 2, 1, 1]])


def test_bin_77_columns_for_two_seconds():
    st = data.SpikeTrain((np.array([0.5]),), duration=2.0)
    assert data.bin_spikes(st).shape[1] == 77


def test_bin_rejects_short_segment():
    st = data.SpikeTrain((np.array([0.01]),), duration=0.05)
    with pytest.raises(ValueError):
        data.bin_spikes(st)


def test_bin_conservation_when_non_overlapping():
    rng = np.random.default_rng(0)
    spikes = np.sort(rng.uniform(0, 2.0, 200))
    st = data.SpikeTrain((spikes,), duration=2.0)
    counts = data.bin_spikes(st, window=0.1, stride=0.1)
    covered = spikes < counts.shape[1] * 0.1
    assert counts.sum() == covered.sum()


def test_bin_overlap_multiplicity():
    # window/stride = 4: interior spikes appear in exactly 4 bins
    st = data.SpikeTrain((np.array([1.0]),), duration=2.0)
    assert data.bin_spikes(st).sum() == 4
    edge = data.SpikeTrain((np.array([0.01]),), duration=2.0)
    assert data.bin_spikes(edge).sum() == 1


# -- taxonomy -----------------------------------------------------------


def test_consonant21_classes():
    tax = data.builtin_taxonomy("consonant21")
    assert len(tax.classes) == 21
    assert tax.group_of["g"] == tax.group_of["k"] == "TDS"
    assert tax.tag_of["g"] == tax.tag_of["k"] == "PL"


def test_consonant21_partition_sizes():
    tax = data.builtin_taxonomy("consonant21")
    group_sizes = [len(cs) for _, cs in tax.groups]
    manner_sizes = [len(cs) for _, cs in tax.tags]
    assert sum(group_sizes) == sum(manner_sizes) == 21
    # every consonant in exactly one group and one manner
    assert len(tax.group_of) == len(tax.tag_of) == 21


def test_lip_groups_adjacent_in_planted_tree():
    tree = data.builtin_taxonomy("consonant21").planted_tree()
    assert frozenset(["b", "p", "m", "f"]) in tree.clades()


def test_vowel_taxonomy():
    tax = data.builtin_taxonomy("vowel_mouth4", classes_per_group=3)
    assert [g for g, _ in tax.groups] == ["OM", "ET", "RM", "CM"]
    assert len(tax.classes) == 12


def test_unknown_taxonomy_kind():
    with pytest.raises(ValueError):
        data.builtin_taxonomy("tone5")


def test_taxonomy_validation():
    with pytest.raises(ValueError):
        data.Taxonomy("bad", (("G1", ("a", "b")), ("G2", ("b",))))
    with pytest.raises(ValueError):
        data.Taxonomy("bad", (("G1", ("a", "b")),), (("T1", ("a",)),))


# -- synthetic generator ------------------------------------------------


TOY = data.Taxonomy("toy", (("A", ("A1", "A2")), ("B", ("B1", "B2"))))


def test_synthetic_zero_noise_identical_trials():
    spec = data.SyntheticSpec(TOY, trials_per_class=4, feature_dim=6, noise_sigma=0.0, seed=1)
    ds = data.generate_synthetic(spec)
    for label in range(4):
        rows = ds.features[ds.labels == label]
        assert np.ptp(rows, axis=0).max() == 0.0


def test_synthetic_same_seed_same_bytes():
    spec = data.SyntheticSpec(TOY, trials_per_class=3, feature_dim=5, seed=2)
    a = data.dataset_bytes(data.generate_synthetic(spec))
    b = data.dataset_bytes(data.generate_synthetic(spec))
    assert a == b


def test_synthetic_group_structure_in_means():
    within, across = [], []
    for seed in range(100):
        spec = data.SyntheticSpec(TOY, trials_per_class=1, feature_dim=10, noise_sigma=0.0, seed=seed)
        ds = data.generate_synthetic(spec)
        m = ds.features
        within.append(np.linalg.norm(m[0] - m[1]) + np.linalg.norm(m[2] - m[3]))
        across.append(np.linalg.norm(m[0] - m[2]) + np.linalg.norm(m[1] - m[3]))
    assert np.mean(within) < np.mean(across)


def test_synthetic_separability_monotone_in_scale_ratio():
    def nearest_mean_accuracy(noise):
        spec = data.SyntheticSpec(TOY, trials_per_class=10, feature_dim=10, noise_sigma=noise, seed=5)
        ds = data.generate_synthetic(spec)
        means = np.stack([ds.features[ds.labels == k].mean(axis=0) for k in range(4)])
        d = np.linalg.norm(ds.features[:, None, :] - means[None], axis=-1)
        return (np.argmin(d, axis=1) == ds.labels).mean()

    accs = [nearest_mean_accuracy(s) for s in (8.0, 2.0, 0.5)]
    assert accs[0] <= accs[1] <= accs[2]


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        data.SyntheticSpec(TOY, trials_per_class=0)
    with pytest.raises(ValueError):
        data.SyntheticSpec(TOY, level_scales=(1.0, 2.0))  # increasing with depth
    with pytest.raises(ValueError):
        data.SyntheticSpec(TOY, noise_sigma=-1.0)


# -- dataset io ---------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    spec = data.SyntheticSpec(TOY, trials_per_class=2, feature_dim=4, seed=3)
    ds = data.generate_synthetic(spec)
    path = tmp_path / "ds.json"
    data.save_dataset(ds, path)
    back = data.load_dataset(path)
    assert data.dataset_bytes(back) == data.dataset_bytes(ds)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_load_rejects_missing_label(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(
        '{"meta": {"n_units": 1, "n_bins": 2, "classes": ["a"], "dtype": "int"},'
        ' "trials": [{"counts": [1, 2]}]}'
    )
    with pytest.raises(ValueError, match="label"):
        data.load_dataset(path)


def test_load_rejects_negative_count(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(
        '{"meta": {"n_units": 1, "n_bins": 2, "classes": ["a"], "dtype": "int"},'
        ' "trials": [{"label": "a", "counts": [1, -2]}]}'
    )
    with pytest.raises(ValueError, match=r"counts\[1\]"):
        data.load_dataset(path)


def test_load_reports_json_error_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\n  broken\n}")
    with pytest.raises(ValueError, match="line 2"):
        data.load_dataset(path)


# -- csv ingestion ------------------------------------------------------


def write_recording(tmp_path):
    spikes = tmp_path / "spikes.csv"
    markers = tmp_path / "markers.csv"
    spikes.write_text(
        "unit,timestamp\n"
        "u1,2.6\nu1,3.1\nu1,9.0\n"
        "u2,2.4\nu2,8.6\n"
    )
    markers.write_text(
        "trial,prompt,go,ao_start,ao_end,end\n"
        "t1,0.5,2.0,3.0,4.0,6.0\n"
        "t2,6.5,8.0,9.0,10.0,12.0\n"
    )
    return spikes, markers


def test_ingest_recording(tmp_path):
    spikes, markers = write_recording(tmp_path)
    ds = data.ingest_spike_recording(spikes, markers, labels={"t1": "ba", "t2": "pa"})
    assert ds.classes == ("ba", "pa")
    assert ds.n_units == 2 and ds.n_bins == 77
    # trial t1 window [2.5, 4.5): u1 spikes at 2.6, 3.1; u2 spike at 2.4 excluded
    t1 = ds.features[list(ds.labels).index(ds.classes.index("ba"))]
    assert t1.reshape(2, 77)[0].sum() == 8  # 2 spikes x 4 overlapping bins
    assert t1.reshape(2, 77)[1].sum() == 0


def test_ingest_rejects_wrong_header(tmp_path):
    bad = tmp_path / "spikes.csv"
    bad.write_text("neuron,time\nu1,2.6\n")
    with pytest.raises(ValueError, match="header"):
        data.load_spike_csv(bad)


def test_marker_csv_parses_all_fields(tmp_path):
    _, markers = write_recording(tmp_path)
    rows = data.load_marker_csv(markers)
    assert [t for t, _ in rows] == ["t1", "t2"]
    assert rows[0][1]["ao_start"] == 3.0


def test_marker_csv_rejects_bad_value(tmp_path):
    bad = tmp_path / "markers.csv"
    bad.write_text("trial,prompt,go,ao_start,ao_end,end\nt1,a,2,3,4,6\n")
    with pytest.raises(ValueError, match="marker"):
        data.load_marker_csv(bad)


def test_dataset_validation():
    with pytest.raises(ValueError):
        data.Dataset(("a",), np.zeros((2, 3)), np.zeros(2, dtype=int), n_units=2, n_bins=2)
    with pytest.raises(ValueError):
        data.Dataset(("a",), -np.ones((1, 2)), np.zeros(1, dtype=int), n_units=1, n_bins=2)
    with pytest.raises(ValueError):
        data.Dataset(("a",), np.ones((1, 2)), np.array([1]), n_units=1, n_bins=2)
