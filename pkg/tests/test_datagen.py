import math

import numpy as np
import pytest

from tresdiag.datagen import (CLASSES, BreakSpec, GeneratorConfig, TransientCase, channel_catalog,
                              generate_case, generate_dataset, load_dataset, pressure_fraction,
                              pump_onset_time, save_dataset)
from tresdiag.errors import ConfigError, DatasetLoadError, ValidationError

from conftest import make_case


def row(case, name):
    return case.values[case.names.index(name)]


def crossing_time(t, y, level):
    """First time y falls to ``level``, linearly interpolated between samples."""
    idx = int(np.argmax(y <= level))
    if y[idx] > level:
        return math.inf
    if idx == 0:
        return t[0]
    t0, t1, y0, y1 = t[idx - 1], t[idx], y[idx - 1], y[idx]
    return t0 + (y0 - level) / (y0 - y1) * (t1 - t0)


def drop_onset(t, y, tol=1e-9):
    below = np.flatnonzero(y < y[0] - tol)
    return t[below[0]] if below.size else math.inf


def mutual_information_bits(x, labels, bins=8):
    edges = np.histogram_bin_edges(x, bins=bins)
    xi = np.clip(np.digitize(x, edges[1:-1]), 0, bins - 1)
    joint = np.zeros((bins, 2))
    for a, b in zip(xi, labels):
        joint[a, b] += 1
    joint /= joint.sum()
    px, py = joint.sum(1, keepdims=True), joint.sum(0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log2(joint[nz] / (px @ py)[nz])))


# --- catalog ---------------------------------------------------------------------

def test_default_catalog():
    cat = channel_catalog()
    names = [c.name for c in cat]
    assert len(cat) == 38 and len(set(names)) == 38
    assert sum(c.informative for c in cat) >= 18
    assert sum(not c.informative for c in cat) >= 12
    for anchor in ("voidf_811010000", "pmpvel_235", "p_155010000"):
        spec = next(c for c in cat if c.name == anchor)
        assert spec.informative


def test_catalog_without_decoys_is_all_informative():
    cfg = GeneratorConfig()
    cfg = GeneratorConfig(decoy_counts={k: 0 for k in cfg.decoy_counts},
                          n_channels=sum(cfg.informative_counts.values()))
    assert all(c.informative for c in channel_catalog(cfg))


def test_catalog_count_mismatch_rejected():
    with pytest.raises(ConfigError):
        channel_catalog(GeneratorConfig(n_channels=40))


def test_catalog_is_deterministic():
    assert channel_catalog() == channel_catalog()


# --- generation laws --------------------------------------------------------------

def test_break_spec_validation():
    with pytest.raises(ValidationError):
        BreakSpec("cold_leg", 0.0)
    with pytest.raises(ValidationError):
        BreakSpec("cold_leg", 1.5)
    with pytest.raises(ValidationError):
        BreakSpec("surge_line", 0.5)
    assert BreakSpec("hot_leg", 1.0).class_index == CLASSES.index("hot_leg")


def test_case_shape_and_steady_state():
    case = make_case(0.4, "hot_leg", seed=9)
    assert case.values.shape == (38, 200)
    assert np.all(np.isfinite(case.values))
    np.testing.assert_allclose(case.times[:3], [0.0, 0.5, 1.0])
    clean = generate_case(channel_catalog(GeneratorConfig(noise_level=0.0)), case.label, 9)
    for spec, got, ref in zip(channel_catalog(), case.values, clean.values):
        if spec.informative:
            assert abs(got[0] - ref[0]) <= 5 * spec.noise + 1e-12, spec.name


def test_vanishing_break_keeps_pressure_at_steady_state():
    case = make_case(1e-6, "cold_leg", seed=2)
    spec = next(c for c in channel_catalog() if c.name == "p_155010000")
    p = row(case, "p_155010000")
    assert np.max(np.abs(p - 15.5)) <= 5 * spec.noise


def test_larger_break_depressurizes_faster():
    small, large = make_case(0.3, seed=4), make_case(0.8, seed=4)
    t50 = 100  # sample index of t = 50 s
    assert row(large, "p_155010000")[t50] < row(small, "p_155010000")[t50]


def test_pump_drop_earlier_for_cold_leg():
    assert pump_onset_time(0.5, "cold_leg") < pump_onset_time(0.5, "hot_leg")
    clean = GeneratorConfig(noise_level=0.0)
    cold = make_case(0.5, "cold_leg", seed=1, config=clean)
    hot = make_case(0.5, "hot_leg", seed=1, config=clean)
    assert drop_onset(cold.times, row(cold, "pmpvel_235")) < drop_onset(hot.times, row(hot, "pmpvel_235"))


def test_sit_not_triggered_for_small_breaks():
    clean = GeneratorConfig(noise_level=0.0)
    small = make_case(0.05, "hot_leg", seed=1, config=clean)
    level = row(small, "voidf_811010000")
    assert np.all(level == level[0])
    large = make_case(0.9, "cold_leg", seed=1, config=clean)
    assert row(large, "voidf_811010000")[-1] != row(large, "voidf_811010000")[0]


def test_monotonicity_oracle():
    """Time to 90 % of initial pressure falls strictly with diameter (equal seeds)."""
    diameters = np.geomspace(0.05, 1.0, 20)
    times = []
    for d in diameters:
        case = make_case(float(d), "cold_leg", seed=17)
        p = row(case, "p_155010000")
        times.append(crossing_time(case.times, p, 0.9 * 15.5))
    assert all(a > b for a, b in zip(times, times[1:]))


def test_separability_oracle():
    clean = GeneratorConfig(noise_level=0.0)
    rng = np.random.default_rng(0)
    onsets, labels = [], []
    for i in range(200):
        loc = CLASSES[i % 2]
        case = make_case(float(np.exp(rng.uniform(np.log(0.05), 0.0))), loc, seed=i, config=clean)
        onsets.append(drop_onset(case.times, row(case, "pmpvel_235")))
        labels.append(i % 2)
    onsets, labels = np.array(onsets), np.array(labels)
    best = max(np.mean((onsets > thr) == labels) for thr in np.unique(onsets))
    assert best >= 0.95


def test_location_does_not_change_decoys():
    a, b = make_case(0.5, "cold_leg", seed=3), make_case(0.9, "hot_leg", seed=3)
    for spec, ra, rb in zip(channel_catalog(), a.values, b.values):
        if not spec.informative:
            np.testing.assert_array_equal(ra, rb)


# --- dataset ----------------------------------------------------------------------

def test_default_dataset_sizes(default_dataset):
    ds = default_dataset
    assert len(ds.cases) == 346
    assert len(ds.train_cases) == 276 and len(ds.test_cases) == 70
    assert set(ds.split.values()) == {"train", "test"}
    counts = np.bincount([c.label.class_index for c in ds.cases])
    assert abs(counts[0] - counts[1]) <= 0.1 * len(ds.cases)
    d = np.array([c.label.diameter for c in ds.cases])
    assert d.min() >= 0.05 and d.max() <= 1.0


def test_decoy_independence(default_dataset):
    ds = default_dataset
    diam = np.array([c.label.diameter for c in ds.cases])
    labels = np.array([c.label.class_index for c in ds.cases])
    for i, spec in enumerate(ds.catalog):
        if spec.informative:
            continue
        means = np.array([c.values[i].mean() for c in ds.cases])
        assert abs(np.corrcoef(means, diam)[0, 1]) < 0.1, spec.name
        assert mutual_information_bits(means, labels) < 0.05, spec.name


def test_generation_is_reproducible(small_dataset):
    again = generate_dataset(small_dataset.config, seed=3)
    assert again == small_dataset
    other = generate_dataset(small_dataset.config, seed=4)
    assert other != small_dataset


def test_parallel_equals_serial(small_dataset):
    par = generate_dataset(small_dataset.config, seed=3, workers=2)
    assert par == small_dataset
    for a, b in zip(par.cases, small_dataset.cases):
        assert a.values.tobytes() == b.values.tobytes()


def test_select_reorders_rows():
    case = make_case()
    sub = case.select(["pmpvel_235", "p_155010000"])
    np.testing.assert_array_equal(sub.values[1], row(case, "p_155010000"))
    with pytest.raises(ValidationError):
        case.select(["nope"])


def test_transient_case_rejects_bad_shape():
    with pytest.raises(ValidationError):
        TransientCase(np.zeros((3, 5)), BreakSpec("cold_leg", 0.5), 0, 0, ("a", "b"))


# --- files ------------------------------------------------------------------------

def test_round_trip(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded == small_dataset
    header = (tmp_path / "cases" / "case_0000.csv").read_text().splitlines()[0]
    assert header == "time," + ",".join(small_dataset.names)


def test_saved_bytes_are_reproducible(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "a")
    save_dataset(generate_dataset(small_dataset.config, seed=3), tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_missing_case_file_names_case(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    (tmp_path / "cases" / "case_0005.csv").unlink()
    with pytest.raises(DatasetLoadError) as exc:
        load_dataset(tmp_path)
    assert exc.value.case_id == 5 and "case_0005.csv" in str(exc.value)


def test_permuted_header_rejected(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    path = tmp_path / "cases" / "case_0002.csv"
    lines = path.read_text().splitlines()
    cols = lines[0].split(",")
    cols[1], cols[2] = cols[2], cols[1]
    path.write_text("\n".join([",".join(cols)] + lines[1:]) + "\n")
    with pytest.raises(DatasetLoadError, match="header order"):
        load_dataset(tmp_path)


def test_wrong_row_count_rejected(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    path = tmp_path / "cases" / "case_0001.csv"
    path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(DatasetLoadError, match="rows"):
        load_dataset(tmp_path)


def test_missing_or_corrupt_manifest(tmp_path, small_dataset):
    with pytest.raises(DatasetLoadError, match="manifest"):
        load_dataset(tmp_path)
    save_dataset(small_dataset, tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetLoadError, match="corrupt"):
        load_dataset(tmp_path)


def test_split_restricted_loading_reads_only_requested_files(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    log = []
    ds = load_dataset(tmp_path, splits={"train"}, access_log=log)
    test_files = {f"case_{c.case_id:04d}.csv" for c in small_dataset.test_cases}
    assert not any(p.endswith(tuple(test_files)) for p in log)
    assert len(ds.cases) == len(small_dataset.train_cases)


def test_pressure_fraction_limits():
    assert pressure_fraction(0.0, 0.7, "hot_leg") == pytest.approx(1.0)
    assert pressure_fraction(1e6, 0.7, "hot_leg") == pytest.approx(0.05)
