import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gzsl.data import (
    BENCHMARKS,
    Dataset,
    DatasetError,
    SynthSpec,
    check_benchmark_metadata,
    class_counts,
    import_csv,
    l2_normalize,
    load_dataset,
    save_dataset,
    synth_benchmark,
    synth_prototypes,
    validate_splits,
    with_val_classes,
)


def tiny():
    return Dataset.build(
        visual=np.arange(12.0).reshape(6, 2), labels=[0, 0, 1, 1, 2, 2], semantic=np.eye(3),
        seen_classes=[0, 1], unseen_classes=[2], train_idx=[0, 2], test_seen_idx=[1, 3],
        test_unseen_idx=[4, 5])


def test_tiny_is_valid():
    assert validate_splits(tiny()) == []


def test_overlapping_splits_are_named():
    ds = replace(tiny(), test_seen_idx=np.array([1, 2]))
    assert "index 2 appears in both train_idx and test_seen_idx" in validate_splits(ds)


def test_zsl_constraint():
    ds = replace(tiny(), train_idx=np.array([0, 2, 4]), test_unseen_idx=np.array([5]))
    assert any("ZSL constraint violated" in m and "[2]" in m for m in validate_splits(ds))


def test_class_set_problems():
    ds = replace(tiny(), unseen_classes=np.array([1, 2]))
    msgs = validate_splits(ds)
    assert any("both seen and unseen" in m for m in msgs)
    ds = replace(tiny(), semantic=np.eye(4))
    assert any("rows without a class set [3]" in m for m in validate_splits(ds))
    ds = replace(tiny(), val_classes=np.array([2]))
    assert any("val_classes" in m for m in validate_splits(ds))


def test_class_counts():
    ds = tiny()
    assert class_counts(ds) == {0: 2, 1: 2, 2: 2}
    assert class_counts(ds, ds.train_idx) == {0: 1, 1: 1, 2: 0}


def _benchmark_shaped(n_seen, n_unseen, n_train, n_test_unseen, n_test_seen, **_):
    C = n_seen + n_unseen
    train_lab = np.arange(n_train) % n_seen
    test_s_lab = np.arange(n_test_seen) % n_seen
    test_u_lab = n_seen + np.arange(n_test_unseen) % n_unseen
    labels = np.concatenate([train_lab, test_s_lab, test_u_lab])
    n = len(labels)
    return Dataset.build(np.zeros((n, 1)), labels, np.zeros((C, 1)), range(n_seen), range(n_seen, C),
                         np.arange(n_train), np.arange(n_train, n_train + n_test_seen),
                         np.arange(n_train + n_test_seen, n))


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_benchmark_metadata_table(name):
    ds = _benchmark_shaped(**BENCHMARKS[name])
    assert validate_splits(ds) == []
    assert check_benchmark_metadata(ds, name) == []
    short = replace(ds, train_idx=ds.train_idx[:-1])
    assert check_benchmark_metadata(short, name) == [
        f"n_train: expected {BENCHMARKS[name]['n_train']}, found {BENCHMARKS[name]['n_train'] - 1}"]


def test_benchmark_table_values():
    # class split sums and sample counts of the standard benchmarks
    assert BENCHMARKS["CUB"]["n_seen"] == 100 + BENCHMARKS["CUB"]["n_val"]
    assert BENCHMARKS["SUN"]["n_seen"] == 580 + BENCHMARKS["SUN"]["n_val"]
    assert BENCHMARKS["AWA1"]["n_seen"] == 27 + BENCHMARKS["AWA1"]["n_val"]
    assert BENCHMARKS["AWA2"]["n_seen"] == 27 + BENCHMARKS["AWA2"]["n_val"]
    assert (BENCHMARKS["CUB"]["n_train"], BENCHMARKS["CUB"]["n_test_unseen"], BENCHMARKS["CUB"]["n_test_seen"]) \
        == (7057, 1764, 2967)


def test_l2_normalize():
    ds = l2_normalize(tiny())
    np.testing.assert_allclose(np.linalg.norm(ds.visual, axis=1)[1:], 1.0)


def test_with_val_classes_is_seeded_and_seen_only():
    ds = synth_benchmark(SynthSpec())
    a, b = with_val_classes(ds, 3), with_val_classes(ds, 3)
    assert a.val_classes.tolist() == b.val_classes.tolist()
    assert len(a.val_classes) == 2 and set(a.val_classes) <= set(ds.seen_classes)
    assert validate_splits(a) == []
    assert with_val_classes(a, 99).val_classes.tolist() == a.val_classes.tolist()


# ------------------------------------------------------------------ I/O

def test_binary_round_trip(tmp_path):
    ds = with_val_classes(synth_benchmark(SynthSpec(n_seen_classes=3, n_unseen_classes=2, samples_per_class=5,
                                                    test_per_class=2)), 0)
    save_dataset(ds, tmp_path / "d")
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == [
        "labels.u32bin", "semantic.f32bin", "splits.json", "visual.f32bin"]
    assert load_dataset(tmp_path / "d").equals(ds)


def test_binary_headers(tmp_path):
    save_dataset(tiny(), tmp_path)
    raw = (tmp_path / "visual.f32bin").read_bytes()
    assert raw[:4] == b"FEAT" and np.frombuffer(raw[4:12], "<u4").tolist() == [6, 2]
    assert len(raw) == 12 + 4 * 12
    raw = (tmp_path / "labels.u32bin").read_bytes()
    assert raw[:4] == b"LABL" and np.frombuffer(raw[8:], "<u4").tolist() == [0, 0, 1, 1, 2, 2]


def test_load_errors(tmp_path):
    save_dataset(tiny(), tmp_path)
    (tmp_path / "visual.f32bin").write_bytes(b"JUNK" + (tmp_path / "visual.f32bin").read_bytes()[4:])
    with pytest.raises(DatasetError, match="magic"):
        load_dataset(tmp_path)
    save_dataset(tiny(), tmp_path)
    (tmp_path / "visual.f32bin").write_bytes((tmp_path / "visual.f32bin").read_bytes()[:-4])
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    save_dataset(tiny(), tmp_path)
    (tmp_path / "splits.json").unlink()
    with pytest.raises(DatasetError, match="missing"):
        load_dataset(tmp_path)


def test_load_rejects_invalid_splits(tmp_path):
    save_dataset(tiny(), tmp_path)
    splits = json.loads((tmp_path / "splits.json").read_text())
    splits["train_idx"].append(4)
    splits["test_unseen_idx"] = [5]
    (tmp_path / "splits.json").write_text(json.dumps(splits))
    with pytest.raises(DatasetError, match="ZSL constraint"):
        load_dataset(tmp_path)


def test_import_csv(tmp_path):
    ds = tiny()
    np.savetxt(tmp_path / "v.csv", ds.visual, delimiter=",")
    np.savetxt(tmp_path / "l.csv", ds.labels, delimiter=",", fmt="%d")
    np.savetxt(tmp_path / "s.csv", ds.semantic, delimiter=",")
    (tmp_path / "splits.json").write_text(json.dumps({k: getattr(ds, k).tolist() for k in (
        "seen_classes", "unseen_classes", "train_idx", "test_seen_idx", "test_unseen_idx")}))
    back = import_csv(tmp_path / "v.csv", tmp_path / "l.csv", tmp_path / "s.csv", tmp_path / "splits.json")
    assert back.equals(ds)


# ------------------------------------------------------------------ synthetic

def test_synth_default_shape_and_validity():
    ds = synth_benchmark(SynthSpec())
    d = ds.describe()
    assert (d["n_seen"], d["n_unseen"], d["visual_dim"], d["semantic_dim"]) == (8, 4, 32, 8)
    assert class_counts(ds, ds.train_idx) == {c: (50 if c < 8 else 0) for c in range(12)}
    assert validate_splits(ds) == []


def test_synth_is_deterministic_and_float32_exact():
    a, b = synth_benchmark(SynthSpec(seed=4)), synth_benchmark(SynthSpec(seed=4))
    assert a.equals(b)
    np.testing.assert_array_equal(a.visual, a.visual.astype(np.float32))
    assert not a.equals(synth_benchmark(SynthSpec(seed=5)))


def test_synth_means_follow_semantics():
    spec = SynthSpec(cluster_spread=0.01)
    semantic, means = synth_prototypes(spec)
    d = np.linalg.norm(means[:, None] - means[None], axis=2)
    assert d[np.triu_indices(12, 1)].min() == pytest.approx(spec.separation)
    assert means.min() == pytest.approx(4 * spec.cluster_spread)
    ds = synth_benchmark(spec)
    for c in range(12):
        np.testing.assert_allclose(ds.visual[ds.labels == c].mean(0), means[c], atol=0.01)
    # class means are an affine image of the semantic rows
    X = np.hstack([semantic, np.ones((12, 1))])
    coef, *_ = np.linalg.lstsq(X, means, rcond=None)
    np.testing.assert_allclose(X @ coef, means, atol=1e-9)


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_synth_splits_always_valid(n_seen, n_unseen, seed):
    ds = synth_benchmark(SynthSpec(n_seen_classes=n_seen, n_unseen_classes=n_unseen, samples_per_class=3,
                                   test_per_class=2, visual_dim=4, semantic_dim=3, seed=seed))
    assert validate_splits(ds) == []


def test_synth_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        SynthSpec(n_unseen_classes=0)
    with pytest.raises(ValueError):
        SynthSpec(cluster_spread=0.0)


def test_nearest_prototype_oracle():
    spec = SynthSpec()
    assert (spec.cluster_spread, spec.separation) == (0.1, 1.0)
    _, means = synth_prototypes(spec)
    ds = synth_benchmark(spec)
    nearest = np.linalg.norm(ds.visual[:, None] - means[None], axis=2).argmin(1)
    per_class = [(nearest[ds.labels == c] == c).mean() for c in range(12)]
    assert min(per_class) > 0.95


def test_class_counts_edge_cases():
    ds = synth_benchmark(SynthSpec())
    assert set(class_counts(ds, ds.test_unseen_idx).values()) == {0, 20}
    test = np.concatenate([ds.test_seen_idx, ds.test_unseen_idx])
    assert set(class_counts(ds, test).values()) == {20}
    assert set(class_counts(ds, []).values()) == {0}
    assert sum(class_counts(_benchmark_shaped(**BENCHMARKS["CUB"]), _benchmark_shaped(
        **BENCHMARKS["CUB"]).test_unseen_idx).values()) == 1764
