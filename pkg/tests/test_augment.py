import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wellcast.augment import (HORIZONTAL, VERTICAL, AugmentConfig, SplitSpec, apply_blur, apply_flip,
                              apply_noise, apply_rotation, expand_dataset, source_of, train_count)
from wellcast.errors import ShapeMismatch, UnknownWell
from wellcast.metrics import population_curve
from wellcast.video import ColorSpace, Split, Video, WellRecord

videos = st.integers(0, 2**31).map(lambda s: Video(np.random.default_rng(s).uniform(size=(3, 6, 6, 3))))


def _records(n, size=6, frames=3):
    rng = np.random.default_rng(n)
    return [WellRecord(f"W{i:03d}", Video(rng.uniform(size=(frames, size, size, 3)), ColorSpace.HSV), Split.RAW)
            for i in range(n)]


@given(videos, st.sampled_from([HORIZONTAL, VERTICAL]))
@settings(max_examples=30)
def test_flip_is_an_involution(v, axis):
    assert apply_flip(apply_flip(v, axis), axis).data.tobytes() == v.data.tobytes()


def test_horizontal_flip_maps_columns():
    data = np.zeros((1, 4, 5, 3))
    data[0, 1, 1] = 1.0
    out = apply_flip(Video(data), HORIZONTAL).data
    assert out[0, 1, 5 - 1 - 1, 0] == 1.0 and out.sum() == 3.0


@given(videos)
@settings(max_examples=30)
def test_rotation_group_identities(v):
    r = v
    for _ in range(4):
        r = apply_rotation(r, 90)
    assert r.data.tobytes() == v.data.tobytes()
    both = apply_flip(apply_flip(v, HORIZONTAL), VERTICAL)
    assert apply_rotation(v, 180).data.tobytes() == both.data.tobytes()


@given(videos, st.sampled_from(["h", "v", 90, 180, 270]))
@settings(max_examples=40)
def test_permutations_preserve_channel_sums_and_population(v, op):
    out = apply_flip(v, HORIZONTAL if op == "h" else VERTICAL) if op in ("h", "v") else apply_rotation(v, op)
    np.testing.assert_array_equal(np.sort(out.data.ravel()), np.sort(v.data.ravel()))
    a, b = population_curve(v), population_curve(out)
    np.testing.assert_allclose(a.green, b.green, rtol=1e-12)
    np.testing.assert_allclose(a.red, b.red, rtol=1e-12)


def test_rotation_needs_square_frames():
    with pytest.raises(ShapeMismatch):
        apply_rotation(Video(np.zeros((1, 4, 5, 3))), 90)


def test_blur_zero_is_identity_and_constants_survive():
    v = Video(np.random.default_rng(0).uniform(size=(2, 8, 8, 3)))
    assert apply_blur(v, 0).data.tobytes() == v.data.tobytes()
    const = Video(np.full((1, 9, 9, 3), 0.37))
    np.testing.assert_allclose(apply_blur(const, 1.3).data, 0.37, atol=1e-9)


def test_blur_impulse_centre_matches_direct_summation():
    data = np.zeros((1, 15, 15, 3))
    data[0, 7, 7] = 1.0
    out = apply_blur(Video(data), 1.0).data[0, 7, 7, 0]
    r = 3  # ceil(3 sigma)
    weights = np.array([[math.exp(-(i * i + j * j) / 2.0) for j in range(-r, r + 1)] for i in range(-r, r + 1)])
    assert out == pytest.approx(weights[r, r] / weights.sum(), rel=1e-12)


@given(videos, st.floats(0.2, 1.5))
@settings(max_examples=30)
def test_blur_preserves_sums_and_range(v, sigma):
    if math.ceil(3 * sigma) >= 6:
        return
    out = apply_blur(v, sigma).data
    assert out.min() >= 0 and out.max() <= 1
    np.testing.assert_allclose(out.sum(axis=(1, 2)), v.data.sum(axis=(1, 2)), atol=1e-6)


def test_noise_identity_determinism_and_mean():
    v = Video(np.full((4, 16, 16, 3), 0.5))
    assert apply_noise(v, 0, np.random.default_rng(0)).data.tobytes() == v.data.tobytes()
    a = apply_noise(v, 0.05, np.random.default_rng(3)).data
    b = apply_noise(v, 0.05, np.random.default_rng(3)).data
    assert a.tobytes() == b.tobytes()
    n = a.size
    assert abs(a.mean() - 0.5) <= 3 * 0.05 / math.sqrt(n)
    assert a.min() >= 0 and a.max() <= 1


def test_default_multiplicity_is_eight():
    cfg = AugmentConfig()
    assert cfg.multiplicity == 8
    assert cfg.transforms()[0] == "identity"


def test_44_wells_leave_320_augmented_records():
    recs = _records(44)
    test_ids = ("W000", "W010", "W020", "W030")
    m = expand_dataset(recs, AugmentConfig(seed=1), SplitSpec(0.8, test_ids))
    counts = m.split_counts()
    assert counts["test"] == 4 and counts["train"] + counts["valid"] == 320
    assert train_count(352, 0.8) == 282 and train_count(320, 0.8) == 256


def test_352_records_split_282_70():
    recs = _records(48)
    test_ids = tuple(f"W{i:03d}" for i in (3, 17, 29, 41))
    m = expand_dataset(recs, AugmentConfig(seed=0), SplitSpec(0.8, test_ids))
    assert len(m.by_split(Split.TRAIN)) + len(m.by_split(Split.VALID)) == 352
    assert (len(m.by_split(Split.TRAIN)), len(m.by_split(Split.VALID))) == (282, 70)


def test_identity_only_keeps_well_count():
    cfg = AugmentConfig(flips=(), rotations=(), blur_sigma=0, noise_sigma=0)
    assert cfg.multiplicity == 1
    m = expand_dataset(_records(10), cfg, SplitSpec(0.8))
    assert len(m.by_split(Split.TRAIN)) + len(m.by_split(Split.VALID)) == 10


def test_split_is_deterministic_and_seed_dependent():
    recs = _records(12)
    ids = lambda m: [(r.well_id, r.split.value) for r in m.records]
    a = expand_dataset(recs, AugmentConfig(seed=4), SplitSpec(0.8, ("W001",)))
    b = expand_dataset(recs, AugmentConfig(seed=4), SplitSpec(0.8, ("W001",)), workers=2)
    c = expand_dataset(recs, AugmentConfig(seed=5), SplitSpec(0.8, ("W001",)))
    assert ids(a) == ids(b) and ids(a) != ids(c)
    for ra, rb in zip(a.records, b.records):
        assert ra.video.data.tobytes() == rb.video.data.tobytes()


def test_no_test_contamination():
    recs = _records(10)
    test_ids = {"W002", "W007"}
    m = expand_dataset(recs, AugmentConfig(), SplitSpec(0.8, tuple(test_ids)))
    for r in m.records:
        if r.split is Split.TEST:
            assert r.well_id in test_ids and not r.lineage
        else:
            assert source_of(r) not in test_ids and r.lineage[0].startswith("source=")
    # held-out pixels pass through untouched
    assert m.get("W002").video.data.tobytes() == recs[2].video.data.tobytes()


def test_unknown_test_well():
    with pytest.raises(UnknownWell):
        expand_dataset(_records(3), AugmentConfig(), SplitSpec(0.8, ("nope",)))


def test_mixed_shapes_rejected():
    recs = _records(2) + [WellRecord("odd", Video(np.zeros((3, 5, 5, 3))), Split.RAW)]
    with pytest.raises(ShapeMismatch):
        expand_dataset(recs, AugmentConfig(), SplitSpec())


@given(st.integers(1, 400), st.floats(0.05, 0.95))
def test_train_count_within_one_record(n, frac):
    k = train_count(n, frac)
    assert abs(k - frac * n) <= 1 and k >= frac * n - 1e-6


def test_every_op_keeps_unit_range():
    v = Video(np.random.default_rng(0).uniform(size=(2, 8, 8, 3)))
    for r in expand_dataset([WellRecord("a", v, Split.RAW)], AugmentConfig(noise_sigma=0.3), SplitSpec()).records:
        assert r.video.data.min() >= 0 and r.video.data.max() <= 1
