import numpy as np
import pytest

from tools.dataset import (InteractionClass, LabeledDataset, Recording, build_dataset, truncate_recording,
                           validate_recording, window_count, window_recording)
from tools.errors import EmptyResultError, InvalidRangeError, UnlabeledRecordingError, UsageError


def test_interaction_class_encoding_is_stable():
    assert [int(c) for c in InteractionClass] == [0, 1, 2, 3]
    assert [c.slug for c in InteractionClass] == ["null", "drop", "squeeze", "handle"]
    assert InteractionClass.from_slug("Squeeze") is InteractionClass.SQUEEZE
    with pytest.raises(UsageError):
        InteractionClass.from_slug("poke")


def test_well_formed_recording_has_no_violations(recording_factory):
    assert validate_recording(recording_factory(60)) == []


def test_nan_force_reported_at_its_frame(recording_factory):
    rec = recording_factory(60)
    forces = rec.forces.copy()
    forces[5, 3] = np.nan
    violations = validate_recording(rec.replace(forces=forces))
    assert len(violations) == 1
    assert violations[0].index == 5
    assert violations[0].rule == "finite"


def test_repeated_timestamp_is_one_monotonicity_violation(recording_factory):
    rec = recording_factory(60)
    t = rec.t.copy()
    t[10] = t[9]
    violations = validate_recording(rec.replace(t=t))
    assert [(v.index, v.rule) for v in violations] == [(10, "monotonic")]


def test_backwards_step_reports_monotonic_once(recording_factory):
    rec = recording_factory(30)
    t = rec.t.copy()
    t[20] = t[18]
    violations = validate_recording(rec.replace(t=t))
    assert [(v.index, v.rule) for v in violations] == [(20, "monotonic")]


def test_negative_force_and_wrong_channel_count(recording_factory):
    rec = recording_factory(10)
    forces = rec.forces.copy()
    forces[2, 0] = -0.5
    assert [v.rule for v in validate_recording(rec.replace(forces=forces))] == ["non_negative"]

    eleven = Recording(t=rec.t, forces=np.ones((10, 11)), label=InteractionClass.NULL)
    assert [v.rule for v in validate_recording(eleven)] == ["channel_count"]


def test_jitter_beyond_twenty_percent(recording_factory):
    rec = recording_factory(20)
    t = rec.t.copy()
    t[5:] += 0.5 / 60.0
    rules = [v.rule for v in validate_recording(rec.replace(t=t))]
    assert rules == ["jitter"]


def test_empty_recording_violates_nonempty():
    rec = Recording(t=np.zeros(0), forces=np.zeros((0, 12)))
    assert [v.rule for v in validate_recording(rec)] == ["nonempty"]


def test_truncate_counts_half_open_interval(recording_factory):
    rec = recording_factory(600)
    cut = truncate_recording(rec, 2.0, 4.0)
    assert cut.n_samples == 120
    assert cut.label is rec.label
    assert cut.t[0] == pytest.approx(2.0)


def test_truncate_full_range_is_identity(recording_factory):
    rec = recording_factory(600)
    cut = truncate_recording(rec, 0.0, rec.duration_s)
    np.testing.assert_array_equal(cut.t, rec.t)
    np.testing.assert_array_equal(cut.forces, rec.forces)


def test_truncate_errors(recording_factory):
    rec = recording_factory(600)
    with pytest.raises(EmptyResultError):
        truncate_recording(rec, 100.0, 200.0)
    with pytest.raises(InvalidRangeError):
        truncate_recording(rec, 3.0, 2.0)


def test_truncate_is_idempotent_after_rebase(recording_factory):
    rec = recording_factory(600)
    once = truncate_recording(rec, 1.0, 3.0, rebase=True)
    twice = truncate_recording(truncate_recording(rec, 1.0, 3.0), 1.0, 3.0, rebase=True)
    np.testing.assert_allclose(once.t, twice.t)
    np.testing.assert_array_equal(once.forces, twice.forces)


@pytest.mark.parametrize("n, window, stride, expected", [
    (600, 60, 60, 10),
    (60, 60, 60, 1),
    (59, 60, 60, 0),
    (100, 10, 3, 31),
])
def test_window_count(n, window, stride, expected, recording_factory):
    assert window_count(n, window, stride) == expected
    observations = window_recording(recording_factory(n), window, stride)
    assert len(observations) == expected
    assert all(o.offset + window <= n for o in observations)


def test_non_overlapping_windows_partition_prefix():
    rng = np.random.default_rng(0)
    rec = Recording(t=np.arange(130) / 60.0, forces=rng.random((130, 12)), label=InteractionClass.DROP)
    observations = window_recording(rec, 20)
    joined = np.vstack([o.window for o in observations])
    np.testing.assert_array_equal(joined, rec.forces[:len(observations) * 20])


def test_window_preconditions(recording_factory):
    with pytest.raises(UsageError):
        window_recording(recording_factory(60), 1)
    with pytest.raises(UsageError):
        window_recording(recording_factory(60), 10, 0)
    unlabeled = recording_factory(60).replace(label=None)
    with pytest.raises(UnlabeledRecordingError):
        window_recording(unlabeled, 10)


def test_build_dataset_class_counts(recording_factory):
    recordings = [recording_factory(120, label=InteractionClass.NULL, recording_id="a"),
                  recording_factory(60, label=InteractionClass.HANDLE, recording_id="b")]
    dataset = build_dataset(recordings, 30)
    assert len(dataset) == 6
    assert dataset.class_counts[InteractionClass.NULL] == 4
    assert dataset.class_counts[InteractionClass.HANDLE] == 2
    assert dataset.windows.shape == (6, 30, 12)
    assert dataset.source_ids == ["a"] * 4 + ["b"] * 2


def test_dataset_rejects_mixed_window_sizes(recording_factory):
    obs = window_recording(recording_factory(60), 30) + window_recording(recording_factory(60), 20)
    with pytest.raises(UsageError):
        LabeledDataset(observations=tuple(obs), window_size=30)


def test_recording_arrays_are_read_only(recording_factory):
    rec = recording_factory(10)
    with pytest.raises(ValueError):
        rec.forces[0, 0] = 5.0
