import numpy as np
import pytest

from swarm.data import (
    SyntheticVideo,
    accuracy,
    augment_videos,
    center_crop,
    class_pattern,
    generate_dataset,
    load_dataset,
    save_dataset,
    select_frames,
    select_frames_shadow,
    select_frames_stride,
    shadow_indices,
    split_dataset,
    stride_indices,
    to_batch,
)


def test_shadow_selection_keeps_the_first_frames_and_pads():
    assert shadow_indices(10, 4) == [0, 1, 2, 3]
    assert shadow_indices(3, 5) == [0, 1, 2, 2, 2]
    frames = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(select_frames_shadow(frames, 4), frames[[0, 1, 2, 2]])


def test_stride_selection():
    assert stride_indices(10, 4) == [0, 2, 4, 6]
    assert stride_indices(12, 4) == [0, 3, 6, 9]
    assert stride_indices(3, 5) == [0, 1, 2, 2, 2]
    frames = np.arange(8.0).reshape(8, 1)
    np.testing.assert_array_equal(select_frames_stride(frames, 2)[:, 0], [0.0, 4.0])


def test_selection_validation():
    with pytest.raises(ValueError):
        shadow_indices(0, 3)
    with pytest.raises(ValueError):
        stride_indices(5, 0)
    with pytest.raises(ValueError):
        select_frames(np.zeros((3, 2)), 2, 'random')


def test_center_crop():
    frame = np.arange(15).reshape(5, 3)
    np.testing.assert_array_equal(center_crop(frame, 3), frame[1:4])
    even = np.arange(16).reshape(4, 4)
    np.testing.assert_array_equal(center_crop(even, 1), [[5]])
    with pytest.raises(ValueError):
        center_crop(frame, 4)


def test_accuracy():
    assert accuracy([0, 1, 2], [0, 1, 1]) == pytest.approx(2 / 3)
    assert accuracy(np.array([3]), np.array([3])) == 1.0
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])


def test_generate_dataset_layout_and_reproducibility():
    videos = generate_dataset(3, 5, 4, 9, 6, 0.1, seed=2)
    assert len(videos) == 15
    assert [v.label for v in videos] == [0] * 5 + [1] * 5 + [2] * 5
    assert all(4 <= len(v) <= 9 and v.feature_dim == 6 for v in videos)
    again = generate_dataset(3, 5, 4, 9, 6, 0.1, seed=2)
    for a, b in zip(videos, again):
        np.testing.assert_array_equal(a.frames, b.frames)
    other = generate_dataset(3, 5, 4, 9, 6, 0.1, seed=3)
    assert any(len(a) != len(b) or not np.array_equal(a.frames, b.frames) for a, b in zip(videos, other))


def test_noise_free_videos_follow_the_class_pattern():
    videos = generate_dataset(2, 2, 5, 5, 3, 0.0, seed=0)
    np.testing.assert_array_equal(videos[2].frames, class_pattern(1, 5, 2, 3))
    assert not np.allclose(class_pattern(0, 8, 2, 3), class_pattern(1, 8, 2, 3))


def test_generate_dataset_validation():
    with pytest.raises(ValueError):
        generate_dataset(2, 2, 0, 4, 3, 0.1, 0)
    with pytest.raises(ValueError):
        generate_dataset(2, 2, 5, 4, 3, 0.1, 0)
    with pytest.raises(ValueError):
        generate_dataset(2, 2, 2, 4, 3, -0.1, 0)
    with pytest.raises(ValueError):
        SyntheticVideo(np.zeros((0, 3)), 0)


def test_split_and_batch():
    videos = generate_dataset(2, 10, 3, 7, 4, 0.1, seed=1)
    train, test = split_dataset(videos, 15, seed=1)
    assert len(train) == 15 and len(test) == 5
    assert {id(v) for v in train}.isdisjoint({id(v) for v in test})
    again, _ = split_dataset(videos, 15, seed=1)
    assert [id(v) for v in again] == [id(v) for v in train]
    with pytest.raises(ValueError):
        split_dataset(videos, 21, seed=0)

    batch = to_batch(train, 6, 'stride', num_classes=2)
    assert batch.inputs.shape == (15, 6, 4)
    assert batch.num_classes == 2
    with pytest.raises(ValueError):
        to_batch([], 6)


def test_augmentation_keeps_originals_first():
    videos = generate_dataset(2, 3, 4, 4, 2, 0.0, seed=0)
    augmented = augment_videos(videos, 2, seed=5)
    assert len(augmented) == 18
    assert all(a is b for a, b in zip(augmented[:6], videos))
    assert [v.label for v in augmented[6:12]] == [v.label for v in videos]
    assert not np.array_equal(augmented[6].frames, videos[0].frames)


def test_dataset_file_round_trip(tmp_path):
    videos = generate_dataset(2, 3, 2, 6, 3, 0.2, seed=4)
    path = save_dataset(tmp_path / 'data' / 'videos.jsonl', videos)
    loaded = load_dataset(path)
    assert len(loaded) == len(videos)
    for a, b in zip(videos, loaded):
        assert a.label == b.label
        np.testing.assert_array_equal(a.frames, b.frames)


def test_load_dataset_rejects_bad_records(tmp_path):
    path = tmp_path / 'bad.jsonl'
    path.write_text('{"label": 0, "length": 2, "feature_dim": 2, "frames": [1.0, 2.0, 3.0]}\n')
    with pytest.raises(ValueError):
        load_dataset(path)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / 'missing.jsonl')


def test_max_seq_len_cuts_videos_before_selection():
    video = SyntheticVideo(np.arange(20.0).reshape(20, 1), 0)
    assert to_batch([video], 4, 'stride').inputs[0, :, 0].tolist() == [0.0, 5.0, 10.0, 15.0]
    assert to_batch([video], 4, 'stride', max_seq_len=8).inputs[0, :, 0].tolist() == [0.0, 2.0, 4.0, 6.0]
    assert to_batch([video], 5, 'shadow', max_seq_len=3).inputs[0, :, 0].tolist() == [0.0, 1.0, 2.0, 2.0, 2.0]
    with pytest.raises(ValueError):
        to_batch([video], 4, max_seq_len=0)


def lag_product(inputs):
    return np.mean(np.sum(inputs[:, :-1] * inputs[:, 1:], axis=-1), axis=-1) / inputs.shape[-1]


def test_frame_order_carries_the_class():
    num_classes, frames = 4, 12
    videos = generate_dataset(num_classes, 70, frames, 24, 8, 0.1, seed=0)
    batch = to_batch(videos, frames, num_classes=num_classes)
    centers = np.array([lag_product(class_pattern(c, frames, num_classes, 8)[None])[0] for c in range(num_classes)])

    def nearest_class(inputs):
        return np.argmin(np.abs(lag_product(inputs)[:, None] - centers[None, :]), axis=1)

    assert accuracy(nearest_class(batch.inputs), batch.labels) >= 0.95
    rng = np.random.default_rng(1)
    shuffled = np.stack([video[rng.permutation(frames)] for video in batch.inputs])
    assert accuracy(nearest_class(shuffled), batch.labels) < 0.45
