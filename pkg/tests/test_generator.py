# tests/test_generator.py
import numpy as np
import pytest
from numpy.testing import assert_array_equal

from tdnas.dataset_schema import (
    HEADER_STRUCT,
    Dataset,
    bytes_to_dataset,
    dataset_to_bytes,
    load_dataset,
    save_dataset,
)
from tdnas.errors import FormatError, ShapeError
from tdnas.generator import (
    SyntheticTaskSpec,
    gen_context_task,
    generate_dataset,
    probe_accuracy,
    rank_task_arrays,
    split_heldout,
)
from tdnas.numeric import Rng


# -- dataset file -------------------------------------------------------------

def test_dataset_round_trip_is_bit_identical(tmp_path, small_data):
    path = save_dataset(small_data, tmp_path / "data" / "train.synd")
    loaded = load_dataset(path)
    assert_array_equal(loaded.features, small_data.features)
    assert_array_equal(loaded.labels, small_data.labels)
    assert loaded.num_classes == small_data.num_classes
    assert dataset_to_bytes(loaded) == path.read_bytes()


def test_dataset_file_layout(small_data):
    payload = dataset_to_bytes(small_data)
    assert payload[:4] == b"SYND"
    n, t, d = small_data.features.shape
    assert len(payload) == HEADER_STRUCT.size + n * t * (8 * d + 4)


def test_bad_magic_names_offset_zero(small_data):
    payload = b"XXXX" + dataset_to_bytes(small_data)[4:]
    with pytest.raises(FormatError) as err:
        bytes_to_dataset(payload)
    assert err.value.offset == 0


@pytest.mark.parametrize("cut", [0, 3, HEADER_STRUCT.size - 1])
def test_short_header_is_rejected(small_data, cut):
    with pytest.raises(FormatError):
        bytes_to_dataset(dataset_to_bytes(small_data)[:cut])


def test_truncated_and_trailing_payloads(small_data):
    payload = dataset_to_bytes(small_data)
    with pytest.raises(FormatError, match="truncated"):
        bytes_to_dataset(payload[:-1])
    with pytest.raises(FormatError, match="trailing"):
        bytes_to_dataset(payload + b"\x00")


def test_unsupported_version(small_data):
    payload = bytearray(dataset_to_bytes(small_data))
    payload[4] = 2
    with pytest.raises(FormatError) as err:
        bytes_to_dataset(bytes(payload))
    assert err.value.offset == 4


def test_out_of_range_label_in_file():
    d = Dataset(np.zeros((1, 2, 1)), np.array([[0, 1]]), 2)
    payload = bytearray(dataset_to_bytes(d))
    payload[-4:] = (7).to_bytes(4, "little")
    with pytest.raises(FormatError, match="outside"):
        bytes_to_dataset(bytes(payload))


def test_dataset_validates_shapes():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 3, 1)), np.zeros((2, 4), dtype=int), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 2, 1)), np.array([[0, 3]]), 2)


# -- synthetic tasks ----------------------------------------------------------

def test_generation_is_deterministic(small_task):
    a, b = generate_dataset(small_task), generate_dataset(small_task)
    assert_array_equal(a.features, b.features)
    assert_array_equal(a.labels, b.labels)
    other = generate_dataset(SyntheticTaskSpec(**{**small_task.__dict__, "seed": 6}))
    assert not np.array_equal(a.features, other.features)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        SyntheticTaskSpec(kind="planted-noise")
    with pytest.raises(ValueError):
        SyntheticTaskSpec(planted_left=-1)
    with pytest.raises(ValueError):
        gen_context_task(SyntheticTaskSpec(planted_left=4), d_left=3)


def test_zero_offsets_depend_on_the_current_frame_only():
    d = generate_dataset(SyntheticTaskSpec(num_sequences=60, frames=10, feature_dim=3, num_classes=3,
                                           planted_left=0, planted_right=0, seed=1))
    assert probe_accuracy(d, [0]) > 0.98


def test_planted_offsets_are_needed_to_read_the_labels():
    d = generate_dataset(SyntheticTaskSpec(num_sequences=150, frames=20, feature_dim=4, num_classes=3,
                                           planted_left=2, planted_right=1, seed=2))
    with_offsets = probe_accuracy(d, [-2, 1])
    current_only = probe_accuracy(d, [0])
    majority = np.bincount(d.labels.reshape(-1)).max() / d.labels.size
    assert with_offsets > 0.98
    # edge replication leaks the current frame into the first and last few labels
    assert current_only < majority + 0.15
    assert with_offsets - current_only > 0.2


def test_rank_task_has_the_planted_rank():
    spec = SyntheticTaskSpec(kind="planted-rank", num_sequences=40, frames=10, feature_dim=6, num_classes=5,
                             planted_rank=2, noise_sigma=0.0, seed=3)
    _, logits, labels = rank_task_arrays(spec)
    assert np.linalg.matrix_rank(logits.reshape(-1, 5)) == 2
    assert_array_equal(labels, np.argmax(logits, axis=-1))

    noisy = SyntheticTaskSpec(**{**spec.__dict__, "noise_sigma": 0.01})
    _, logits, _ = rank_task_arrays(noisy)
    s = np.linalg.svd(logits.reshape(-1, 5), compute_uv=False)
    assert s[2] < 0.1 * s[1]


def test_rank_task_rejects_bad_rank():
    with pytest.raises(ValueError):
        rank_task_arrays(SyntheticTaskSpec(kind="planted-rank", feature_dim=3, planted_rank=4))


# -- held-out split -----------------------------------------------------------

def test_split_sizes_and_partition():
    d = Dataset(Rng(0, 0).normal((1000, 2, 1)), np.zeros((1000, 2), dtype=int), 2)
    train, held = split_heldout(d, 0.05, Rng(1, 3))
    assert (len(train), len(held)) == (950, 50)
    rows = np.concatenate([train.features[:, 0, 0], held.features[:, 0, 0]])
    assert_array_equal(np.sort(rows), np.sort(d.features[:, 0, 0]))


def test_split_is_deterministic(small_data):
    a = split_heldout(small_data, 0.25, Rng(4, 3))
    b = split_heldout(small_data, 0.25, Rng(4, 3))
    assert_array_equal(a[1].features, b[1].features)


def test_split_rejects_empty_parts(small_data):
    with pytest.raises(ValueError):
        split_heldout(small_data, 0.01, Rng(0, 3))
    with pytest.raises(ValueError):
        split_heldout(small_data, 1.0, Rng(0, 3))
