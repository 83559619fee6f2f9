import numpy as np
import pytest

from pem.dataset import Dataset, align_lengths, build, load, save, split
from pem.errors import DataFormatError, PemError


def frames_array(n, side=8, seed=0, offset=0.0):
    rng = np.random.default_rng(seed)
    return (rng.uniform(0, 1, (n, side, side)) * 0.5 + offset).astype(np.float32)


def make_ds(counts: dict[str, int], side=8) -> Dataset:
    frames = {vid: frames_array(n, side, seed=i) for i, (vid, n) in enumerate(counts.items())}
    labels = {vid: np.linspace(0, 1, n) for vid, n in counts.items()}
    return build(frames, labels)


class TestBuild:
    def test_ten_frames_seven_samples(self):
        ds = make_ds({"v": 10})
        assert len(ds) == 7
        assert ds.manifest.counts == {"v": 7}

    def test_single_window_label_alignment(self):
        frames = frames_array(4)
        labels = np.array([0.1, 0.2, 0.3, 0.4])
        ds = build({"v": frames}, {"v": labels})
        assert len(ds) == 1
        sample = ds.sample(0)
        assert sample.label == np.float32(0.4)
        assert sample.end_frame_index == 3
        np.testing.assert_array_equal(sample.stack, frames)

    def test_mismatch_names_video(self):
        with pytest.raises(PemError, match="badvid"):
            build({"badvid": frames_array(5)}, {"badvid": np.zeros(4)})

    def test_label_alignment_switch(self):
        frames = frames_array(5)
        labels = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
        last = build({"v": frames}, {"v": labels})
        first = build({"v": frames}, {"v": labels}, label_alignment="first")
        mean = build({"v": frames}, {"v": labels}, label_alignment="mean")
        np.testing.assert_allclose(last.labels, [0.3, 0.4], atol=1e-7)
        np.testing.assert_allclose(first.labels, [0.0, 0.1], atol=1e-7)
        np.testing.assert_allclose(mean.labels, [0.15, 0.25], atol=1e-7)
        with pytest.raises(PemError, match="label_alignment"):
            build({"v": frames}, {"v": labels}, label_alignment="median")

    def test_short_video_skipped_with_warning(self):
        frames = {"short": frames_array(3), "ok": frames_array(6, seed=1)}
        labels = {"short": np.zeros(3), "ok": np.zeros(6)}
        ds = build(frames, labels)
        assert "short" not in ds.manifest.counts
        assert any("short" in w for w in ds.manifest.warnings)
        assert ds.manifest.counts == {"ok": 3}

    def test_video_then_index_order(self):
        ds = make_ds({"a": 5, "b": 6})
        assert ds.video_ids == ["a", "a"] + ["b"] * 3
        assert ds.end_frames.tolist() == [3, 4, 3, 4, 5]

    def test_sliding_window_coverage(self):
        ds = make_ds({"a": 9, "b": 7})
        for vid, n in (("a", 9), ("b", 7)):
            ends = sorted(
                int(e) for e, v in zip(ds.end_frames, ds.video_ids) if v == vid
            )
            assert ends == list(range(3, n))

    def test_no_cross_video_stacks(self):
        frames = {"a": frames_array(5, seed=1, offset=0.0), "b": frames_array(5, seed=2, offset=0.5)}
        labels = {"a": np.zeros(5), "b": np.ones(5)}
        ds = build(frames, labels)
        for sample in ds.samples():
            src = frames[sample.video_id]
            lo = sample.end_frame_index - 3
            np.testing.assert_array_equal(sample.stack, src[lo : lo + 4])


class TestSplit:
    def test_holdout_two_of_eight(self):
        ds = make_ds({f"v{i}": 6 for i in range(8)})
        train, eval_ds = split(ds, {"v6", "v7"})
        assert set(train.manifest.counts) == {f"v{i}" for i in range(6)}
        assert set(eval_ds.manifest.counts) == {"v6", "v7"}
        assert len(train) + len(eval_ds) == len(ds)

    def test_holdout_none_and_all(self):
        ds = make_ds({"a": 5, "b": 5})
        train, eval_ds = split(ds, set())
        assert len(eval_ds) == 0 and len(train) == len(ds)
        train, eval_ds = split(ds, {"a", "b"})
        assert len(train) == 0 and len(eval_ds) == len(ds)

    def test_unknown_id(self):
        with pytest.raises(PemError, match="unknown video"):
            split(make_ds({"a": 5}), {"zz"})


class TestAlign:
    def test_no_change_when_equal(self):
        frames = frames_array(5)
        labels = np.zeros(5)
        f, l, note = align_lengths(frames, labels)
        assert note is None and len(f) == 5

    def test_truncates_to_shorter(self):
        f, l, note = align_lengths(frames_array(6), np.zeros(4))
        assert len(f) == 4 and len(l) == 4 and "truncated" in note


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        ds = make_ds({"a": 6, "b": 5})
        path = tmp_path / "d.pemd"
        save(ds, path)
        back = load(path)
        assert back == ds
        assert np.array_equal(back.stacks, ds.stacks)
        assert np.array_equal(back.labels, ds.labels)

    def test_empty_dataset(self, tmp_path):
        ds = make_ds({"a": 6})
        _, empty = split(ds, set())
        path = tmp_path / "e.pemd"
        save(empty, path)
        assert len(load(path)) == 0

    def test_truncated(self, tmp_path):
        ds = make_ds({"a": 6})
        path = tmp_path / "d.pemd"
        save(ds, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        with pytest.raises(DataFormatError) as err:
            load(path)
        assert err.value.code == "truncated dataset"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.pemd"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(DataFormatError) as err:
            load(path)
        assert err.value.code == "bad magic"

    def test_version_mismatch(self, tmp_path):
        ds = make_ds({"a": 6})
        path = tmp_path / "d.pemd"
        save(ds, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(DataFormatError) as err:
            load(path)
        assert err.value.code == "version mismatch"
