import json
import math

import numpy as np
import pytest
from PIL import Image
from scipy.io import wavfile

from pem.cli import main


@pytest.fixture()
def workspace(tmp_path):
    """WAV + frame directory small enough for fast CLI runs."""
    sr = 8000
    t = np.arange(0, 8, 1 / sr)
    env = 0.5 + 0.45 * np.sin(2 * np.pi * t / 4)
    wavfile.write(tmp_path / "voice.wav", sr, (env * np.sin(2 * np.pi * 220 * t)).astype(np.float32))
    frames = tmp_path / "frames"
    frames.mkdir()
    rng = np.random.default_rng(0)
    for i in range(32):
        value = int(40 + 170 * (0.5 + 0.5 * math.sin(i / 5)))
        arr = np.full((32, 32, 3), value, dtype=np.uint8)
        arr += rng.integers(0, 8, arr.shape, dtype=np.uint8)
        Image.fromarray(arr).save(frames / f"f{i:03d}.png")
    return tmp_path


def run(argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert run(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert run(["labels", "--out", "x.csv"]) == 1

    def test_data_error_is_two(self, tmp_path):
        assert run(["labels", "--amps", tmp_path / "missing.csv", "--out", tmp_path / "o.csv"]) == 2

    def test_unknown_flag(self):
        assert run(["ingest", "--nope"]) == 1


class TestLabelsCommand:
    def test_window_one_is_pointwise_conversion(self, tmp_path):
        amps = tmp_path / "a.csv"
        values = [0.0, 0.25, 0.5, 0.75, 1.0]
        amps.write_text(
            "chunk_index,start_ms,amplitude\n"
            + "".join(f"{i},{i*250},{v:.6f}\n" for i, v in enumerate(values))
        )
        out = tmp_path / "l.csv"
        assert run(["labels", "--amps", amps, "--window", "1", "--out", out]) == 0
        rows = out.read_text().splitlines()[1:]
        got = [float(r.split(",")[1]) for r in rows]
        expected = [math.cos(math.pi * v) ** 2 for v in values]
        np.testing.assert_allclose(got, expected, atol=1e-6)


class TestPipeline:
    def test_end_to_end(self, workspace):
        ws = workspace
        assert run(["ingest", "--audio", ws / "voice.wav", "--out", ws / "amps.csv"]) == 0
        assert run(["labels", "--amps", ws / "amps.csv", "--out", ws / "labels.csv"]) == 0
        assert (
            run(
                [
                    "dataset",
                    "--video",
                    f"v1={ws / 'frames'}:{ws / 'labels.csv'}",
                    "--side",
                    "32",
                    "--out",
                    ws / "ds.pemd",
                ]
            )
            == 0
        )
        config = {
            "dataset": str(ws / "ds.pemd"),
            "out": str(ws / "m.pemw"),
            "model": {"preset": "tiny", "epochs": 2, "batch_size": 8, "seed": 5},
        }
        (ws / "c.json").write_text(json.dumps(config))
        assert run(["--config", ws / "c.json", "train"]) == 0
        assert (ws / "m.pemw").exists()
        assert (
            run(
                [
                    "predict",
                    "--model",
                    ws / "m.pemw",
                    "--frames",
                    ws / "frames",
                    "--out",
                    ws / "trace.csv",
                ]
            )
            == 0
        )
        trace_lines = (ws / "trace.csv").read_text().splitlines()
        assert trace_lines[0] == "end_frame_index,timestamp_ms,affect"
        assert len(trace_lines) == 1 + 32 - 3

        # physio + eval + report on the same session
        fs = 32.0
        t = np.arange(0, 8, 1 / fs)
        eda = 2.0 + 0.3 * np.sin(2 * np.pi * t / 11)
        with open(ws / "eda.csv", "w") as fh:
            fh.write("t_ms,value\n")
            for ti, v in zip(t, eda):
                fh.write(f"{ti*1000:.3f},{v:.6f}\n")
        (ws / "segs.csv").write_text(
            "label,start_ms,end_ms\n1,750,3000\n2,3000,5500\n3,5500,8000\n"
        )
        ppg = np.sin(2 * np.pi * 1.25 * t)
        with open(ws / "ppg.csv", "w") as fh:
            fh.write("t_ms,value\n")
            for ti, v in zip(t, ppg):
                fh.write(f"{ti*1000:.3f},{v:.6f}\n")
        assert (
            run(
                [
                    "physio",
                    "--eda",
                    ws / "eda.csv",
                    "--ppg",
                    ws / "ppg.csv",
                    "--segments",
                    ws / "segs.csv",
                    "--out",
                    ws / "feat.json",
                ]
            )
            == 0
        )
        feats = json.loads((ws / "feat.json").read_text())
        assert len(feats["segments"]) == 3

        manifest = {
            "users": [
                {
                    "id": "1",
                    "trace": str(ws / "trace.csv"),
                    "eda": str(ws / "eda.csv"),
                    "segments": str(ws / "segs.csv"),
                }
            ]
        }
        (ws / "em.json").write_text(json.dumps(manifest))
        assert run(["eval", "--manifest", ws / "em.json", "--out", ws / "bundle.json"]) == 0
        assert run(["report", "--bundle", ws / "bundle.json", "--outdir", ws / "rep"]) == 0
        produced = {p.name for p in (ws / "rep").iterdir()}
        assert {"table2.csv", "table3.csv", "user1.svg"} <= produced

    def test_idempotent_outputs(self, workspace):
        ws = workspace
        run(["ingest", "--audio", ws / "voice.wav", "--out", ws / "a1.csv"])
        run(["ingest", "--audio", ws / "voice.wav", "--out", ws / "a2.csv"])
        assert (ws / "a1.csv").read_bytes() == (ws / "a2.csv").read_bytes()
        run(["labels", "--amps", ws / "a1.csv", "--out", ws / "l1.csv"])
        run(["labels", "--amps", ws / "a1.csv", "--out", ws / "l2.csv"])
        assert (ws / "l1.csv").read_bytes() == (ws / "l2.csv").read_bytes()

    def test_dataset_holdout_split(self, workspace):
        ws = workspace
        run(["ingest", "--audio", ws / "voice.wav", "--out", ws / "amps.csv"])
        run(["labels", "--amps", ws / "amps.csv", "--out", ws / "labels.csv"])
        spec = f"{ws / 'frames'}:{ws / 'labels.csv'}"
        assert (
            run(
                [
                    "dataset",
                    "--video",
                    f"a={spec}",
                    "--video",
                    f"b={spec}",
                    "--side",
                    "32",
                    "--out",
                    ws / "train.pemd",
                    "--holdout",
                    "b",
                    "--holdout-out",
                    ws / "eval.pemd",
                ]
            )
            == 0
        )
        from pem.dataset import load

        train_ds = load(ws / "train.pemd")
        eval_ds = load(ws / "eval.pemd")
        assert set(train_ds.manifest.counts) == {"a"}
        assert set(eval_ds.manifest.counts) == {"b"}

    def test_bad_video_spec_is_usage_error(self, workspace):
        assert run(["dataset", "--video", "nonsense", "--out", "x.pemd"]) == 1
