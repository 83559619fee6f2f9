"""Pipeline orchestration as subcommands.

Exit codes: 0 success, 1 usage error, 2 data error. A shared JSON config
file provides defaults; explicit flags always win. Logs go to stderr, data
only to files.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from pem import affectd, dataset as ds_mod, ingest, labels as labels_mod, physio, report
from pem.errors import PemError
from pem.model import config as model_config
from pem.model.io import load_model, save_model
from pem.model.train import predict_video, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise PemError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise PemError(f"bad config {path}: {exc}")


def _get(args, cfg: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return cfg.get(key, default)


# ----------------------------------------------------------------- commands


def _cmd_ingest(args, cfg):
    chunk_ms = _get(args, cfg, "chunk_ms", ingest.DEFAULT_CHUNK_MS)
    track = ingest.read_wav(args.audio)
    threshold = _get(args, cfg, "noise_gate", 0.0)
    if threshold:
        track = ingest.noise_gate(track, threshold)
    series = ingest.amplitude_series(track, chunk_ms)
    ingest.write_amplitude_csv(series, args.out)
    print(f"wrote {len(series.values)} chunks to {args.out}", file=sys.stderr)
    return 0


def _cmd_labels(args, cfg):
    window = _get(args, cfg, "window", labels_mod.DEFAULT_WINDOW)
    amps = ingest.read_amplitude_csv(args.amps)
    out = labels_mod.synthesize_labels(amps, window)
    labels_mod.write_labels_csv(out, args.out)
    print(f"wrote {len(out.values)} labels to {args.out}", file=sys.stderr)
    return 0


def _parse_video_spec(spec: str) -> tuple[str, str, str]:
    try:
        vid, rest = spec.split("=", 1)
        frames_dir, labels_csv = rest.split(":", 1)
    except ValueError:
        raise UsageError(f"--video expects ID=FRAMES_DIR:LABELS_CSV, got {spec!r}")
    return vid, frames_dir, labels_csv


def _cmd_dataset(args, cfg):
    fps = _get(args, cfg, "fps", ingest.DEFAULT_FPS)
    side = _get(args, cfg, "side", ingest.DEFAULT_SIDE)
    frames_by_video = {}
    labels_by_video = {}
    for spec in args.video:
        vid, frames_dir, labels_csv = _parse_video_spec(spec)
        frames = ingest.load_frames(frames_dir, fps=fps, side=side)
        lab = labels_mod.read_labels_csv(labels_csv)
        frames, lab, note = ds_mod.align_lengths(frames, lab)
        if note:
            print(f"video {vid}: {note}", file=sys.stderr)
        frames_by_video[vid] = frames
        labels_by_video[vid] = lab
    alignment = _get(args, cfg, "label_alignment", "last")
    built = ds_mod.build(frames_by_video, labels_by_video, alignment)
    for warning in built.manifest.warnings:
        print(warning, file=sys.stderr)
    if args.holdout:
        holdout = set(args.holdout.split(","))
        train_ds, eval_ds = ds_mod.split(built, holdout)
        ds_mod.save(train_ds, args.out)
        if args.holdout_out:
            ds_mod.save(eval_ds, args.holdout_out)
        print(
            f"wrote {len(train_ds)} train / {len(eval_ds)} eval samples",
            file=sys.stderr,
        )
    else:
        ds_mod.save(built, args.out)
        print(f"wrote {len(built)} samples to {args.out}", file=sys.stderr)
    return 0


def _cmd_train(args, cfg):
    dataset_path = _get(args, cfg, "dataset", None)
    out_path = _get(args, cfg, "out", None)
    if not dataset_path or not out_path:
        raise UsageError("train needs --dataset and --out (or config keys)")
    model_cfg_dict = dict(cfg.get("model", {}))
    for key in ("preset", "side", "lr", "epochs", "batch_size", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            model_cfg_dict[key] = value
    model_cfg_dict.setdefault("preset", "alexnet")
    config = model_config.config_from_json(model_cfg_dict)
    data = ds_mod.load(dataset_path)
    bundle = train(data, config)
    save_model(bundle, out_path)
    print(
        f"trained {config.epochs} epochs, final loss {bundle.train_log[-1]:.6f}, "
        f"saved to {out_path}",
        file=sys.stderr,
    )
    return 0


def _write_trace_csv(trace, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("end_frame_index,timestamp_ms,affect\n")
        for i, t, v in zip(trace.end_frame_indices, trace.timestamps_ms, trace.values):
            fh.write(f"{i},{t:.3f},{v:.6f}\n")


def _read_trace_csv(path):
    rows = ingest._read_csv_rows(path, ("end_frame_index", "timestamp_ms", "affect"))
    times = np.array([float(r[1]) for r in rows])
    values = np.array([float(r[2]) for r in rows])
    return times, values


def _cmd_predict(args, cfg):
    bundle = load_model(args.model)
    fps = _get(args, cfg, "fps", ingest.DEFAULT_FPS)
    frames = ingest.load_frames(args.frames, fps=fps, side=bundle.config.side)
    trace = predict_video(bundle, frames)
    _write_trace_csv(trace, args.out)
    print(f"wrote {len(trace)} predictions to {args.out}", file=sys.stderr)
    return 0


def _cmd_physio(args, cfg):
    if not args.eda and not args.ppg:
        raise UsageError("physio needs --eda and/or --ppg")
    segments = physio.read_segments_csv(args.segments)
    pcfg = cfg.get("physio", {})
    prominence = _get(args, pcfg, "scr_prominence", physio.SCR_PROMINENCE)
    separation = _get(args, pcfg, "scr_separation_s", physio.SCR_SEPARATION_S)
    doc = {"participant": args.participant, "segments": []}
    eda_rec = physio.read_sensor_csv(args.eda, "EDA", segments) if args.eda else None
    ppg_rec = physio.read_sensor_csv(args.ppg, "PPG", segments) if args.ppg else None
    for label, start_ms, end_ms in segments:
        entry = {"label": label, "start_ms": start_ms, "end_ms": end_ms}
        if eda_rec is not None:
            feats = physio.eda_features(eda_rec, label, prominence, separation)
            entry["eda"] = {
                "scl_mean": float(np.mean(feats.scl)),
                "scl_std": float(np.std(feats.scl, ddof=1)) if len(feats.scl) > 1 else 0.0,
                "normalized_scl_mean": float(np.mean(feats.normalized_scl)),
                "normalized_scl_std": float(np.std(feats.normalized_scl, ddof=1))
                if len(feats.normalized_scl) > 1
                else 0.0,
                "scr_peak_count": feats.scr_peak_count,
                "scr_mean_amplitude": feats.scr_mean_amplitude,
            }
        if ppg_rec is not None:
            nn = physio.ppg_nn_intervals(ppg_rec, label)
            hrv = physio.hrv_features(nn)
            entry["hrv"] = {
                "nn_count": len(hrv.nn_intervals_ms),
                "sdnn": hrv.sdnn,
                "sdsd": hrv.sdsd,
                "rmssd": hrv.rmssd,
                "pnn20": hrv.pnn20,
                "pnn50": hrv.pnn50,
            }
        doc["segments"].append(entry)
    with open(args.out, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote features for {len(segments)} segments to {args.out}", file=sys.stderr)
    return 0


def _cmd_eval(args, cfg):
    chunk_ms = _get(args, cfg, "chunk_ms", ingest.DEFAULT_CHUNK_MS)
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise PemError(f"manifest not found: {args.manifest}")
    except json.JSONDecodeError as exc:
        raise PemError(f"bad manifest {args.manifest}: {exc}")
    users = []
    for entry in manifest.get("users", []):
        segments = physio.read_segments_csv(entry["segments"])
        times, values = _read_trace_csv(entry["trace"])
        rec = physio.read_sensor_csv(entry["eda"], "EDA", segments)
        norm = physio.session_normalized_scl(rec)
        users.append(
            report.build_user_eval(
                entry["id"], times, values, norm, rec.sample_rate, segments, chunk_ms
            )
        )
    bundle = report.EvalBundle(users)
    report.save_bundle(bundle, args.out)
    print(f"wrote evaluation bundle for {len(users)} users to {args.out}", file=sys.stderr)
    return 0


def _cmd_report(args, cfg):
    bundle = report.load_bundle(args.bundle)
    survey = report.read_survey_csv(args.survey) if args.survey else None
    written = report.generate_report(bundle, survey, args.outdir)
    print(f"wrote {', '.join(written)} to {args.outdir}", file=sys.stderr)
    return 0


def _cmd_serve(args, cfg):
    bundle = load_model(args.model)
    server = affectd.serve(
        bundle,
        host=_get(args, cfg, "host", "127.0.0.1"),
        port=args.port,
        max_sessions=_get(args, cfg, "max_sessions", affectd.DEFAULT_MAX_SESSIONS),
        session_timeout_s=_get(args, cfg, "session_timeout", affectd.DEFAULT_SESSION_TIMEOUT_S),
    )
    host, port = server.server_address[:2]
    print(f"affectd listening on {host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ------------------------------------------------------------------- parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="pem", description="Player experience model pipeline")
    parser.add_argument("--config", help="JSON config file with shared defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="WAV to normalized amplitude CSV")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-ms", dest="chunk_ms", type=int)
    p.add_argument("--noise-gate", dest="noise_gate", type=float)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("labels", help="amplitude CSV to affect label CSV")
    p.add_argument("--amps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int)
    p.set_defaults(func=_cmd_labels)

    p = sub.add_parser("dataset", help="frame dirs + label CSVs to dataset file")
    p.add_argument(
        "--video",
        action="append",
        required=True,
        metavar="ID=FRAMES_DIR:LABELS_CSV",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--holdout", help="comma-separated video ids for the eval split")
    p.add_argument("--holdout-out", dest="holdout_out")
    p.add_argument("--fps", type=float)
    p.add_argument("--side", type=int)
    p.add_argument(
        "--label-alignment",
        dest="label_alignment",
        choices=ds_mod.LABEL_ALIGNMENTS,
        help="which chunk labels a window: its last frame (default), first, or mean",
    )
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train the CNN on a dataset file")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--preset", choices=sorted(model_config.PRESETS))
    p.add_argument("--side", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="model + frame dir to affect trace CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("physio", help="sensor CSVs to per-segment feature JSON")
    p.add_argument("--eda")
    p.add_argument("--ppg")
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--participant", default="unknown")
    p.add_argument("--scr-prominence", dest="scr_prominence", type=float)
    p.add_argument("--scr-separation", dest="scr_separation_s", type=float)
    p.set_defaults(func=_cmd_physio)

    p = sub.add_parser("eval", help="assemble the per-user evaluation bundle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-ms", dest="chunk_ms", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="bundle + survey to tables and scatterplots")
    p.add_argument("--bundle", required=True)
    p.add_argument("--survey")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="streaming affect inference over TCP")
    p.add_argument("--model", required=True)
    p.add_argument("--port", type=int, default=7877)
    p.add_argument("--host")
    p.add_argument("--max-sessions", dest="max_sessions", type=int)
    p.add_argument("--session-timeout", dest="session_timeout", type=float)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except PemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def affectd_main(argv=None) -> int:
    """`affectd --model path --port N ...` entry point (alias of `pem serve`)."""
    argv = list(sys.argv[1:] if argv is None else argv)
    return main(["serve", *argv])


if __name__ == "__main__":
    sys.exit(main())
