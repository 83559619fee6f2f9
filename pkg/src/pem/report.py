"""Evaluation artifacts: experiential medians, per-level means, correlations,
and the per-user scatterplot.

Inputs are the survey CSV (one row per participant) and an evaluation
bundle holding, per participant and level, the model trace segment and the
session-normalized EDA segment mean-pooled onto the model's 250 ms grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pem.errors import PemError
from pem.stats import rank_levels, spearman_rho

LIKERT_ITEMS = ("calm", "tense", "relaxed", "worried", "upset", "content")
LIKERT_CODES = (-2, -1, 1, 2)
LEVELS = ("1", "2", "3")
STAR_THRESHOLDS = ((0.0005, "***"), (0.005, "**"), (0.05, "*"))


@dataclass
class SurveyResponses:
    participants: list[str]
    likert: dict[tuple[str, str], list[int]]  # (item, level) -> per-participant codes
    rows: list[dict] = field(default_factory=list)  # full parsed rows


@dataclass
class LevelSegment:
    label: str
    start_ms: float
    end_ms: float
    times_ms: np.ndarray
    model: np.ndarray
    eda: np.ndarray


@dataclass
class UserEval:
    user: str
    levels: list[LevelSegment]


@dataclass
class EvalBundle:
    users: list[UserEval]

    def user(self, user_id: str) -> UserEval:
        for u in self.users:
            if u.user == user_id:
                return u
        raise PemError(f"unknown user {user_id!r}")


def read_survey_csv(path: str | Path) -> SurveyResponses:
    """Parse the survey CSV; Likert codes must be in {-2, -1, 1, 2}."""
    import csv

    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            raw = list(reader)
            fields = reader.fieldnames or []
    except FileNotFoundError:
        raise PemError(f"survey file not found: {path}")
    if "participant" not in fields:
        raise PemError(f"{path}: missing 'participant' column")
    likert: dict[tuple[str, str], list[int]] = {
        (item, level): [] for item in LIKERT_ITEMS for level in LEVELS
    }
    participants = []
    for row_no, row in enumerate(raw, start=2):
        participants.append(row["participant"])
        for item in LIKERT_ITEMS:
            for level in LEVELS:
                col = f"{item}_l{level}"
                if col not in row or row[col] in (None, ""):
                    raise PemError(f"{path} row {row_no}: missing column {col}")
                try:
                    code = int(row[col])
                except ValueError:
                    raise PemError(f"{path} row {row_no}: bad likert code {row[col]!r} in {col}")
                if code not in LIKERT_CODES:
                    raise PemError(f"{path} row {row_no}: likert code {code} not in {LIKERT_CODES}")
                likert[(item, level)].append(code)
    if not participants:
        raise PemError(f"{path}: no participant rows")
    return SurveyResponses(participants, likert, raw)


def lower_median(codes) -> int:
    """Median that stays in the code alphabet: lower central value when even."""
    ordered = sorted(codes)
    return ordered[(len(ordered) - 1) // 2]


def table_experiential(survey: SurveyResponses) -> list[dict]:
    """Per item: lower-median Likert code per level plus the level ranking."""
    if len(survey.participants) < 2:
        raise PemError("need at least 2 participants")
    rows = []
    for item in LIKERT_ITEMS:
        groups = {level: survey.likert[(item, level)] for level in LEVELS}
        ranking = rank_levels(groups)
        rows.append(
            {
                "item": item,
                "medians": {level: lower_median(groups[level]) for level in LEVELS},
                "ranking": ranking.notation,
                "rank_result": ranking,
            }
        )
    return rows


def _mean_std(values: np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        raise PemError("empty segment")
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), std


def table_means(bundle: EvalBundle) -> list[dict]:
    """Per user and output (EDA, model): mean +- std per level and ranking."""
    rows = []
    for user in bundle.users:
        for key, name in (("eda", "EDA"), ("model", "Model")):
            stats = {}
            groups = {}
            for seg in user.levels:
                values = getattr(seg, key)
                stats[seg.label] = _mean_std(values)
                groups[seg.label] = values
            ranking = rank_levels(groups)
            rows.append(
                {
                    "user": user.user,
                    "output": name,
                    "stats": stats,
                    "ranking": ranking.notation,
                    "rank_result": ranking,
                }
            )
    return rows


def stars(p: float) -> str:
    for threshold, mark in STAR_THRESHOLDS:
        if p < threshold:
            return mark
    return ""


def table_correlations(bundle: EvalBundle) -> list[dict]:
    """Per user: Spearman rho between model and EDA per level, starred.

    A constant segment has no defined correlation and is reported as the
    "n/a" cell rather than failing the table.
    """
    rows = []
    for user in bundle.users:
        cells = {}
        for seg in user.levels:
            if len(seg.model) < 3:
                raise PemError(f"user {user.user} level {seg.label}: fewer than 3 points")
            try:
                corr = spearman_rho(seg.model, seg.eda)
            except PemError:
                cells[seg.label] = {"text": "n/a", "result": None}
                continue
            text = f"{corr.rho:.2f}{stars(corr.p_value)}"
            cells[seg.label] = {"text": text, "result": corr}
        rows.append({"user": user.user, "cells": cells})
    return rows


# ------------------------------------------------------------------ rendering


def write_table_csv(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_table_text(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    with open(path, "w", newline="\n") as fh:
        for row in [header] + rows:
            fh.write("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")


def render_experiential(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["item", "level1", "level2", "level3", "ranking"]
    out = [
        [r["item"]] + [str(r["medians"][lv]) for lv in LEVELS] + [r["ranking"]]
        for r in rows
    ]
    return header, out


def render_means(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["user", "output", "level1", "level2", "level3", "ranking"]
    out = []
    for r in rows:
        cells = [
            f"{r['stats'][lv][0]:.2f} +- {r['stats'][lv][1]:.2f}" if lv in r["stats"] else ""
            for lv in LEVELS
        ]
        out.append([r["user"], r["output"], *cells, r["ranking"]])
    return header, out


def render_correlations(rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    header = ["user", "level1", "level2", "level3"]
    out = []
    for r in rows:
        out.append([r["user"]] + [r["cells"].get(lv, {"text": ""})["text"] for lv in LEVELS])
    return header, out


def scatter_svg(bundle: EvalBundle, user_id: str, path: str | Path) -> None:
    """Scatter of model (red) and EDA (blue) against time with level rules.

    Output bytes are deterministic for a fixed bundle.
    """
    user = bundle.user(user_id)
    points = [(t, seg) for seg in user.levels for t in seg.times_ms]
    if not points:
        raise PemError(f"user {user_id}: empty trace")
    width, height = 800, 400
    ml, mr, mt, mb = 60, 20, 20, 45
    t_lo = min(seg.times_ms.min() for seg in user.levels if len(seg.times_ms))
    t_hi = max(seg.times_ms.max() for seg in user.levels if len(seg.times_ms))
    span = max(t_hi - t_lo, 1.0)

    def sx(t: float) -> float:
        return ml + (t - t_lo) / span * (width - ml - mr)

    def sy(v: float) -> float:
        return mt + (1.0 - v) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{sy(0)}" x2="{width - mr}" y2="{sy(0)}" stroke="black"/>',
        f'<line x1="{ml}" y1="{sy(0)}" x2="{ml}" y2="{mt}" stroke="black"/>',
        f'<text x="{(ml + width - mr) / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="14">time (s)</text>',
        f'<text x="15" y="{(mt + height - mb) / 2:.1f}" text-anchor="middle" '
        f'font-size="14" transform="rotate(-90 15 {(mt + height - mb) / 2:.1f})">value</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{ml - 8}" y="{sy(frac):.1f}" text-anchor="end" font-size="11">{frac:.1f}</text>'
        )
    for seg in user.levels:
        x = sx(seg.start_ms)
        parts.append(
            f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{sy(0):.1f}" '
            f'stroke="gray" stroke-dasharray="4,3"/>'
        )
        parts.append(
            f'<text x="{x + 4:.1f}" y="{mt + 12}" font-size="11" fill="gray">{seg.label}</text>'
        )
        for t, mv, ev in zip(seg.times_ms, seg.model, seg.eda):
            parts.append(f'<circle cx="{sx(t):.1f}" cy="{sy(ev):.1f}" r="2.5" fill="blue"/>')
            parts.append(f'<circle cx="{sx(t):.1f}" cy="{sy(mv):.1f}" r="2.5" fill="red"/>')
    lx = width - mr - 120
    parts.append(f'<circle cx="{lx}" cy="{mt + 10}" r="3" fill="red"/>')
    parts.append(f'<text x="{lx + 8}" y="{mt + 14}" font-size="12">model</text>')
    parts.append(f'<circle cx="{lx}" cy="{mt + 26}" r="3" fill="blue"/>')
    parts.append(f'<text x="{lx + 8}" y="{mt + 30}" font-size="12">EDA</text>')
    for tick in range(4):
        t = t_lo + span * tick / 3.0
        parts.append(
            f'<text x="{sx(t):.1f}" y="{sy(0) + 16:.1f}" text-anchor="middle" '
            f'font-size="11">{t / 1000.0:.0f}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


# ------------------------------------------------------------ bundle assembly


def pool_to_grid(
    times_ms: np.ndarray,
    sensor_t_ms: np.ndarray,
    sensor_v: np.ndarray,
    grid_ms: float = 250.0,
) -> np.ndarray:
    """Mean-pool a sensor series into the [t - grid_ms, t) bin of each model
    timestamp; empty bins get the nearest sample instead."""
    out = np.empty(len(times_ms))
    for i, t in enumerate(times_ms):
        mask = (sensor_t_ms >= t - grid_ms) & (sensor_t_ms < t)
        if mask.any():
            out[i] = sensor_v[mask].mean()
        else:
            out[i] = sensor_v[np.argmin(np.abs(sensor_t_ms - t))]
    return out


def build_user_eval(
    user: str,
    trace_times_ms: np.ndarray,
    trace_values: np.ndarray,
    eda_norm: np.ndarray,
    eda_rate: float,
    segments: list[tuple[str, float, float]],
    grid_ms: float = 250.0,
) -> UserEval:
    """Slice a model trace and normalized EDA into per-level aligned segments."""
    eda_t = np.arange(len(eda_norm)) * 1000.0 / eda_rate
    levels = []
    for label, s_ms, e_ms in segments:
        mask = (trace_times_ms >= s_ms) & (trace_times_ms < e_ms)
        times = trace_times_ms[mask]
        model = trace_values[mask]
        eda = pool_to_grid(times, eda_t, eda_norm, grid_ms)
        levels.append(LevelSegment(label, s_ms, e_ms, times, model, eda))
    return UserEval(user, levels)


def save_bundle(bundle: EvalBundle, path: str | Path) -> None:
    doc = {
        "users": [
            {
                "user": u.user,
                "levels": [
                    {
                        "label": seg.label,
                        "start_ms": seg.start_ms,
                        "end_ms": seg.end_ms,
                        "times_ms": seg.times_ms.tolist(),
                        "model": seg.model.tolist(),
                        "eda": seg.eda.tolist(),
                    }
                    for seg in u.levels
                ],
            }
            for u in bundle.users
        ]
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_bundle(path: str | Path) -> EvalBundle:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise PemError(f"bundle not found: {path}")
    except json.JSONDecodeError as exc:
        raise PemError(f"bad bundle {path}: {exc}")
    users = []
    for u in doc.get("users", []):
        levels = [
            LevelSegment(
                seg["label"],
                float(seg["start_ms"]),
                float(seg["end_ms"]),
                np.asarray(seg["times_ms"], dtype=np.float64),
                np.asarray(seg["model"], dtype=np.float64),
                np.asarray(seg["eda"], dtype=np.float64),
            )
            for seg in u["levels"]
        ]
        users.append(UserEval(u["user"], levels))
    return EvalBundle(users)


def generate_report(bundle: EvalBundle, survey: SurveyResponses | None, outdir: str | Path) -> list[str]:
    """Write table CSVs/TXTs and one scatter SVG per user; returns filenames."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if survey is not None:
        header, rows = render_experiential(table_experiential(survey))
        write_table_csv(outdir / "table1.csv", header, rows)
        write_table_text(outdir / "table1.txt", header, rows)
        written += ["table1.csv", "table1.txt"]
    header, rows = render_means(table_means(bundle))
    write_table_csv(outdir / "table2.csv", header, rows)
    write_table_text(outdir / "table2.txt", header, rows)
    header, rows = render_correlations(table_correlations(bundle))
    write_table_csv(outdir / "table3.csv", header, rows)
    write_table_text(outdir / "table3.txt", header, rows)
    written += ["table2.csv", "table2.txt", "table3.csv", "table3.txt"]
    for u in bundle.users:
        name = f"user{u.user}.svg"
        scatter_svg(bundle, u.user, outdir / name)
        written.append(name)
    return written
