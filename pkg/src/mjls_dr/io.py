"""File formats. Mode labels are 1-based in every file, 0-based in memory.

* model JSON: see :func:`mjls_dr.core.model_from_dict`
* counts CSV: header ``src,to_1,...,to_M``; one row per source mode
* event log CSV: one row per estimator step
* trajectory CSV: one row per simulation step (schema in :data:`TRAJECTORY_DOC`)
* gain JSON: ``K``, ``gamma``, ``alpha``, provenance and per-vertex margins
"""

from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath
from typing import Iterable

import numpy as np

from .ambiguity import AmbiguitySet, TransitionDataset
from .core import load_model, save_model  # noqa: F401  (re-exported)

TRAJECTORY_DOC = """\
t            step index
mode         true mode (1-based)
x<k>         true state component k
y<k>         measured output component k
u<k>         applied input component k (gain output plus dither)
xnorm        Euclidean norm of x
N            estimator window length N_t
theta_size   number of consistent paths |Θ_t|
r<i>         ambiguity radius of row i (inf while row i has no data)
gain_id      index of the active gain, -1 when no gain is held (u = dither)
certified    1 if the active gain is mean-square stable at every current vertex
events       ';'-separated tags: grow, reset, disturbance, synth_ok, synth_fail
"""


def _fmt(v: float) -> str:
    return repr(float(v))


# -- counts -------------------------------------------------------------------

def write_counts_csv(ds: TransitionDataset, path) -> None:
    M = ds.n_modes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src"] + [f"to_{j + 1}" for j in range(M)])
        for i in range(M):
            w.writerow([i + 1] + [int(c) for c in ds.counts[i]])


def read_counts_csv(path) -> TransitionDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "src":
        raise ValueError(f"{path}: missing 'src' header")
    M = len(rows[0]) - 1
    body = [r for r in rows[1:] if r]
    if len(body) != M:
        raise ValueError(f"{path}: expected {M} rows, found {len(body)}")
    counts = np.zeros((M, M), dtype=np.int64)
    for r in body:
        i = int(r[0]) - 1
        if not 0 <= i < M:
            raise ValueError(f"{path}: bad source label {r[0]}")
        counts[i] = [int(c) for c in r[1:]]
    return TransitionDataset(counts)


# -- estimator event log ------------------------------------------------------

def format_runs(runs) -> str:
    return "|".join(f"{start}:" + "-".join(str(m + 1) for m in modes) for start, modes in runs)


def format_transitions(trs) -> str:
    return "|".join(f"{tr.time}:{tr.src + 1}>{tr.dst + 1}" for tr in trs)


def write_event_log(rows: Iterable[dict], path) -> None:
    """Rows carry ``t, N, theta_size, resolved, transitions, reset``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "N", "theta_size", "resolved", "transitions", "reset"])
        for r in rows:
            w.writerow([r["t"], r["N"], r["theta_size"], format_runs(r["resolved"]),
                        format_transitions(r["transitions"]), int(r["reset"])])


# -- ambiguity snapshot -------------------------------------------------------

def write_ambiguity_csv(sets: list[AmbiguitySet], path) -> None:
    M = len(sets)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode"] + [f"p_hat_{j + 1}" for j in range(M)] + ["radius", "n_vertices"])
        for i, a in enumerate(sets):
            w.writerow([i + 1] + [_fmt(p) for p in a.p_hat] + [_fmt(a.radius), len(a.vertices)])


# -- gains ----------------------------------------------------------------------

def gain_to_dict(gain, reports=None) -> dict:
    d = {
        "K": np.asarray(gain.K).tolist(),
        "gamma": float(gain.gamma),
        "alpha": float(gain.alpha),
        "provenance": gain.provenance,
        "vertex_sets": [np.atleast_2d(v).tolist() for v in gain.vertex_sets],
    }
    if reports is not None:
        d["vertices"] = [
            {"P": P.tolist(), "stable": bool(r.stable), "spectral_radius": float(r.spectral_radius),
             "margins": [{"mode": i + 1, "margin": float(mg)} for i, mg in enumerate(r.margins)]}
            for P, r in reports
        ]
    return d


def write_gain_json(gain, path, reports=None) -> None:
    FsPath(path).write_text(json.dumps(gain_to_dict(gain, reports), indent=2))


def read_gain_json(path) -> np.ndarray:
    return np.array(json.loads(FsPath(path).read_text())["K"], dtype=float)


# -- trajectories --------------------------------------------------------------

def write_trajectory_csv(rec, path) -> None:
    ns, ny, na = rec.x.shape[1], rec.y.shape[1], rec.u.shape[1]
    M = rec.radii.shape[1]
    header = (["t", "mode"] + [f"x{k + 1}" for k in range(ns)] + [f"y{k + 1}" for k in range(ny)]
              + [f"u{k + 1}" for k in range(na)] + ["xnorm", "N", "theta_size"]
              + [f"r{i + 1}" for i in range(M)] + ["gain_id", "certified", "events"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(rec.t)):
            w.writerow([int(rec.t[k]), int(rec.mode[k]) + 1]
                       + [_fmt(v) for v in rec.x[k]] + [_fmt(v) for v in rec.y[k]]
                       + [_fmt(v) for v in rec.u[k]]
                       + [_fmt(rec.xnorm[k]), int(rec.N[k]), int(rec.theta_size[k])]
                       + [_fmt(v) for v in rec.radii[k]]
                       + [int(rec.gain_id[k]), int(rec.certified[k]), ";".join(rec.events[k])])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Columns as arrays (``mode`` converted back to 0-based, ``events`` as lists)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory")
    out: dict[str, np.ndarray] = {}
    for key in rows[0]:
        if key == "events":
            out[key] = np.array([r[key].split(";") if r[key] else [] for r in rows], dtype=object)
        elif key in ("t", "mode", "N", "theta_size", "gain_id", "certified"):
            out[key] = np.array([int(r[key]) for r in rows])
        else:
            out[key] = np.array([float(r[key]) for r in rows])
    out["mode"] = out["mode"] - 1
    return out
