"""Closed-loop experiments: plant, mode estimator, ambiguity sets and controller.

Per step ``t``: the (possibly disturbed) state is measured, the estimator
consumes ``y_t`` and the previous input, newly agreed transitions update the
counts, the ambiguity sets are rebuilt at confidence ``β_t`` and the
controller emits ``u_t = K y_t + e_u`` with ``e_u ~ N(0, ε I)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ambiguity as amb
from .control import (ControllerGain, SynthesisError, closed_loop, second_moment_radius,
                      simplex_vertices, synthesize_output_feedback, synthesize_state_feedback,
                      vertex_matrices)
from .core import MJLSModel, ModelError, TransitionMatrix, load_model, sample_chain
from .estimator import init_observer, step

log = logging.getLogger(__name__)

CONTROLLERS = ("robust", "stochastic", "dr", "none", "random")


@dataclass
class Disturbance:
    time: int
    vector: np.ndarray

    @classmethod
    def parse(cls, text: str) -> "Disturbance":
        """``"50:3,-2"`` -> additive ``(3, -2)`` at ``t = 50``."""
        try:
            t, vec = text.split(":", 1)
            return cls(int(t), np.array([float(v) for v in vec.split(",")]))
        except ValueError as exc:
            raise ValueError(f"bad disturbance spec {text!r}; expected t:v1,v2,...") from exc


@dataclass
class ExperimentConfig:
    """Experiment parameters.

    ``controller`` is one of :data:`CONTROLLERS`: ``random`` drives the plant
    with ``N(0, I)`` inputs (estimation only) and ``none`` applies dither only.
    """

    model: MJLSModel | str
    controller: str = "dr"
    T: int = 100
    seed: int = 0
    n_c: int = 2
    epsilon: float = 1e-6
    x0: np.ndarray | None = None  # defaults to all ones
    theta0: int | None = None  # defaults to a uniform draw
    disturbance: Disturbance | None = None
    beta_scale: float = 0.5  # β_t = beta_scale (t+1)^-beta_power
    beta_power: float = 2.0
    cadence: int = 10
    radius_change: float = 0.1
    alpha: float | None = None
    pathwise_rank_required: bool = False

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = load_model(self.model)
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.model.P is None:
            raise ModelError("experiments need a transition matrix P in the model")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
            if self.x0.shape != (self.model.ns,):
                raise ValueError("x0 has the wrong dimension")
        if self.disturbance is not None and self.disturbance.vector.shape != (self.model.ns,):
            raise ValueError("disturbance vector has the wrong dimension")

    def beta(self, t: int) -> float:
        return self.beta_scale * (t + 1) ** -self.beta_power


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    mode: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    xnorm: np.ndarray
    N: np.ndarray
    theta_size: np.ndarray
    radii: np.ndarray
    gain_id: np.ndarray
    certified: np.ndarray
    events: list
    gains: list = field(default_factory=list)  # (t, ControllerGain)
    transitions: list = field(default_factory=list)
    counts: np.ndarray | None = None
    true_window_always_consistent: bool = True

    def harvest_errors(self) -> int:
        return sum(1 for tr in self.transitions
                   if (self.mode[tr.time], self.mode[tr.time + 1]) != (tr.src, tr.dst))

    def first_synthesis_time(self) -> int | None:
        return self.gains[0][0] if self.gains else None


def recovery_time(rec: TrajectoryRecord, t_dist: int, frac: float = 0.05) -> int | None:
    """Steps after ``t_dist`` until ``‖x‖ <= frac·‖x_{t_dist}‖`` (None if never)."""
    ref = rec.xnorm[t_dist]
    for k in range(t_dist, len(rec.t)):
        if rec.xnorm[k] <= frac * ref:
            return k - t_dist
    return None


class _GainScheduler:
    """Holds the active gain and decides when to re-synthesize."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = cfg.model
        self.K = np.zeros((self.model.na, self.model.ny))
        self.gain: ControllerGain | None = None
        self.gain_id = -1
        self.M = None
        self.last_attempt: int | None = None
        self.last_radii: np.ndarray | None = None
        self.cache: dict = {}

    def fixed(self, vertex_sets, provenance):
        try:
            self.M = synthesize_state_feedback(self.model, vertex_sets)
        except SynthesisError as exc:
            raise SynthesisError(f"{provenance} controller: {exc}") from exc
        res = synthesize_output_feedback(self.model, vertex_sets, self.M, alpha=self.cfg.alpha,
                                         provenance=provenance)
        if not res.feasible:
            raise SynthesisError(f"{provenance} controller: output-feedback LMI infeasible "
                                 f"(best gamma {res.gamma:.3g})")
        self.gain, self.K, self.gain_id = res.gain, res.gain.K, 0
        return res.gain

    def due(self, t, radii) -> bool:
        if self.last_attempt is None or t - self.last_attempt >= self.cfg.cadence:
            return True
        old = self.last_radii
        with np.errstate(invalid="ignore"):
            shrunk = (radii < (1.0 - self.cfg.radius_change) * old) | (np.isinf(old) & np.isfinite(radii))
        return bool(np.any(shrunk))

    def _synthesize(self, vertex_sets, t):
        key = tuple(np.round(np.atleast_2d(v), 12).tobytes() for v in vertex_sets)
        if key in self.cache:
            return self.cache[key]
        res = None
        if self.M is not None:
            res = synthesize_output_feedback(self.model, vertex_sets, self.M, alpha=self.cfg.alpha,
                                             provenance=f"dr({t})")
        if res is None or not res.feasible:
            # the held M may be the obstacle; recompute it for the current sets
            try:
                M = synthesize_state_feedback(self.model, vertex_sets)
            except SynthesisError:
                M = None
            if M is not None:
                self.M = M
                res = synthesize_output_feedback(self.model, vertex_sets, M, alpha=self.cfg.alpha,
                                                 provenance=f"dr({t})")
        gain = res.gain if res is not None and res.feasible else None
        self.cache[key] = gain
        return gain

    def maybe_update(self, t, sets) -> str | None:
        radii = np.array([s.radius for s in sets])
        if not self.due(t, radii):
            return None
        self.last_attempt, self.last_radii = t, radii
        gain = self._synthesize([s.vertices for s in sets], t)
        if gain is None:
            return "synth_fail"
        if self.gain is None or gain is not self.gain:
            self.gain, self.K = gain, gain.K
            self.gain_id += 1
        return "synth_ok"

    def certified(self, sets) -> bool:
        if self.gain is None:
            return False
        Acl = closed_loop(self.model, self.K)
        return all(second_moment_radius(Acl, P) < 1.0 for P in vertex_matrices([s.vertices for s in sets]))


def run_experiment(cfg: ExperimentConfig) -> TrajectoryRecord:
    m: MJLSModel = cfg.model
    P = TransitionMatrix(m.P).P
    ss = np.random.SeedSequence(cfg.seed)
    chain_ss, noise_ss, init_ss = ss.spawn(3)
    theta0 = cfg.theta0 if cfg.theta0 is not None else int(np.random.default_rng(init_ss).integers(m.n_modes))
    modes = sample_chain(P, theta0, cfg.T, np.random.default_rng(chain_ss))
    rng = np.random.default_rng(noise_ss)
    dither = math.sqrt(cfg.epsilon)

    sched = _GainScheduler(cfg)
    gains: list = []
    if cfg.controller == "robust":
        gains.append((0, sched.fixed(simplex_vertices(m.n_modes), "robust")))
    elif cfg.controller == "stochastic":
        gains.append((0, sched.fixed([P[i:i + 1] for i in range(m.n_modes)], "stochastic")))

    T = cfg.T
    X = np.zeros((T + 1, m.ns))
    Y = np.zeros((T + 1, m.ny))
    U = np.zeros((T + 1, m.na))
    Nt = np.zeros(T + 1, dtype=int)
    TS = np.zeros(T + 1, dtype=int)
    R = np.zeros((T + 1, m.n_modes))
    GID = np.zeros(T + 1, dtype=int)
    CERT = np.zeros(T + 1, dtype=int)
    events: list[list[str]] = []
    harvested = []
    ds = amb.TransitionDataset.empty(m.n_modes)
    truth_ok = True

    x = np.ones(m.ns) if cfg.x0 is None else cfg.x0.copy()
    state = None
    for t in range(T + 1):
        ev: list[str] = []
        if cfg.disturbance is not None and t == cfg.disturbance.time:
            x = x + cfg.disturbance.vector
            ev.append("disturbance")
        theta = int(modes[t])
        y = m.C[theta] @ x
        if state is None:
            state = init_observer(m, y, cfg.n_c, cfg.pathwise_rank_required, t0=0)
        else:
            state, se = step(state, m, y, U[t - 1])
            if se.window_grown:
                ev.append("grow")
            if se.reset:
                ev.append("reset")
            if se.transitions:
                harvested.extend(se.transitions)
                ds = amb.update_counts(ds, se.transitions)
        # the true window path must be consistent unless a disturbance sits inside the window
        d = cfg.disturbance
        if d is None or not state.window_start < d.time <= t:
            if tuple(int(v) for v in modes[state.window_start:t + 1]) not in state.theta:
                truth_ok = False

        sets = amb.build_all(ds, cfg.beta(t))
        if cfg.controller == "dr":
            tag = sched.maybe_update(t, sets)
            if tag:
                ev.append(tag)
                if tag == "synth_ok" and (not gains or gains[-1][1] is not sched.gain):
                    gains.append((t, sched.gain))

        if cfg.controller == "random":
            u = rng.standard_normal(m.na)
        else:
            u = sched.K @ y + dither * rng.standard_normal(m.na)

        X[t], Y[t], U[t] = x, y, u
        Nt[t], TS[t] = state.N, len(state.theta)
        R[t] = [s.radius for s in sets]
        GID[t] = sched.gain_id
        CERT[t] = int(sched.certified(sets)) if cfg.controller in ("robust", "stochastic", "dr") else 0
        events.append(ev)
        x = m.A[theta] @ x + m.B[theta] @ u

    return TrajectoryRecord(
        t=np.arange(T + 1), mode=np.asarray(modes), x=X, y=Y, u=U, xnorm=np.linalg.norm(X, axis=1),
        N=Nt, theta_size=TS, radii=R, gain_id=GID, certified=CERT, events=events, gains=gains,
        transitions=harvested, counts=ds.counts.copy(), true_window_always_consistent=truth_ok,
    )


def summarize(rec: TrajectoryRecord, P=None) -> dict:
    """Per-trial statistics; only uses columns that the trajectory CSV also holds."""
    out = {
        "terminal_N": int(rec.N[-1]),
        "max_theta": int(rec.theta_size.max()),
        "resets": sum("reset" in e for e in rec.events),
        "final_xnorm": float(rec.xnorm[-1]),
        "mean_sq_xnorm": float(np.mean(rec.xnorm ** 2)),
    }
    if rec.transitions or rec.counts is not None:
        out["harvested"] = len(rec.transitions)
        out["harvest_errors"] = rec.harvest_errors()
    return out


@dataclass
class BatchSummary:
    n_trials: int
    terminal_N: dict
    max_theta: int
    frac_max_theta_le4: float
    harvested: int
    harvest_errors: int
    coverage_hits: int
    coverage_total: int
    resets: int
    trials: list

    @property
    def harvest_accuracy(self) -> float:
        return 1.0 if self.harvested == 0 else 1.0 - self.harvest_errors / self.harvested

    @property
    def coverage_rate(self) -> float:
        return float("nan") if self.coverage_total == 0 else self.coverage_hits / self.coverage_total

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "trials"}
        d["terminal_N"] = {str(k): v for k, v in self.terminal_N.items()}
        d["harvest_accuracy"] = self.harvest_accuracy
        d["coverage_rate"] = self.coverage_rate
        return d


def batch_trials(cfg: ExperimentConfig, n_trials: int, map_fn=map, keep_records: bool = False) -> BatchSummary:
    """Run ``n_trials`` copies with seeds ``cfg.seed + k``.

    ``map_fn`` may be a parallel map (e.g. ``ProcessPoolExecutor.map``);
    aggregation does not depend on the order of results.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    cfgs = [_with_seed(cfg, cfg.seed + k) for k in range(n_trials)]
    recs = list(map_fn(run_experiment, cfgs))
    P = np.asarray(cfg.model.P)
    terminal: dict[int, int] = {}
    hits = total = 0
    for rec in recs:
        terminal[int(rec.N[-1])] = terminal.get(int(rec.N[-1]), 0) + 1
        sets = amb.build_all(amb.TransitionDataset(rec.counts), cfg.beta(cfg.T))
        for i, s in enumerate(sets):
            if math.isfinite(s.radius):
                total += 1
                hits += amb.coverage_check(P[i], s)
    return BatchSummary(
        n_trials=n_trials,
        terminal_N=dict(sorted(terminal.items())),
        max_theta=int(max(r.theta_size.max() for r in recs)),
        frac_max_theta_le4=float(np.mean([r.theta_size.max() <= 4 for r in recs])),
        harvested=sum(len(r.transitions) for r in recs),
        harvest_errors=sum(r.harvest_errors() for r in recs),
        coverage_hits=hits, coverage_total=total,
        resets=sum(sum("reset" in e for e in r.events) for r in recs),
        trials=recs if keep_records else [summarize(r) for r in recs],
    )


def _with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    from dataclasses import replace
    return replace(cfg, seed=seed)


@dataclass
class EstimationRun:
    modes: np.ndarray
    rows: list  # dicts for the event log
    states: list


def run_estimation(model: MJLSModel, T: int, seed: int = 0, n_c: int = 2, input_scale: float = 1.0,
                   x0=None, theta0: int | None = None, keep_states: bool = False) -> EstimationRun:
    """Open-loop run with ``u_t ~ N(0, input_scale² I)``; logs every estimator step."""
    if model.P is None:
        raise ModelError("estimation runs need a transition matrix P in the model")
    ss = np.random.SeedSequence(seed)
    chain_ss, noise_ss, init_ss = ss.spawn(3)
    rng_init = np.random.default_rng(init_ss)
    if theta0 is None:
        theta0 = int(rng_init.integers(model.n_modes))
    x = rng_init.standard_normal(model.ns) if x0 is None else np.asarray(x0, dtype=float)
    modes = sample_chain(model.P, theta0, T, np.random.default_rng(chain_ss))
    rng = np.random.default_rng(noise_ss)
    rows, states = [], []
    state, u_prev = None, None
    for t in range(T + 1):
        th = int(modes[t])
        y = model.C[th] @ x
        if state is None:
            state = init_observer(model, y, n_c)
            ev = None
        else:
            state, ev = step(state, model, y, u_prev)
        rows.append({"t": t, "N": state.N, "theta_size": len(state.theta),
                     "resolved": ev.resolved if ev else (), "transitions": ev.transitions if ev else (),
                     "reset": bool(ev.reset) if ev else False})
        if keep_states:
            states.append(state)
        u_prev = input_scale * rng.standard_normal(model.na)
        x = model.A[th] @ x + model.B[th] @ u_prev
    return EstimationRun(np.asarray(modes), rows, states)
