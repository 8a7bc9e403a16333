"""Identification of passive-joint friction and gripper release delay from logs.

Friction is fitted by trajectory shooting: a pendulum with the simulator's
friction law is simulated from the log's initial condition and the
parameters minimizing the mean squared angle error are searched on refined
grids followed by coordinate descent inside a box.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from ._kernels import pendulum_batch
from .dynamics import FrictionParams


class LogFormatError(ValueError):
    """Malformed log file; the message names the row and column."""


class FitError(RuntimeError):
    """Insufficient data or a fit whose residual exceeds the threshold."""


@dataclass
class OscillationLog:
    t: np.ndarray
    angle: np.ndarray
    axis: str = "pitch"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.angle = np.asarray(self.angle, dtype=float)
        if self.t.shape != self.angle.shape or self.t.ndim != 1:
            raise ValueError("t and angle must be 1-D arrays of equal length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def sample_rate(self) -> float:
        return (len(self.t) - 1) / (self.t[-1] - self.t[0])


@dataclass
class ReleaseEventLog:
    t_cmd: np.ndarray
    t_onset: np.ndarray

    def __post_init__(self):
        self.t_cmd = np.asarray(self.t_cmd, dtype=float).reshape(-1)
        self.t_onset = np.asarray(self.t_onset, dtype=float).reshape(-1)
        if self.t_cmd.shape != self.t_onset.shape:
            raise ValueError("t_cmd and t_onset must have equal length")
        if np.any(self.t_onset < self.t_cmd):
            k = int(np.flatnonzero(self.t_onset < self.t_cmd)[0])
            raise ValueError(f"trial {k}: onset precedes command")


# -- pendulum model -----------------------------------------------------------


def simulate_pendulum(
    theta0: float,
    dtheta0: float,
    t: np.ndarray,
    length: float,
    upsilon,
    eta,
    gravity: float = 9.81,
    max_dt: float = 1e-3,
) -> np.ndarray:
    """Angles of a damped pendulum at the times ``t`` (relative to ``t[0]``).

    Integration is semi-implicit Euler with the simulator's friction step:
    the speed shrinks by ``(upsilon |v| + eta) dt`` but never changes sign.
    ``upsilon`` and ``eta`` may be arrays of candidates, simulated together;
    the result then has shape ``(len(t),) + candidates.shape``.
    """
    ups = np.asarray(upsilon, dtype=float)
    eta_ = np.asarray(eta, dtype=float)
    shape = np.broadcast_shapes(ups.shape, eta_.shape)
    ups = np.ascontiguousarray(np.broadcast_to(ups, shape)).reshape(-1)
    eta_ = np.ascontiguousarray(np.broadcast_to(eta_, shape)).reshape(-1)
    t = np.ascontiguousarray(t, dtype=float)
    out = pendulum_batch(float(theta0), float(dtheta0), t, gravity / length, ups, eta_, max_dt)
    return out.reshape((len(t),) + shape)


def initial_state(log: OscillationLog, window: float = 0.2) -> tuple[float, float]:
    """Angle and rate at the first sample from a cubic fit over ``window`` seconds.

    Fitting a short polynomial instead of taking the first sample and a
    difference keeps measurement noise out of the initial condition.
    """
    tt = log.t - log.t[0]
    n = max(5, int(np.searchsorted(tt, window, side="right")))
    n = min(n, len(tt))
    deg = min(3, n - 1)
    coef = np.polyfit(tt[:n], log.angle[:n], deg)
    return float(coef[-1]), float(coef[-2]) if deg > 0 else 0.0


def count_periods(angle: np.ndarray) -> float:
    """Full oscillation periods, from sign changes about the final mean."""
    centered = angle - np.mean(angle[len(angle) // 2 :])
    s = np.sign(centered)
    s = s[s != 0]
    return np.count_nonzero(np.diff(s)) / 2.0


@dataclass
class FrictionFit:
    params: FrictionParams
    mse: float
    rms: float
    n_evals: int
    probed: np.ndarray = field(repr=False)  # (k, 3): upsilon, eta, mse

    @property
    def residual(self) -> float:
        return self.rms


def fit_friction(
    log: OscillationLog,
    pendulum_length: float,
    upsilon_range: tuple[float, float] = (0.0, 0.2),
    eta_range: tuple[float, float] = (0.0, 0.5),
    grid: int = 21,
    levels: int = 3,
    tol: float = 1e-6,
    max_rms: float = 0.05,
    gravity: float = 9.81,
    max_dt: float = 1e-3,
    max_sweeps: int = 200,
) -> FrictionFit:
    """Least-squares friction parameters of one passive axis.

    A ``grid x grid`` search over the box is refined ``levels`` times around
    the best point, then coordinate descent with shrinking steps polishes the
    estimate. The returned parameters are the best of every candidate
    evaluated, so the residual is never above any probed grid point.
    """
    if len(log.t) < 10:
        raise FitError("oscillation log has fewer than 10 samples")
    if count_periods(log.angle) < 2:
        raise FitError("oscillation log covers fewer than 2 full periods")
    period = 2.0 * math.pi * math.sqrt(pendulum_length / gravity)
    theta0, dtheta0 = initial_state(log, 0.1 * period)
    t = log.t - log.t[0]
    lo = np.array([upsilon_range[0], eta_range[0]], dtype=float)
    hi = np.array([upsilon_range[1], eta_range[1]], dtype=float)
    probed = []

    def evaluate(ups, eta):
        ups = np.clip(np.asarray(ups, dtype=float), lo[0], hi[0])
        eta = np.clip(np.asarray(eta, dtype=float), lo[1], hi[1])
        sim = simulate_pendulum(theta0, dtheta0, t, pendulum_length, ups, eta, gravity, max_dt)
        err = sim - log.angle.reshape((-1,) + (1,) * ups.ndim)
        mse = np.mean(err**2, axis=0)
        mse = np.where(np.isfinite(mse), mse, np.inf)
        probed.append(np.stack([ups.ravel(), eta.ravel(), mse.ravel()], axis=1))
        return ups, eta, mse

    best = None
    box_lo, box_hi = lo.copy(), hi.copy()
    for _ in range(levels + 1):
        gu = np.linspace(box_lo[0], box_hi[0], grid)
        ge = np.linspace(box_lo[1], box_hi[1], grid)
        uu, ee = np.meshgrid(gu, ge, indexing="ij")
        uu, ee, mse = evaluate(uu, ee)
        k = np.unravel_index(np.argmin(mse), mse.shape)
        best = np.array([uu[k], ee[k]])
        half = (box_hi - box_lo) / (grid - 1) * 2.0
        box_lo = np.maximum(lo, best - half)
        box_hi = np.minimum(hi, best + half)

    # coordinate descent; a bracket moves along the valley until it contains the minimum
    step = (box_hi - box_lo) / 4.0
    best_mse = float(np.min(probed[-1][:, 2]))
    offsets = np.linspace(-1.0, 1.0, 9)
    for _ in range(max_sweeps):
        if np.all(step <= tol):
            break
        for axis in (0, 1):
            if step[axis] <= tol:
                continue
            cand = np.tile(best, (len(offsets), 1))
            cand[:, axis] = best[axis] + offsets * step[axis] * 4.0
            cu, ce, mse = evaluate(cand[:, 0], cand[:, 1])
            j = int(np.argmin(mse))
            improved = mse[j] < best_mse
            if improved:
                best = np.array([cu[j], ce[j]])
                best_mse = float(mse[j])
            # keep the step while the minimum sits on the edge of the bracket
            if not (improved and j in (0, len(offsets) - 1)):
                step[axis] *= 0.25

    # Simplex polish along the narrow valley where viscous and dry friction
    # trade off, with the initial angle and rate free as well.
    def shoot(x):
        ups, eta = np.clip(x[:2], lo, hi)
        sim = simulate_pendulum(x[2], x[3], t, pendulum_length, ups, eta, gravity, max_dt)
        mse = float(np.mean((sim - log.angle) ** 2))
        mse = mse if math.isfinite(mse) else math.inf
        probed.append(np.array([[ups, eta, mse]]))
        return mse

    minimize(
        shoot,
        np.array([best[0], best[1], theta0, dtheta0]),
        method="Nelder-Mead",
        bounds=list(zip(lo, hi)) + [(None, None), (None, None)],
        options={"xatol": tol * 1e-2, "fatol": 1e-16, "maxfev": 600},
    )
    allp = np.concatenate([p.reshape(-1, 3) for p in probed], axis=0)
    j = int(np.argmin(allp[:, 2]))
    ups, eta, mse = allp[j]
    rms = math.sqrt(mse)
    if rms > max_rms:
        raise FitError(f"fit did not converge: rms angle error {rms:.4g} rad > {max_rms}")
    return FrictionFit(FrictionParams(float(ups), float(eta)), float(mse), rms, len(allp), allp)


def synthetic_oscillation_log(
    params: FrictionParams,
    length: float = 1.0,
    theta0: float = 0.8,
    duration: float = 30.0,
    rate: float = 100.0,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
    axis: str = "pitch",
    t0: float = 0.0,
) -> OscillationLog:
    """A log of a pendulum released from rest at ``theta0``."""
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    angle = simulate_pendulum(theta0, 0.0, t, length, params.upsilon, params.eta)
    if noise_std > 0:
        angle = angle + (rng or np.random.default_rng(0)).normal(0.0, noise_std, n)
    return OscillationLog(t + t0, angle, axis)


# -- release delay -------------------------------------------------------------


@dataclass(frozen=True)
class DelayEstimate:
    mean: float
    std: float
    n: int


def estimate_release_delay(log: ReleaseEventLog) -> DelayEstimate:
    """Sample mean and standard deviation (n-1 denominator) of onset - command."""
    d = log.t_onset - log.t_cmd
    if len(d) == 0:
        raise FitError("release log is empty")
    std = float(np.std(d, ddof=1)) if len(d) > 1 else 0.0
    return DelayEstimate(float(np.mean(d)), std, len(d))


# -- CSV logs -----------------------------------------------------------------


def _read_columns(path, columns: tuple[str, ...]) -> list[np.ndarray]:
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise LogFormatError(f"{path}: empty file, expected header {','.join(columns)}")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in columns if c not in header]
    if missing:
        raise LogFormatError(f"{path}: header missing column(s) {', '.join(missing)}")
    idx = [header.index(c) for c in columns]
    out = [[] for _ in columns]
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not x.strip() for x in row):
            continue
        if len(row) != len(header):
            raise LogFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for j, (c, i) in enumerate(zip(columns, idx)):
            try:
                v = float(row[i])
            except ValueError:
                raise LogFormatError(f"{path}: row {r}, column {c}: not a number: {row[i]!r}") from None
            if not math.isfinite(v):
                raise LogFormatError(f"{path}: row {r}, column {c}: non-finite value")
            out[j].append(v)
    return [np.array(x) for x in out]


def read_oscillation_log(path, axis: str = "pitch") -> OscillationLog:
    """CSV with header ``t,angle`` (s, rad)."""
    t, angle = _read_columns(path, ("t", "angle"))
    if len(t) == 0:
        raise LogFormatError(f"{path}: no data rows")
    try:
        return OscillationLog(t, angle, axis)
    except ValueError as e:
        raise LogFormatError(f"{path}: {e}") from None


def write_oscillation_log(path, log: OscillationLog) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "angle"])
        for t, a in zip(log.t, log.angle):
            w.writerow([repr(float(t)), repr(float(a))])


def read_release_log(path) -> ReleaseEventLog:
    """CSV with header ``t_cmd,t_onset`` (s), one row per trial."""
    t_cmd, t_onset = _read_columns(path, ("t_cmd", "t_onset"))
    if len(t_cmd) == 0:
        raise LogFormatError(f"{path}: no data rows")
    try:
        return ReleaseEventLog(t_cmd, t_onset)
    except ValueError as e:
        raise LogFormatError(f"{path}: {e}") from None


def write_release_log(path, log: ReleaseEventLog) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t_cmd", "t_onset"])
        for a, b in zip(log.t_cmd, log.t_onset):
            w.writerow([repr(float(a)), repr(float(b))])
