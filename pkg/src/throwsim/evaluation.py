"""Target sweeps with a fixed policy and impact statistics.

A sweep throws at ground targets placed along the downrange (+x) axis, each
distance repeated from independent random start poses. Every episode has
its own seed derived from ``(sweep seed, distance index, repeat)``, so
records do not depend on batching or on the number of workers.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import EnvConfig, SweepConfig
from .env import ACT_DIM, COLLIDED, LANDED, LIMITS, OBS_DIM, ThrowEnv
from .kinematics import hanging_configuration
from .model import MachineModel

TAGS = ("landed", "collided", "limits", "no_release", "timeout")

RECORD_COLUMNS = (
    "distance",
    "repeat",
    "target_x",
    "target_y",
    "target_z",
    "impact_x",
    "impact_y",
    "impact_z",
    "downrange_error",
    "crossrange_error",
    "release_step",
    "seed",
    "outcome",
)

SUMMARY_COLUMNS = (
    "distance",
    "episodes",
    "landed",
    "landing_rate",
    "mean_impact_x",
    "mean_impact_y",
    "mean_downrange",
    "mean_downrange_error",
    "std_downrange",
    "std_crossrange",
    "mean_error_3d",
)


class VariantMismatch(ValueError):
    """Policy dimensions do not fit the sweep variant."""


@dataclass
class ImpactRecord:
    distance: float
    repeat: int
    target: tuple
    impact: tuple
    downrange_error: float  # nan unless landed
    crossrange_error: float
    release_step: int  # simulator step of the effective release, -1 if none
    seed: int
    outcome: str

    def __eq__(self, other):
        if not isinstance(other, ImpactRecord):
            return NotImplemented
        a = dataclasses.astuple(self)
        b = dataclasses.astuple(other)
        return all(_same(x, y) for x, y in zip(_flatten(a), _flatten(b)))


def _flatten(xs):
    for x in xs:
        if isinstance(x, tuple):
            yield from x
        else:
            yield x


def _same(x, y):
    if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
        return True
    return x == y


def episode_seed(sweep_seed: int, dist_idx: int, repeat: int) -> int:
    return int(np.random.SeedSequence([sweep_seed, dist_idx, repeat]).generate_state(1, np.uint64)[0])


def outcome_tag(outcome: int, released: bool) -> str:
    if outcome == LANDED:
        return "landed"
    if outcome == COLLIDED:
        return "collided"
    if outcome == LIMITS:
        return "limits"
    return "timeout" if released else "no_release"


def impact_errors(impact: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Downrange and crossrange error along the horizontal target direction."""
    d = np.asarray(target[:2], dtype=float)
    u = d / np.linalg.norm(d)
    e = np.asarray(impact[:2], dtype=float) - d
    return float(e @ u), float(-e[0] * u[1] + e[1] * u[0])


def nominal_start(model: MachineModel) -> np.ndarray:
    """Fixed start pose used when initial randomization is off."""
    qa = 0.5 * (model.lower[:4] + model.upper[:4])
    qa[0] = 0.0
    return hanging_configuration(qa)


class ScriptedPolicy:
    """Hand-written throw for exercising the harness without a trained network.

    Drives boom, dipper and telescope towards a raised goal pose with
    saturated proportional velocity commands and commands the release once
    the gripper center is above ``release_height``. The cabin is not moved.
    """

    def __init__(self, variant: str = "2d", goal=(0.7, -0.5, 1.0), gain: float = 3.0, release_height: float = 3.0):
        self.variant = variant
        self.goal = np.asarray(goal, dtype=float)
        self.gain = gain
        self.release_height = release_height

    @property
    def dims(self) -> tuple[int, int]:
        return OBS_DIM[self.variant], ACT_DIM[self.variant]

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        cab = 0 if self.variant == "2d" else 1
        q = obs[:, cab : cab + 3]  # latest boom, dipper, telescope
        z = obs[:, OBS_DIM[self.variant] - 10]  # height of the gripper center
        act = np.zeros((obs.shape[0], ACT_DIM[self.variant]))
        act[:, cab : cab + 3] = np.clip(self.gain * (self.goal - q), -1.0, 1.0)
        act[:, -1] = np.where(z > self.release_height, 3.0, -3.0)
        return act


def _run_chunk(policy, model, env_cfg, jobs, sweep: SweepConfig):
    n = len(jobs)
    targets = np.array([[d, 0.0, 0.0] for d, _, _, _ in jobs])
    seeds = [np.random.SeedSequence(s) for _, _, _, s in jobs]
    env = ThrowEnv(
        model,
        env_cfg,
        n_envs=n,
        seeds=seeds,
        targets=targets,
        auto_reset=False,
        initial_q=None if sweep.randomize_init else nominal_start(model),
    )
    obs = env.reset()
    while env.active.any():
        env.step(policy(obs))
        obs = env.observe()
    out = []
    for k, (dist, i, rep, seed) in enumerate(jobs):
        tag = outcome_tag(int(env.outcome[k]), bool(env.ball.released[k]))
        impact = env.ball.impact[k]
        if tag == "landed":
            dr, cr = impact_errors(impact, targets[k])
        else:
            dr = cr = float("nan")
        out.append(
            ImpactRecord(
                float(dist),
                int(rep),
                tuple(float(x) for x in targets[k]),
                tuple(float(x) for x in impact),
                dr,
                cr,
                int(env.release_step[k]),
                int(seed),
                tag,
            )
        )
    return out


def run_target_sweep(
    policy: Callable[[np.ndarray], np.ndarray],
    model: MachineModel,
    cfg: SweepConfig,
    env_cfg: EnvConfig | None = None,
    workers: int = 1,
    chunk_size: int = 600,
) -> list[ImpactRecord]:
    """One episode per (distance, repeat) with the deterministic ``policy``.

    ``env_cfg`` supplies everything except variant and controller, which come
    from the sweep. Episodes run in batches of ``chunk_size`` spread over at
    most ``workers`` threads; records come back sorted by (distance, repeat).
    """
    cfg.validate()
    env_cfg = dataclasses.replace(env_cfg or EnvConfig(), variant=cfg.variant, controller=cfg.controller)
    dims = getattr(policy, "dims", None)
    if dims is not None and tuple(dims) != (OBS_DIM[cfg.variant], ACT_DIM[cfg.variant]):
        raise VariantMismatch(
            f"policy expects {dims[0]} observations / {dims[1]} actions, "
            f"{cfg.variant} sweep provides {OBS_DIM[cfg.variant]} / {ACT_DIM[cfg.variant]}"
        )
    jobs = [
        (d, i, r, episode_seed(cfg.seed, i, r))
        for i, d in enumerate(cfg.distances)
        for r in range(cfg.repeats)
    ]
    chunks = [jobs[k : k + chunk_size] for k in range(0, len(jobs), chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        results = [_run_chunk(policy, model, env_cfg, c, cfg) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _run_chunk(policy, model, env_cfg, c, cfg), chunks))
    records = [r for chunk in results for r in chunk]
    records.sort(key=lambda r: (r.distance, r.repeat))
    return records


@dataclass
class DistanceStats:
    distance: float
    episodes: int
    landed: int
    landing_rate: float
    mean_impact: tuple  # (x, y) over landed episodes
    mean_downrange: float  # impact distance along the downrange axis
    mean_downrange_error: float
    std_downrange: float
    std_crossrange: float
    mean_error_3d: float


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def impact_statistics(records: list[ImpactRecord]) -> list[DistanceStats]:
    """Per-distance statistics over landed records; rates over all records.

    Standard deviations use the ``n - 1`` denominator (0 for a single landing).
    """
    out = []
    for dist in sorted({r.distance for r in records}):
        group = [r for r in records if r.distance == dist]
        landed = [r for r in group if r.outcome == "landed"]
        nan = float("nan")
        if landed:
            imp = np.array([r.impact for r in landed])
            tgt = np.array([r.target for r in landed])
            dr = np.array([r.downrange_error for r in landed])
            cr = np.array([r.crossrange_error for r in landed])
            stats = dict(
                mean_impact=(float(imp[:, 0].mean()), float(imp[:, 1].mean())),
                mean_downrange=float(dist + dr.mean()),
                mean_downrange_error=float(dr.mean()),
                std_downrange=_std(dr),
                std_crossrange=_std(cr),
                mean_error_3d=float(np.linalg.norm(imp - tgt, axis=1).mean()),
            )
        else:
            stats = dict(
                mean_impact=(nan, nan),
                mean_downrange=nan,
                mean_downrange_error=nan,
                std_downrange=nan,
                std_crossrange=nan,
                mean_error_3d=nan,
            )
        out.append(DistanceStats(dist, len(group), len(landed), len(landed) / len(group), **stats))
    return out


def outcome_counts(records: list[ImpactRecord]) -> dict[str, int]:
    counts = {t: 0 for t in TAGS}
    for r in records:
        counts[r.outcome] += 1
    return counts


def _f(x) -> str:
    return repr(float(x))


def write_records(path, records: list[ImpactRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(
                [_f(r.distance), r.repeat, *map(_f, r.target), *map(_f, r.impact)]
                + [_f(r.downrange_error), _f(r.crossrange_error), r.release_step, r.seed, r.outcome]
            )


def read_records(path) -> list[ImpactRecord]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != RECORD_COLUMNS:
        raise ValueError(f"{path}: unexpected header")
    out = []
    for row in rows[1:]:
        v = dict(zip(RECORD_COLUMNS, row))
        out.append(
            ImpactRecord(
                float(v["distance"]),
                int(v["repeat"]),
                (float(v["target_x"]), float(v["target_y"]), float(v["target_z"])),
                (float(v["impact_x"]), float(v["impact_y"]), float(v["impact_z"])),
                float(v["downrange_error"]),
                float(v["crossrange_error"]),
                int(v["release_step"]),
                int(v["seed"]),
                v["outcome"],
            )
        )
    return out


def export_report(stats: list[DistanceStats], records: list[ImpactRecord], path) -> dict[str, Path]:
    """Write ``records.csv``, ``summary.csv`` and ``impacts_long.csv`` into ``path``.

    ``impacts_long.csv`` has one row per landed episode with columns
    ``target_distance, impact_downrange, impact_crossrange`` (target
    distance against impact position, ready for a scatter plot).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = {
        "records": path / "records.csv",
        "summary": path / "summary.csv",
        "long": path / "impacts_long.csv",
    }
    write_records(files["records"], records)
    with open(files["summary"], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in stats:
            w.writerow(
                [_f(s.distance), s.episodes, s.landed, _f(s.landing_rate), _f(s.mean_impact[0])]
                + [_f(s.mean_impact[1]), _f(s.mean_downrange), _f(s.mean_downrange_error)]
                + [_f(s.std_downrange), _f(s.std_crossrange), _f(s.mean_error_3d)]
            )
    with open(files["long"], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["target_distance", "impact_downrange", "impact_crossrange"])
        for r in records:
            if r.outcome == "landed":
                w.writerow([_f(r.distance), _f(r.distance + r.downrange_error), _f(r.crossrange_error)])
    return files
