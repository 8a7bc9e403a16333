"""Command-line entry point: ``throwsim {train,eval,identify,rollout}``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 malformed
input data (logs, checkpoints), 4 runtime abort (divergence, failed fit).
``THROWSIM_SEED`` and ``THROWSIM_OUT`` override the seed and output
directory of the config file; command-line flags override both.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RunConfig, dump_run_config, load_run_config, run_config_from_dict
from .dynamics import FrictionParams
from .env import ThrowEnv, make_env, sample_target
from .evaluation import VariantMismatch, export_report, impact_statistics, outcome_counts, run_target_sweep
from .model import JOINT_NAMES, ModelError, load_model, nominal_model
from .ppo import DivergenceError, load_checkpoint, train
from .sysid import FitError, LogFormatError, estimate_release_delay, fit_friction, read_oscillation_log, read_release_log

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="throwsim", description="Throwing policies for an underactuated machine.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run configuration (YAML)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--workers", type=int, help="cap on concurrent environment shards")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("train", help="train a policy with PPO")
    common(sp)

    sp = sub.add_parser("eval", help="target sweep of a trained policy")
    sp.add_argument("--checkpoint", required=True)
    common(sp)

    sp = sub.add_parser("identify", help="fit friction or release delay from a log")
    sp.add_argument("kind", choices=("friction", "delay"))
    sp.add_argument("--log", required=True, help="CSV log (t,angle or t_cmd,t_onset)")
    sp.add_argument("--length", type=float, default=1.0, help="equivalent pendulum length (m)")
    sp.add_argument("--axis", default="pitch", choices=("pitch", "roll"))
    sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("rollout", help="one deterministic episode, full trace")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--distance", type=float, help="target distance along +x (default: sampled)")
    common(sp)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else run_config_from_dict({})
    if "THROWSIM_SEED" in os.environ:
        try:
            cfg.seed = int(os.environ["THROWSIM_SEED"])
        except ValueError:
            raise ConfigError(f"THROWSIM_SEED must be an integer, got {os.environ['THROWSIM_SEED']!r}") from None
    if "THROWSIM_OUT" in os.environ:
        cfg.output_dir = os.environ["THROWSIM_OUT"]
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.workers = args.workers
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def machine(cfg: RunConfig):
    return nominal_model() if cfg.model == "nominal" else load_model(cfg.model)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.yaml")
    return out


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    model = machine(cfg)
    out = _out_dir(cfg)
    env = make_env(model, cfg.env, cfg.train.n_envs, seed=cfg.seed, workers=cfg.workers)
    res = train(env, cfg.train, seed=cfg.seed, config_hash=cfg.hash(), log_path=out / "train_log.csv", checkpoint_dir=out)
    if res.log:
        last = res.log[-1]
        print(
            f"trained {cfg.train.iterations} iterations: mean return {last['mean_return']:.3f}, "
            f"landing rate {last['landing_rate']:.3f}"
        )
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    return EXIT_OK


def _load_policy(path, variant: str):
    try:
        policy = load_checkpoint(path)
    except (OSError, ValueError, KeyError) as e:
        raise LogFormatError(f"cannot read checkpoint {path}: {e}") from None
    if policy.variant != variant:
        raise VariantMismatch(f"checkpoint is for the {policy.variant} variant, config asks for {variant}")
    return policy


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    model = machine(cfg)
    policy = _load_policy(args.checkpoint, cfg.sweep.variant)
    out = _out_dir(cfg)
    records = run_target_sweep(policy, model, cfg.sweep, cfg.env, workers=cfg.workers)
    stats = impact_statistics(records)
    export_report(stats, records, out)
    counts = outcome_counts(records)
    print(f"{len(records)} episodes: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    for s in stats:
        print(
            f"  {s.distance:5.2f} m: landing rate {s.landing_rate:.3f}, mean downrange {s.mean_downrange:.3f} m, "
            f"std {s.std_downrange:.3f} / {s.std_crossrange:.3f} m"
        )
    return EXIT_OK


def cmd_identify(args) -> int:
    out = Path(args.out) if args.out else None
    if args.kind == "friction":
        log = read_oscillation_log(args.log, args.axis)
        fit = fit_friction(log, args.length)
        report = {
            "kind": "friction",
            "axis": args.axis,
            "upsilon": fit.params.upsilon,
            "eta": fit.params.eta,
            "rms_angle_error": fit.rms,
            "evaluations": fit.n_evals,
        }
    else:
        est = estimate_release_delay(read_release_log(args.log))
        report = {"kind": "delay", "mean": est.mean, "std": est.std, "n": est.n}
    text = yaml.safe_dump(report, sort_keys=False)
    print(text, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.kind}.yaml").write_text(text)
    return EXIT_OK


TRACE_COLUMNS = (
    ["step", "time"]
    + [f"q_{n}" for n in JOINT_NAMES]
    + [f"dq_{n}" for n in JOINT_NAMES]
    + [f"cmd_{n}" for n in JOINT_NAMES[:4]]
    + ["release_cmd", "event", "ball_x", "ball_y", "ball_z", "ball_vx", "ball_vy", "ball_vz"]
    + ["r_delta_err", "r_err3d", "r_actdiff", "r_act", "r_term", "reward"]
)


def cmd_rollout(args) -> int:
    cfg = resolve_config(args)
    model = machine(cfg)
    policy = _load_policy(args.checkpoint, cfg.env.variant)
    out = _out_dir(cfg)
    rows = []

    def trace(env, fire):
        k = int(env.sim_step[0])
        ball = np.concatenate([env.ball.pos[0], env.ball.vel[0]])
        rows.append(
            [k, k * env.cfg.dt, *env.q[0], *env.dq[0], *env.dq_ref[0], env.u[0, 4]]
            + ["release" if fire[0] else "", *ball]
            + [float("nan")] * 6
        )

    seeds = [np.random.SeedSequence(cfg.seed)]
    if args.distance is not None:
        target = np.array([[args.distance, 0.0, 0.0]])
    else:
        target = sample_target(np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])), model, cfg.env)[None]
    env = ThrowEnv(model, cfg.env, 1, seeds=seeds, targets=target, auto_reset=False, trace=trace)
    obs = env.reset()
    while env.active[0]:
        _, reward, _, info = env.step(policy(obs))
        obs = env.observe()
        t = env.last_terms
        rows[-1][-6:] = [t.delta_err[0], t.err3d[0], t.act_diff[0], t.act[0], t.termination[0], reward[0]]
    path = out / "trace.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([x if isinstance(x, (str, int)) else repr(float(x)) for x in r])
    outcome = ("running", "collided", "limits", "landed", "timeout")[int(env.outcome[0])]
    print(f"{len(rows)} simulator steps, outcome {outcome}, target {target[0, 0]:.3f} m; trace: {path}")
    if outcome == "landed":
        print(f"impact {env.ball.impact[0, 0]:.3f} m, error {np.linalg.norm(env.ball.impact[0] - target[0]):.3f} m")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "identify": cmd_identify, "rollout": cmd_rollout}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelError, VariantMismatch) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (LogFormatError, FileNotFoundError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FitError, np.linalg.LinAlgError, RuntimeError) as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
