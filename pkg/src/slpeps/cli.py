"""
Command-line batch tool.

``slpeps run`` evolves a PEPS through a schedule of phases and writes a
trajectory CSV, checkpoints and optionally a sampling report;
``slpeps verify`` runs the oracle-backed self-check.

Options can also be given in a ``key=value`` file (``--config``); keys are
the long option names without dashes, ``phase`` may be repeated, and
command-line flags take precedence.
"""

import argparse
import logging
import os
import sys

from .errors import CapacityError
from .evolution import (
    CheckpointWriter,
    Phase,
    TrajectoryWriter,
    TrotterSchedule,
    read_sidecar,
    run_evolution,
)
from .models import Heisenberg
from .observables import metropolis_energy, sampling_csv_rows
from .peps import init_neel, init_random, load_checkpoint, save_checkpoint

log = logging.getLogger("slpeps")

SHORTHAND_STEPS = 20000
PHASE_KEYS = {"dt": float, "steps": int, "D": int, "Dt": int, "dt_eff": int}


class UsageError(Exception):
    """Invalid command line or configuration."""


def parse_lattice(text):
    try:
        m, n = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"lattice must look like MxN, got {text!r}") from None
    if m < 1 or n < 1:
        raise UsageError(f"lattice sizes must be positive, got {text!r}")
    return m, n


def parse_phase(text):
    """``dt=..,steps=..,D=..,Dt=..,dt_eff=..`` to a :class:`Phase`."""
    fields = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in PHASE_KEYS:
            raise UsageError(f"bad phase item {item!r}; expected keys {sorted(PHASE_KEYS)}")
        try:
            fields[key] = PHASE_KEYS[key](value)
        except ValueError:
            raise UsageError(f"bad value in phase item {item!r}") from None
    missing = set(PHASE_KEYS) - set(fields)
    if missing:
        raise UsageError(f"phase {text!r} lacks {sorted(missing)}")
    try:
        return Phase(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def read_config_file(path):
    """``key=value`` lines; ``#`` starts a comment; repeated keys accumulate."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            entries.append((key.strip().replace("-", "_"), value.strip()))
    return entries


def _positive(kind):
    def conv(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return value
    return conv


def build_parser():
    p = argparse.ArgumentParser(prog="slpeps", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="imaginary time evolution of a PEPS")
    r.add_argument("--config", help="key=value file; flags take precedence")
    r.add_argument("--lattice", help="lattice size MxN")
    r.add_argument("--method", choices=("slte", "als"))
    r.add_argument("--phase", action="append", help="dt=..,steps=..,D=..,Dt=..,dt_eff=.. "
                   "(repeatable, applied in order)")
    r.add_argument("--D", type=_positive(int), help="single-phase shorthand: bond dimension")
    r.add_argument("--Dt", type=_positive(int), help="single-phase shorthand: boundary bond cap")
    r.add_argument("--dt_eff", type=_positive(int),
                   help="single-phase shorthand: boundary physical cap")
    r.add_argument("--dt", type=_positive(float), help="single-phase shorthand: time step")
    r.add_argument("--steps", type=_positive(int),
                   help=f"single-phase shorthand: steps (default {SHORTHAND_STEPS})")
    r.add_argument("--eps", type=_positive(float), help="ALS spectral cutoff (default 1e-6)")
    r.add_argument("--Dcut", type=_positive(int),
                   help="double-layer bond cap for energies and ALS (default 4 D^2)")
    r.add_argument("--split", choices=("self-contraction", "svd-split"))
    r.add_argument("--init", choices=("random", "neel"), help="initial state (default random)")
    r.add_argument("--seed", type=int, help="seed of the initial state and sampling")
    r.add_argument("--sample", type=_positive(int), help="Metropolis samples per chain")
    r.add_argument("--burn", type=int, help="Metropolis burn-in steps (default 1000)")
    r.add_argument("--seeds", type=_positive(int), help="number of independent chains")
    r.add_argument("--project-sz0", action="store_true", default=None,
                   help="restrict sampling to total Sz = 0")
    r.add_argument("--out", help="output directory (default ./slpeps-out)")
    r.add_argument("--checkpoint-every", type=int, help="checkpoint cadence in steps (0: off)")
    r.add_argument("--energy-every", type=_positive(int), help="energy cadence in steps")
    r.add_argument("--anneal-threshold", type=float,
                   help="advance phase when the relative energy rate drops below this")
    r.add_argument("--fixed-wall", action="store_true", default=None,
                   help="write wall_ms as 0 for byte-reproducible trajectories")
    r.add_argument("--resume", help="checkpoint file to continue from")
    r.add_argument("-v", "--verbose", action="store_true")

    v = sub.add_parser("verify", help="oracle-backed self-check")
    v.add_argument("--quick", action="store_true", help="fast subset only")
    v.add_argument("--dt-eff", type=_positive(int), dest="force_dt_eff",
                   help="add a probe of the environment check with this physical cap")
    return p


DEFAULTS = {
    "method": "slte", "eps": 1e-6, "Dcut": None, "split": "self-contraction",
    "init": "random", "seed": 0, "sample": None, "burn": 1000, "seeds": 1,
    "project_sz0": False, "out": "slpeps-out", "checkpoint_every": 0,
    "energy_every": 100, "anneal_threshold": 1e-6, "fixed_wall": False, "resume": None,
}


def resolve_run_config(args, parser):
    """Merge file entries under command-line flags and validate."""
    values = {k: getattr(args, k) for k in vars(args)}
    file_phases = []
    if args.config:
        try:
            entries = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        actions = {a.dest: a for a in parser._actions}
        for key, text in entries:
            if key == "phase":
                file_phases.append(text)
                continue
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            if values.get(key) is not None:
                continue  # flag wins
            act = actions[key]
            if isinstance(act, argparse._StoreTrueAction):
                values[key] = text.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    values[key] = act.type(text) if act.type else text
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config key {key}: {exc}") from None
    for key, default in DEFAULTS.items():
        if values.get(key) is None:
            values[key] = default
    if values.get("lattice") is None:
        raise UsageError("--lattice is required")
    values["lattice"] = parse_lattice(values["lattice"])

    phase_texts = args.phase or file_phases
    phases = [parse_phase(t) for t in phase_texts]
    shorthand = {k: values.get(k) for k in ("D", "Dt", "dt_eff", "dt", "steps")}
    if any(v is not None for v in shorthand.values()):
        if phases:
            raise UsageError("give either --phase or the single-phase shorthand, not both")
        needed = [k for k in ("D", "dt") if shorthand[k] is None]
        if needed:
            raise UsageError(f"single-phase shorthand needs {needed}")
        D = shorthand["D"]
        phases = [Phase(shorthand["dt"], shorthand["steps"] or SHORTHAND_STEPS, D,
                        shorthand["Dt"] or 2 * D, shorthand["dt_eff"] or 2 * D)]
    if not phases:
        raise UsageError("the schedule has no phases")
    values["phases"] = phases
    if values["sample"] is not None and values["burn"] < 0:
        raise UsageError("--burn must be >= 0")
    return values


def _write_sampling(cfg, state, model, out):
    m, n = state.m, state.n
    rows = []
    for k in range(cfg["seeds"]):
        seed = cfg["seed"] + k
        energy, err, acc = metropolis_energy(state, model, cfg["sample"], cfg["burn"], seed,
                                             cfg["project_sz0"])
        rows.append({"seed": seed, "samples": cfg["sample"], "acceptance": acc,
                     "energy": energy, "stderr": err})
        print(f"sampling seed {seed}: E = {energy:.12g} +- {err:.12g} "
              f"(acceptance {acc:.12g}, {m}x{n})")
    with open(os.path.join(out, "sampling.csv"), "w") as fh:
        fh.write(sampling_csv_rows(rows))


def run(cfg):
    """Execute a resolved configuration; returns the exit status."""
    m, n = cfg["lattice"]
    model = Heisenberg()
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    schedule = TrotterSchedule(tuple(cfg["phases"]), anneal_threshold=cfg["anneal_threshold"])
    start = None
    if cfg["resume"]:
        state = load_checkpoint(cfg["resume"])
        if (state.m, state.n) != (m, n):
            raise UsageError(f"checkpoint is {state.m}x{state.n}, config says {m}x{n}")
        start = read_sidecar(cfg["resume"])
    elif cfg["init"] == "neel":
        state = init_neel(m, n)
    else:
        state = init_random(m, n, cfg["phases"][0].D, cfg["seed"])
    ckdir = os.path.join(out, "checkpoints")
    checkpoint = None
    if cfg["checkpoint_every"]:
        os.makedirs(ckdir, exist_ok=True)
        checkpoint = CheckpointWriter(ckdir, cfg["checkpoint_every"])
    writer = TrajectoryWriter(os.path.join(out, "trajectory.csv"), append=start is not None)

    def echo(rec, st):
        print(f"step {rec.step} tau {rec.tau:.12g} energy {rec.energy:.12g}", flush=True)

    state, traj = run_evolution(
        state, model, schedule, cfg["method"], observers=(writer, echo),
        energy_every=cfg["energy_every"], D_cut=cfg["Dcut"], eps=cfg["eps"],
        split=cfg["split"], checkpoint=checkpoint, fixed_wall=cfg["fixed_wall"], start=start)
    save_checkpoint(state, os.path.join(out, "final.slp"))
    for err in traj.errors:
        print(f"warning: {err}", file=sys.stderr)
    if cfg["sample"]:
        _write_sampling(cfg, state, model, out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        from .verify import run_checks

        ok, _ = run_checks(quick=args.quick, dt_eff=args.force_dt_eff)
        return 0 if ok else 1
    run_parser = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    try:
        cfg = resolve_run_config(args, run_parser.choices["run"])
        return run(cfg)
    except UsageError as exc:
        print(f"slpeps run: error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"slpeps run: capacity exceeded: {exc}", file=sys.stderr)
        return 3
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"slpeps run: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
