"""Command-line front end.

Subcommands ``generate``, ``pod``, ``train``, ``evaluate`` and ``compare``.
Every subcommand reads an optional JSON config (``--config``); any
``--key value`` flag overrides the matching config key.  Exit codes: 0 on
success, 1 on usage or configuration errors, 2 when training succeeded only
through the fallback of rejecting every candidate at some stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import types
import typing
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import io
from .features import as_form
from .fom import TRAINING_KAPPAS, CubicHeatConfig, NewtonError, cubic_heat_solve, fom_inner_product_weight
from .nested import TrainingConfig, train_nested, weight_grid
from .pod import PodBasis, SnapshotSet, compute_pod, load_basis, load_snapshots, save_basis, save_snapshots
from .regression import RomOperators, load_operators, save_operators
from .rom import cumulative_effectivity, integrate, relative_errors

__all__ = [
    "GenerateConfig",
    "PodConfig",
    "TrainConfig",
    "EvaluateConfig",
    "CompareConfig",
    "theta_provider",
    "evaluate_rom",
    "evaluation_table",
    "region_summary",
    "main",
]

log = logging.getLogger("nested_opinf")

EXIT_OK, EXIT_USAGE, EXIT_DEGRADED = 0, 1, 2
THREADS_ENV = "NESTED_OPINF_THREADS"
DEFAULT_FORM = "A:1,G"


class ConfigError(ValueError):
    """Invalid configuration or inputs detected before computing."""


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GenerateConfig(_Config):
    out: str = Field("data/train", description="output directory for snapshot files")
    kappas: list[float] = Field(list(TRAINING_KAPPAS), description="diffusion coefficients, one trajectory each")
    kappa_grid: Optional[tuple[float, float, int]] = Field(
        None, description="min, max, count of evenly spaced kappas; replaces kappas")
    n: int = Field(201, description="grid nodes including both boundaries")
    t_end: float = Field(0.2, description="final time")
    dt: float = Field(1e-3, description="time step")
    snapshot_stride: int = Field(1, description="record a snapshot every this many steps")
    seed: int = Field(0, description="recorded in the metadata; the solver itself is deterministic")
    csv: bool = Field(False, description="also write each trajectory as CSV")

    @model_validator(mode="after")
    def _check(self):
        for k in self.kappa_values():
            CubicHeatConfig(k, self.n, self.t_end, self.dt, self.snapshot_stride).n_steps
        steps = round(self.t_end / self.dt)
        if steps // self.snapshot_stride < 1:
            raise ValueError(f"t_end={self.t_end} gives single-snapshot trajectories; "
                             "need t_end >= dt * snapshot_stride")
        return self

    def kappa_values(self) -> list[float]:
        if self.kappa_grid is None:
            if not self.kappas:
                raise ValueError("kappas must not be empty")
            return list(self.kappas)
        lo, hi, count = self.kappa_grid
        if count < 1:
            raise ValueError("kappa_grid count must be >= 1")
        return np.linspace(lo, hi, count).tolist()


class PodConfig(_Config):
    snapshots: str = Field("data/train", description="snapshot directory")
    out: str = Field("basis.json", description="basis file (modes go next to it as .opnf)")
    r_max: int = Field(10, description="number of modes to keep")
    weight: Literal["trapezoid", "identity"] = Field("trapezoid", description="state inner product")


class _TrainingOptions(_Config):
    form: str = Field(DEFAULT_FORM, description="model form, e.g. 'c,A,H' or 'A:1,G'")
    theta: Literal["affine", "constant"] = Field(
        "affine", description="scaling coefficients: affine = [1, *param], constant = [1]")
    n_omega: int = Field(24, description="number of log-spaced weight combinations")
    omega_min: float = Field(1e-10, description="smallest candidate weight")
    omega_max: float = Field(1.0, description="largest candidate weight")
    omegas: Optional[list[list[float]]] = Field(
        None, description="explicit weight combinations (JSON list of lists); replaces the grid")
    delta_bar: float = Field(0.0, description="relative error slack of the selection rule")
    i_max: int = Field(1, description="iterative update count (1 = plain solve)")
    block_multiplier: float = Field(1.0, description="weight factor for previously learned entries")
    freeze_previous: bool = Field(False, description="pin previously learned entries")
    step: float = Field(1e-3, description="largest ROM integration step")
    workers: int = Field(1, description="threads for candidate evaluation")

    @field_validator("form")
    @classmethod
    def _form(cls, v):
        return str(as_form(v))

    def candidates(self) -> list:
        if self.omegas is not None:
            return [tuple(o) for o in self.omegas]
        return weight_grid(len(as_form(self.form)), self.n_omega, self.omega_min, self.omega_max)


class TrainConfig(_TrainingOptions):
    snapshots: str = Field("data/train", description="training snapshot directory")
    basis: str = Field("basis.json", description="basis file")
    out: str = Field("operators.json", description="operators file")
    log: str = Field("training_log.jsonl", description="training log (JSON lines)")
    stage_dir: Optional[str] = Field(None, description="directory for the operators of every stage")
    mode: Literal["nested", "standard"] = Field("nested", description="nested expansion or one standard sweep")
    r: int = Field(5, description="target reduced dimension")
    r0: Optional[int] = Field(None, description="start dimension (nested mode, default 1)")
    guess: Optional[str] = Field(None, description="operators file of dimension r0 used as initial guess")

    @model_validator(mode="after")
    def _check(self):
        if self.mode == "standard" and (self.guess is not None or self.r0 not in (None, self.r)):
            raise ValueError("standard mode uses r0=r and a zero initial guess")
        return self

    def start_dim(self) -> int:
        if self.mode == "standard":
            return self.r
        return 1 if self.r0 is None else self.r0


class EvaluateConfig(_Config):
    operators: str = Field("operators.json", description="operators file")
    basis: str = Field("basis.json", description="basis file")
    test_snapshots: str = Field("data/test", description="test snapshot directory")
    theta: Literal["affine", "constant"] = Field("affine", description="scaling coefficients")
    train_params: list[float] = Field(list(TRAINING_KAPPAS), description="first parameter values used in training")
    train_t_end: float = Field(0.2, description="end of the training time interval")
    step: float = Field(1e-3, description="largest ROM integration step")
    out: str = Field("evaluation.csv", description="per-cell table (kappa, t, rel_error, effectivity)")
    summary: str = Field("summary.json", description="region means and maxima")


class CompareConfig(_TrainingOptions):
    snapshots: str = Field("data/train", description="training snapshot directory")
    basis: str = Field("basis.json", description="basis file")
    r_values: list[int] = Field([3, 4, 5], description="reduced dimensions to compare")
    standard_n_omega: int = Field(225, description="grid size of the standard sweep")
    out: str = Field("compare.csv", description="per-r table")
    summary: str = Field("compare.json", description="per-r results as JSON")


COMMANDS = {
    "generate": (GenerateConfig, "solve the cubic heat equation and write snapshots"),
    "pod": (PodConfig, "compute a POD basis from snapshots"),
    "train": (TrainConfig, "learn ROM operators"),
    "evaluate": (EvaluateConfig, "relative error and effectivity tables"),
    "compare": (CompareConfig, "nested vs standard training for several r"),
}


# ---------------------------------------------------------------- evaluation

def theta_provider(kind: str):
    if kind == "constant":
        return lambda param, t: [1.0]
    if kind == "affine":
        return lambda param, t: [1.0, *np.atleast_1d(param).tolist()]
    raise ConfigError(f"unknown theta provider {kind!r}")


def evaluate_rom(ops: RomOperators, basis: PodBasis, snapshots: SnapshotSet, provider, step: float = 1e-3):
    """Roll out ``ops`` from the projected initial state of every trajectory.

    Returns one ``(param, times, states, rom_states, diverged)`` tuple per
    trajectory, ``rom_states`` being ``s x K``.
    """
    s = ops.dim
    if s > basis.r:
        raise ConfigError(f"operators have dimension {s}, basis only {basis.r} modes")
    out = []
    for j in range(snapshots.n_trajectories):
        tr = snapshots.trajectory(j)
        x0 = basis.coefficients(tr.states[:, :1], s)[:, 0]
        thetas = np.array([provider(tr.params[0], float(t)) for t in tr.times])
        sol = integrate(ops, x0, tr.times, thetas, step=step)
        out.append((tr.params[0], tr.times, tr.states, sol.states, sol.diverged))
    return out


def evaluation_table(results, basis: PodBasis, s: int) -> list[dict]:
    """Per-cell rows: first parameter, time, relative error and effectivity up to that time."""
    rows = []
    for param, times, X, Xr, diverged in results:
        rel = relative_errors(X, Xr, basis, s)
        eff = cumulative_effectivity(X, Xr, basis, s)
        kappa = float(np.atleast_1d(param)[0]) if np.size(param) else float("nan")
        for t, e, f in zip(times, rel, eff):
            rows.append({"kappa": kappa, "t": float(t), "rel_error": float(e), "effectivity": float(f),
                         "diverged": bool(diverged)})
    return rows


def region_summary(rows, train_params, train_t_end: float) -> dict:
    """Mean and max of both columns over the four parameter/time regions."""
    train_params = np.asarray(train_params, dtype=float)
    kappa = np.array([r["kappa"] for r in rows])
    t = np.array([r["t"] for r in rows])
    in_params = np.array([np.any(np.isclose(k, train_params, rtol=1e-12, atol=0.0)) for k in kappa])
    in_time = t <= train_t_end * (1 + 1e-12)
    regions = {
        "training_params/training_time": in_params & in_time,
        "training_params/full_time": in_params,
        "all_params/training_time": in_time,
        "all_params/full_time": np.ones_like(in_time),
    }
    out = {}
    for name, mask in regions.items():
        entry = {"cells": int(mask.sum())}
        for col in ("rel_error", "effectivity"):
            vals = np.array([r[col] for r in rows])[mask]
            vals = vals[~np.isnan(vals)]
            entry[col] = {
                "mean": io.encode_float(float(vals.mean())) if vals.size else None,
                "max": io.encode_float(float(vals.max())) if vals.size else None,
            }
        out[name] = entry
    return out


def _write_table(path, rows) -> None:
    cols = ["kappa", "t", "rel_error", "effectivity"]
    lines = [",".join(cols)] + [",".join(repr(float(r[c])) for c in cols) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- commands

def _workers(requested: int) -> int:
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return max(1, requested)
    try:
        cap = int(env)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from None
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return max(1, min(requested, cap))


def _load_inputs(snapshots_dir, basis_path):
    snaps, _ = load_snapshots(snapshots_dir)
    basis = load_basis(basis_path)
    if basis.n != snaps.n:
        raise ConfigError(f"basis has state dimension {basis.n}, snapshots have {snaps.n}")
    return snaps, basis


def _check_theta(form, provider, snaps: SnapshotSet) -> None:
    form = as_form(form)
    G = len(provider(snaps.params[0], float(snaps.times[0])))
    if G != form.n_groups:
        raise ConfigError(f"form {form} needs {form.n_groups} scaling coefficients, provider gives {G}")


def cmd_generate(cfg: GenerateConfig) -> int:
    sets, metas = [], []
    for kappa in cfg.kappa_values():
        fc = CubicHeatConfig(kappa, cfg.n, cfg.t_end, cfg.dt, cfg.snapshot_stride)
        sets.append(cubic_heat_solve(fc))
        metas.append({"kappa": kappa, "n": cfg.n, "dt": cfg.dt, "t_end": cfg.t_end,
                      "snapshot_stride": cfg.snapshot_stride, "seed": cfg.seed})
    snaps = SnapshotSet.concatenate(sets)
    save_snapshots(cfg.out, snaps, metas, csv=cfg.csv)
    log.info("wrote %d trajectories, %d snapshots to %s", snaps.n_trajectories, snaps.K, cfg.out)
    return EXIT_OK


def cmd_pod(cfg: PodConfig) -> int:
    snaps, _ = load_snapshots(cfg.snapshots)
    weight = fom_inner_product_weight(snaps.n) if cfg.weight == "trapezoid" else None
    basis = compute_pod(snaps, cfg.r_max, weight)
    save_basis(cfg.out, basis)
    log.info("wrote %d modes to %s", basis.r, cfg.out)
    return EXIT_OK


def _training_config(cfg: _TrainingOptions, r: int, r0: int, candidates, guess=None) -> TrainingConfig:
    return TrainingConfig(r=r, weight_candidates=candidates, r0=r0, initial_guess=guess,
                          delta_bar=cfg.delta_bar, i_max=cfg.i_max, block_multiplier=cfg.block_multiplier,
                          freeze_previous=cfg.freeze_previous, step=cfg.step, workers=_workers(cfg.workers))


def cmd_train(cfg: TrainConfig) -> int:
    snaps, basis = _load_inputs(cfg.snapshots, cfg.basis)
    provider = theta_provider(cfg.theta)
    _check_theta(cfg.form, provider, snaps)
    guess = None
    if cfg.guess is not None:
        guess = load_operators(cfg.guess)
        if str(guess.form) != cfg.form:
            raise ConfigError(f"guess has form {guess.form}, config uses {cfg.form}")
    tc = _training_config(cfg, cfg.r, cfg.start_dim(), cfg.candidates(), guess)
    tc.validate(basis.r)
    ops, tlog = train_nested(snaps, basis, cfg.form, provider, tc)
    save_operators(cfg.out, ops)
    tlog.write_jsonl(cfg.log)
    if cfg.stage_dir is not None:
        Path(cfg.stage_dir).mkdir(parents=True, exist_ok=True)
        for s, st_ops in tlog.stage_operators.items():
            save_operators(Path(cfg.stage_dir) / f"operators_r{s}.json", st_ops)
    if tlog.any_stage_all_diverged:
        bad = [st.s for st in tlog.stages if st.all_diverged]
        log.warning("every candidate diverged at stage(s) %s; kept the expanded guess", bad)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_evaluate(cfg: EvaluateConfig) -> int:
    ops = load_operators(cfg.operators)
    snaps, basis = _load_inputs(cfg.test_snapshots, cfg.basis)
    provider = theta_provider(cfg.theta)
    _check_theta(ops.form, provider, snaps)
    rows = evaluation_table(evaluate_rom(ops, basis, snaps, provider, cfg.step), basis, ops.dim)
    _write_table(cfg.out, rows)
    summary = {
        "r": ops.dim,
        "form": str(ops.form),
        "diverged_trajectories": sorted({r["kappa"] for r in rows if r["diverged"]}),
        "regions": region_summary(rows, cfg.train_params, cfg.train_t_end),
    }
    io.dump_json(cfg.summary, summary)
    return EXIT_OK


def _mean_max_error(ops, basis, snaps, provider, step):
    rows = evaluation_table(evaluate_rom(ops, basis, snaps, provider, step), basis, ops.dim)
    errs = np.array([r["rel_error"] for r in rows])
    return float(errs.mean()), float(errs.max())


def cmd_compare(cfg: CompareConfig) -> int:
    snaps, basis = _load_inputs(cfg.snapshots, cfg.basis)
    provider = theta_provider(cfg.theta)
    _check_theta(cfg.form, provider, snaps)
    r_values = sorted(set(cfg.r_values))
    if not r_values or r_values[0] < 1 or r_values[-1] > basis.r:
        raise ConfigError(f"r_values must lie in 1..{basis.r}")
    nested_cfg = _training_config(cfg, r_values[-1], 1, cfg.candidates())
    nested_cfg.validate(basis.r)
    _, nested_log = train_nested(snaps, basis, cfg.form, provider, nested_cfg)
    std_grid = weight_grid(len(as_form(cfg.form)), cfg.standard_n_omega, cfg.omega_min, cfg.omega_max)
    degraded = nested_log.any_stage_all_diverged
    results = []
    for r in r_values:
        std_ops, std_log = train_nested(snaps, basis, cfg.form, provider,
                                        _training_config(cfg, r, r, std_grid))
        degraded |= std_log.any_stage_all_diverged
        for method, ops in (("nested", nested_log.stage_operators[r]), ("standard", std_ops)):
            mean, mx = _mean_max_error(ops, basis, snaps, provider, cfg.step)
            results.append({"r": r, "method": method, "mean_rel_error": mean, "max_rel_error": mx})
    lines = ["r,method,mean_rel_error,max_rel_error"]
    lines += [f"{d['r']},{d['method']},{d['mean_rel_error']!r},{d['max_rel_error']!r}" for d in results]
    Path(cfg.out).write_text("\n".join(lines) + "\n")
    io.dump_json(cfg.summary, {"form": cfg.form, "n_omega": cfg.n_omega,
                               "standard_n_omega": cfg.standard_n_omega, "results": results})
    return EXIT_DEGRADED if degraded else EXIT_OK


HANDLERS = {"generate": cmd_generate, "pod": cmd_pod, "train": cmd_train,
            "evaluate": cmd_evaluate, "compare": cmd_compare}


# ---------------------------------------------------------------- argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _unwrap_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _flag_kwargs(annotation) -> dict:
    tp = _unwrap_optional(annotation)
    origin = typing.get_origin(tp)
    if tp is bool:
        return {"action": argparse.BooleanOptionalAction}
    if tp in (int, float, str):
        return {"type": tp}
    if origin is Literal:
        return {"choices": list(typing.get_args(tp))}
    if origin is list and typing.get_args(tp)[0] in (int, float, str):
        return {"nargs": "+", "type": typing.get_args(tp)[0]}
    return {"type": json.loads, "metavar": "JSON"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nested-opinf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (model, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file with any of the keys below")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
        for key, field in model.model_fields.items():
            default = field.default
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=argparse.SUPPRESS,
                           help=f"{field.description} (default: {default!r})",
                           **_flag_kwargs(field.annotation))
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> BaseModel:
    model = COMMANDS[command][0]
    data = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for key in model.model_fields:
        if key in vars(args):
            data[key] = getattr(args, key)
    return model.model_validate(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        if args.dump_config:
            print(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True))
            return EXIT_OK
        return HANDLERS[args.command](cfg)
    except ValidationError as exc:
        print(f"nested-opinf {args.command}: invalid config:\n{exc}", file=sys.stderr)
    except (ConfigError, ValueError, FileNotFoundError, NewtonError) as exc:
        print(f"nested-opinf {args.command}: error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"nested-opinf {args.command}: I/O error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
