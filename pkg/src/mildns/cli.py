"""Command-line experiment runner.

Every subcommand reads one JSON document (``--config``; omitted means all
defaults), validates it completely before computing anything, and writes its
outputs into ``--out`` only after the computation has finished. Files are
written to a temporary directory and renamed into place, so a crashed run
leaves no partial results. Outputs contain no timestamps or host information:
the same config and seed give byte-identical files.

Exit codes: 0 pass, 1 an inequality was violated, 2 numerical non-convergence
(kernel refinement, Picard iteration, window-length underflow), 3 bad config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Annotated, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import diagnostics, lorentz, oseen, solver
from .spectral import (
    CONVENTION,
    PhysicalTensorField,
    divergence_of_tensor,
    heat_semigroup,
    leray_project,
    spectral_l2_norm,
    torus_grid,
)

log = logging.getLogger("mildns")

EXIT_PASS = 0
EXIT_VIOLATION = 1
EXIT_NONCONVERGENCE = 2
EXIT_CONFIG = 3

PositiveFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Seed = Annotated[int, Field(ge=0, lt=2**64)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SolverSection(_Strict):
    n: int = 64
    dt: PositiveFloat = 1e-4
    scheme: Literal["picard-exponential", "etdrk2"] = "picard-exponential"
    picard_tol: PositiveFloat = 1e-12
    picard_max_iters: Annotated[int, Field(ge=1)] = 50
    dealias: bool = True

    @field_validator("n")
    @classmethod
    def _even_grid(cls, n):
        if n < 4 or n % 2:
            raise ValueError("grid size must be an even integer >= 4")
        return n

    def build(self) -> solver.SolverConfig:
        return solver.SolverConfig(**self.model_dump())


class KernelBoundsConfig(_Strict):
    times: Optional[list[PositiveFloat]] = None
    t_min: PositiveFloat = 1e-3
    t_max: Annotated[float, Field(gt=0, le=1)] = 1.0
    count: Annotated[int, Field(ge=1)] = 16
    n_min: Annotated[int, Field(ge=4)] = 16
    n_max: Annotated[int, Field(ge=4)] = 2048
    rtol: PositiveFloat = oseen.CONVERGENCE_RTOL

    @field_validator("times")
    @classmethod
    def _unit_interval(cls, ts):
        if ts is not None:
            if not ts:
                raise ValueError("times must not be empty")
            if any(t > 1 for t in ts):
                raise ValueError("kernel times must lie in (0, 1]")
        return ts

    @model_validator(mode="after")
    def _ordered(self):
        if self.times is None and self.t_min > self.t_max:
            raise ValueError("t_min must not exceed t_max")
        return self

    def time_grid(self) -> list[float]:
        if self.times is not None:
            return sorted(set(self.times))
        return [float(t) for t in oseen.log_time_grid(self.t_min, self.t_max, self.count)]


class LorentzConfig(_Strict):
    seed: Seed = 0
    fields: Annotated[int, Field(ge=1)] = 100
    n: Annotated[int, Field(ge=4)] = 64
    q_list: list[Annotated[float, Field(gt=1, lt=2)]] = [1.1, 1.25, 1.5, 1.75, 1.9]
    product_pairs: Annotated[int, Field(ge=0)] = 100
    brute_force_points: Annotated[int, Field(ge=2)] = 50


class SimulateConfig(_Strict):
    preset: Literal["taylor-green", "random"] = "taylor-green"
    amplitude: float = Field(1.0, allow_inf_nan=False)
    mean_flow: tuple[float, float] = (0.0, 0.0)
    seed: Seed = 0
    spectral_decay: Annotated[float, Field(gt=1)] = 3.0
    l2: PositiveFloat = 1.0
    t_end: PositiveFloat = 0.1
    solver: SolverSection = SolverSection()
    dump_final_state: bool = True


class SmoothingConfig(_Strict):
    amplitude: float = Field(1.0, allow_inf_nan=False)
    mean_flow: tuple[float, float] = (8.0, 6.0)
    T0: Annotated[float, Field(ge=0)] = 0.0
    delta_min: PositiveFloat = 1e-3
    delta_max: PositiveFloat = 1e-1
    count: Annotated[int, Field(ge=2)] = 9
    levels: Annotated[int, Field(ge=1)] = 20
    slope_target: float = 0.5
    slope_tol: PositiveFloat = 0.05
    solver: SolverSection = SolverSection(dt=1e-3)

    @model_validator(mode="after")
    def _ordered(self):
        if self.delta_min >= self.delta_max:
            raise ValueError("delta_min must be below delta_max")
        return self


class StabilityConfig(_Strict):
    seed: Seed = 0
    trials: Annotated[int, Field(ge=1)] = 100
    base: Literal["random", "taylor-green"] = "random"
    base_decay: Annotated[float, Field(gt=1)] = 3.0
    base_l2: PositiveFloat = 1.0
    T0: Annotated[float, Field(ge=0)] = 0.005
    delta: PositiveFloat = 0.002
    eps: Annotated[float, Field(ge=0, allow_inf_nan=False)] = 1e-3
    perturbation_decay: Annotated[float, Field(gt=1)] = 3.0
    delta_min: PositiveFloat = 1e-10
    levels: Annotated[int, Field(ge=1)] = 20
    C_hat: Optional[PositiveFloat] = None
    kernel: KernelBoundsConfig = KernelBoundsConfig()
    solver: SolverSection = SolverSection()
    write_trials: bool = True


class SelftestConfig(_Strict):
    seed: Seed = 0


COMMANDS = {
    "kernel-bounds": KernelBoundsConfig,
    "lorentz": LorentzConfig,
    "simulate": SimulateConfig,
    "smoothing": SmoothingConfig,
    "stability": StabilityConfig,
    "selftest": SelftestConfig,
}

CSV_HELP = {
    "kernel-bounds": "kernel_profile.csv: t,n,l1,linf,sqrt_t_l1,t32_linf,converged; kernel_bounds.json",
    "lorentz": "lorentz_sweep.csv: field_id,p,r,norm,ratio,bound,pass; product.csv: pair_id,n,lhs,rhs_factor,ratio,"
    "linf_l2_holds; lorentz.json",
    "simulate": "trajectory.csv: t,l2,linf,energy; simulate.json; final_state.bin",
    "smoothing": "smoothing_samples.csv: t,linf,weighted; smoothing_M.csv: delta,M; smoothing.json",
    "stability": "campaign.csv: seed,T0,delta,eps,C_hat,M_delta,kappa,w0,sup_w,bound,margin,pass; "
    "trials/trial_<seed>.json; stability.json",
    "selftest": "selftest.json",
}


class ConfigError(Exception):
    pass


def format_validation_error(command: str, err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in (command, *e["loc"]))
        lines.append(f"{path}: {e['msg']}")
    return "\n".join(lines)


def load_config(command: str, path: str | None, seed: int | None = None) -> BaseModel:
    """Parse and validate the config for ``command``; ``seed`` overrides the config's seed."""
    model = COMMANDS[command]
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{command}: cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{command}: config must be a JSON object")
    if seed is not None:
        if "seed" not in model.model_fields:
            raise ConfigError(f"{command}: --seed given but this command takes no seed")
        raw = {**raw, "seed": seed}
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(command, exc)) from None


def convention_block(C_source: str | None = None) -> dict:
    block = dict(CONVENTION)
    if C_source is not None:
        block["C_hat_source"] = C_source
    return block


def _csv_text(header, rows, comment: dict) -> str:
    buf = io.StringIO()
    buf.write("# convention: " + json.dumps(comment, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _with_comment(csv_body: str, comment: dict) -> str:
    return "# convention: " + json.dumps(comment, sort_keys=True) + "\n" + csv_body


def _json_text(record: dict) -> str:
    return json.dumps(record, indent=2, sort_keys=True, allow_nan=True) + "\n"


class OutputSet:
    """Files collected in memory and committed atomically at the end of a run."""

    def __init__(self):
        self.files: dict[str, bytes] = {}

    def add(self, name: str, content):
        self.files[name] = content.encode("utf-8") if isinstance(content, str) else bytes(content)

    def commit(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        staging = tempfile.mkdtemp(prefix=".staging-", dir=out_dir)
        try:
            for name, data in self.files.items():
                path = os.path.join(staging, name)
                os.makedirs(os.path.dirname(path), exist_ok=True)
                with open(path, "wb") as fh:
                    fh.write(data)
            for name in self.files:
                dest = os.path.join(out_dir, name)
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                os.replace(os.path.join(staging, name), dest)
        finally:
            shutil.rmtree(staging, ignore_errors=True)


@contextmanager
def _executor(threads: int):
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    if workers <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            yield ex


def cmd_kernel_bounds(cfg: KernelBoundsConfig, out: OutputSet, threads: int = 1) -> int:
    ts = cfg.time_grid()
    with _executor(threads) as ex:
        profile = _profile(ts, cfg, ex)
    source = "estimate_kernel_constant"
    conv = convention_block(source)
    out.add("kernel_profile.csv", _with_comment(profile.to_csv(), conv))
    try:
        C_hat = oseen.estimate_kernel_constant(profile)
    except oseen.KernelConvergenceError:
        C_hat = None
    record = {
        "C_hat": C_hat,
        "t_range": [ts[0], ts[-1]],
        "times": ts,
        "resolutions": [list(r) for r in profile.resolutions],
        "all_converged": profile.all_converged,
        "rtol": cfg.rtol,
        "convention": conv,
    }
    out.add("kernel_bounds.json", _json_text(record))
    if not profile.all_converged:
        log.error("kernel profile did not converge at every t")
        return EXIT_NONCONVERGENCE
    return EXIT_PASS


def _profile(ts, cfg: KernelBoundsConfig, ex):
    def one(t):
        return oseen.kernel_norms(t, cfg.n_max, cfg.rtol, cfg.n_min)

    results = [one(t) for t in ts] if ex is None else list(ex.map(one, ts))
    return oseen.KernelNormProfile(tuple(r[0] for r in results), tuple(r[1] for r in results))


def cmd_lorentz(cfg: LorentzConfig, out: OutputSet, threads: int = 1) -> int:
    fields = lorentz.scalar_corpus(cfg.seed, cfg.fields, cfg.n)
    rows = lorentz.embedding_sweep(fields, cfg.q_list)
    conv = convention_block()
    out.add("lorentz_sweep.csv", _with_comment(lorentz.sweep_to_csv(rows), conv))

    brute = {repr(q): lorentz.brute_force_two_step_ratio(q, cfg.brute_force_points) for q in cfg.q_list}
    brute_ok = all(brute[repr(q)] <= lorentz.embedding_bound(q) * (1 + 1e-10) for q in cfg.q_list)
    identity_gap = max(
        abs(lorentz.lorentz_norm(f, 2.0, 2.0) - math.sqrt(np.mean(f**2))) / math.sqrt(np.mean(f**2)) for f in fields
    )

    prod_rows = []
    for i in range(cfg.product_pairs):
        w = lorentz.corpus_field(cfg.seed + 1, 2 * i, cfg.n)
        z = lorentz.corpus_field(cfg.seed + 1, 2 * i + 1, cfg.n)
        chk = lorentz.product_l1_check(w, z)
        prod_rows.append([i, cfg.n, repr(chk.lhs), repr(chk.rhs_factor), repr(chk.ratio), int(chk.linf_l2_holds)])
    out.add("product.csv", _csv_text(["pair_id", "n", "lhs", "rhs_factor", "ratio", "linf_l2_holds"], prod_rows, conv))
    prod_max = max((float(r[4]) for r in prod_rows), default=0.0)
    lemma_ok = all(r[5] for r in prod_rows)
    sweep_ok = all(r.passed for r in rows)

    record = {
        "seed": cfg.seed,
        "fields": cfg.fields,
        "n": cfg.n,
        "embedding_bounds": {repr(q): lorentz.embedding_bound(q) for q in cfg.q_list},
        "brute_force_max": brute,
        "brute_force_within_bound": brute_ok,
        "l22_identity_max_rel_gap": identity_gap,
        "sweep_all_pass": sweep_ok,
        "product_ratio_max": prod_max,
        "linf_l2_product_all_hold": lemma_ok,
        "convention": conv,
    }
    out.add("lorentz.json", _json_text(record))
    return EXIT_PASS if (sweep_ok and brute_ok and lemma_ok and prod_max <= 1.0) else EXIT_VIOLATION


def _initial_data(cfg: SimulateConfig):
    n = cfg.solver.n
    if cfg.preset == "taylor-green":
        return solver.with_mean_flow(solver.taylor_green(cfg.amplitude, n), cfg.mean_flow)
    return solver.with_mean_flow(solver.random_divfree(cfg.seed, cfg.spectral_decay, n, cfg.l2), cfg.mean_flow)


def cmd_simulate(cfg: SimulateConfig, out: OutputSet, threads: int = 1) -> int:
    config = cfg.solver.build()
    v0 = _initial_data(cfg)
    traj = solver.evolve(v0, cfg.t_end, config)
    conv = convention_block()
    out.add("trajectory.csv", _with_comment(traj.to_csv(), conv))
    record = {
        "preset": cfg.preset,
        "t_end": traj.t_end,
        "samples": int(traj.times.size),
        "l2_initial": float(traj.l2[0]),
        "l2_final": float(traj.l2[-1]),
        "energy_monotone": bool(np.all(np.diff(traj.energy) <= 1e-10)),
        "config": cfg.model_dump(mode="json"),
        "convention": conv,
    }
    if cfg.preset == "taylor-green":
        exact = solver.taylor_green_exact(cfg.amplitude, config.n, traj.t_end, cfg.mean_flow)
        ref = spectral_l2_norm(exact)
        err = spectral_l2_norm(traj.states[-1] - exact)
        record["exact_relative_l2_error"] = err / ref if ref > 0 else err
    out.add("simulate.json", _json_text(record))
    if cfg.dump_final_state:
        out.add("final_state.bin", solver.dump_state(traj.states[-1], traj.t_end))
    return EXIT_PASS


def smoothing_run(cfg: SmoothingConfig):
    """Trajectory and profile for the smoothing experiment (shared with the tests)."""
    config = cfg.solver.build()
    deltas = np.geomspace(cfg.delta_min, cfg.delta_max, cfg.count)
    v0 = solver.taylor_green_exact(cfg.amplitude, config.n, 0.0, cfg.mean_flow)
    v_T0 = v0 if cfg.T0 == 0 else solver.evolve(v0, cfg.T0, config, sample_times=[0.0, cfg.T0]).states[-1]
    grid_times = diagnostics.geometric_sample_times(cfg.T0, cfg.delta_max, config.dt, cfg.levels)
    times = np.unique(np.r_[grid_times, cfg.T0 + deltas])
    traj = solver.evolve(v_T0, times[-1], config, t0=cfg.T0, sample_times=times)
    return traj, diagnostics.smoothing_profile(traj, cfg.T0, deltas)


def cmd_smoothing(cfg: SmoothingConfig, out: OutputSet, threads: int = 1) -> int:
    traj, prof = smoothing_run(cfg)
    conv = convention_block()
    out.add("smoothing_samples.csv", _csv_text(
        ["t", "linf", "weighted"],
        [[repr(float(t)), repr(float(a)), repr(float(b))] for t, a, b in zip(prof.times, prof.linf, prof.weighted)],
        conv,
    ))
    out.add("smoothing_M.csv", _csv_text(
        ["delta", "M"], [[repr(float(d)), repr(float(m))] for d, m in zip(prof.deltas, prof.M)], conv
    ))
    slope = prof.loglog_slope()
    ok = abs(slope - cfg.slope_target) <= cfg.slope_tol
    record = {
        "T0": cfg.T0,
        "deltas": [float(d) for d in prof.deltas],
        "M": [float(m) for m in prof.M],
        "slope": slope,
        "slope_target": cfg.slope_target,
        "slope_tol": cfg.slope_tol,
        "slope_pass": ok,
        "monotone": True,
        "convention": conv,
    }
    out.add("smoothing.json", _json_text(record))
    return EXIT_PASS if ok else EXIT_VIOLATION


def _base_factory(cfg: StabilityConfig):
    n = cfg.solver.n
    if cfg.base == "taylor-green":
        return lambda seed: solver.taylor_green(1.0, n)
    # the base flow of trial ``seed`` is drawn from a stream disjoint from its perturbation
    return lambda seed: solver.random_divfree(seed + 2**63, cfg.base_decay, n, cfg.base_l2)


def cmd_stability(cfg: StabilityConfig, out: OutputSet, threads: int = 1) -> int:
    config = cfg.solver.build()
    with _executor(threads) as ex:
        if cfg.C_hat is None:
            profile = _profile(cfg.kernel.time_grid(), cfg.kernel, ex)
            C_hat = oseen.estimate_kernel_constant(profile)
            source = "estimate_kernel_constant"
        else:
            C_hat, source = cfg.C_hat, "user-supplied"
        seeds = [cfg.seed + i for i in range(cfg.trials)]
        factory = _base_factory(cfg)

        def one(seed):
            return diagnostics.stability_experiment(
                factory(seed), cfg.T0, cfg.delta, cfg.eps, seed, config, C_hat, source,
                cfg.perturbation_decay, cfg.delta_min, cfg.levels,
            )

        runs = [one(s) for s in seeds] if ex is None else list(ex.map(one, seeds))
    reports = [r.report for r in runs]
    conv = convention_block(source)
    out.add("campaign.csv", _with_comment(diagnostics.campaign_csv(reports), conv))
    if cfg.write_trials:
        for run in runs:
            rec = json.loads(run.report.to_json())
            rec["convention"] = conv
            rec["volterra"] = [[r.t, r.lhs, r.rhs, r.passed] for r in run.volterra]
            out.add(f"trials/trial_{run.report.seed}.json", _json_text(rec))
    bound_ok = all(r.passed for r in reports)
    volterra_ok = all(r.volterra_pass for r in reports)
    record = {
        "trials": len(reports),
        "passed": sum(r.passed for r in reports),
        "volterra_passed": sum(r.volterra_pass for r in reports),
        "C_hat": C_hat,
        "C_source": source,
        "max_kappa": max(r.kappa for r in reports),
        "min_margin": min(r.margin for r in reports),
        "config": cfg.model_dump(mode="json"),
        "convention": conv,
    }
    out.add("stability.json", _json_text(record))
    if not (bound_ok and volterra_ok):
        log.error("stability bound or Volterra inequality violated")
        return EXIT_VIOLATION
    return EXIT_PASS


def _selftest_checks(seed: int) -> dict[str, bool]:
    rng = np.random.default_rng(seed)
    checks = {}
    pairs = rng.uniform(0, 10, size=(5, 2))
    checks["beta_equals_pi"] = all(
        abs(diagnostics.beta_quadrature(a, a + b + 1e-3) - math.pi) <= 1e-12 for a, b in pairs
    )
    tg = solver.taylor_green(1.0, 32)
    checks["taylor_green_nonlinearity_vanishes"] = float(np.abs(solver.nonlinear_term(tg).coeffs).max()) <= 1e-12
    F = PhysicalTensorField(torus_grid(32), rng.standard_normal((2, 2, 32, 32)))
    direct = oseen.apply_oseen(0.01, F).coeffs
    composite = heat_semigroup(0.01, leray_project(divergence_of_tensor(F))).coeffs
    checks["dual_path_identity"] = float(np.abs(direct - composite).max()) <= 1e-13 * float(np.abs(composite).max())
    f = rng.standard_normal((32, 32))
    checks["l22_equals_l2"] = abs(lorentz.lorentz_norm(f, 2, 2) - math.sqrt(np.mean(f**2))) <= 1e-12 * math.sqrt(
        np.mean(f**2)
    )
    checks["embedding_bound"] = all(lorentz.embedding_ratio_check(f, q).passed for q in (1.1, 1.5, 1.9))
    return checks


def cmd_selftest(cfg: SelftestConfig, out: OutputSet, threads: int = 1) -> int:
    checks = _selftest_checks(cfg.seed)
    out.add("selftest.json", _json_text({"checks": checks, "seed": cfg.seed, "convention": convention_block()}))
    return EXIT_PASS if all(checks.values()) else EXIT_VIOLATION


HANDLERS = {
    "kernel-bounds": cmd_kernel_bounds,
    "lorentz": cmd_lorentz,
    "simulate": cmd_simulate,
    "smoothing": cmd_smoothing,
    "stability": cmd_stability,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mildns",
        description="Spectral mild-formulation Navier-Stokes experiments on the unit torus.",
        epilog="Exit codes: 0 pass, 1 inequality violated, 2 numerical non-convergence, 3 config error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment", description=f"Outputs: {CSV_HELP[name]}")
        p.add_argument("--config", metavar="PATH", help="JSON config document (defaults if omitted)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
        p.add_argument("--threads", metavar="N", type=int, default=1, help="worker threads, 0 = one per CPU")
        p.add_argument("--seed", metavar="U64", type=int, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 0:
            raise ConfigError(f"{args.command}: --threads must be >= 0")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError(f"{args.command}.seed: must be an unsigned 64-bit integer")
        cfg = load_config(args.command, args.config, args.seed)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = OutputSet()
    try:
        code = HANDLERS[args.command](cfg, out, args.threads)
    except (oseen.KernelConvergenceError, solver.PicardConvergenceError, diagnostics.DeltaUnderflowError) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    out.commit(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
