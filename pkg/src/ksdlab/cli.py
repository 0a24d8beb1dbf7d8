"""Command-line front end: stage orchestration, config handling, artifacts.

Each subcommand runs one pipeline stage (or ``all``) and writes CSV/JSON
artifacts plus a manifest into the output directory.  Configuration comes
from an optional JSON file plus flags; flags win.  Exit codes: 0 success,
2 validation failure (bad parameters or config), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigParseError, DomainError, KSDLabError, StageFailure
from .heat import HeatParams, heat_coercivity, make_heat_suite
from .io import save_profile_cache, write_csv, write_json, write_manifest
from .linops import coercivity_probe, make_test_suite, select_weight
from .phys import run_phys
from .profile import (
    ProfileParams,
    build_series,
    classify_beta,
    compute_admissibility,
    solve_profile,
)
from .renorm import run_renorm, sigma_coupling

COMMANDS = ("profile", "portrait", "coercivity", "renorm", "phys", "heat", "all")


@dataclass
class RunConfig:
    """One resolved run request; round-trips losslessly through to_dict."""

    command: str
    mu: float = 0.0
    j0: int | None = None
    qj0: float = -1.0
    lambda0: float | None = None
    tol: float = 1.0e-8
    grid_n: int | None = None
    seed: int = 12345
    out: str = "ksdlab-out"
    quick: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigParseError(f"unknown command {self.command!r}")
        if self.tol <= 0:
            raise ConfigParseError("tol must be positive")
        if self.lambda0 is not None and self.lambda0 <= 0:
            raise ConfigParseError("lambda0 must be positive")
        if self.grid_n is not None and self.grid_n < 64:
            raise ConfigParseError("grid-n must be >= 64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigParseError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _resolve_params(cfg: RunConfig) -> ProfileParams:
    j0 = cfg.j0
    if j0 is None:
        _, j0 = compute_admissibility(cfg.mu)
    return ProfileParams.make(cfg.mu, j0, q_j0=cfg.qj0)


def _solve(cfg: RunConfig, params: ProfileParams):
    series = build_series(params, min(cfg.tol, 1e-12))
    profile = solve_profile(params, series, 1.0e4, cfg.tol)
    return series, profile


def portrait_scan(mu: float, beta_grid) -> list[dict]:
    """Classify candidate similarity exponents along ``beta_grid``."""
    rows = []
    for beta in beta_grid:
        label, j0 = classify_beta(mu, beta)
        rows.append({"mu": mu, "beta": float(beta), "label": label, "j0": j0})
    return rows


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _stage_profile(cfg: RunConfig, outdir: Path, cache: dict) -> None:
    t0 = time.perf_counter()
    params = _resolve_params(cfg)
    series, profile = _solve(cfg, params)
    cache["params"], cache["series"], cache["profile"] = params, series, profile
    save_profile_cache(outdir / "profile_cache.npz", params, series, profile)
    write_csv(
        outdir / "profile.csv",
        ["r", "Q", "f", "dQ"],
        zip(profile.grid, profile.q_vals, profile.f_vals, profile.dq_vals),
    )
    write_manifest(
        outdir / "manifest_profile.json",
        cfg.to_dict(),
        time.perf_counter() - t0,
        extra={
            "tail_exponent": profile.tail_exponent,
            "residual_max": profile.residual_max,
            "handoff_radius": profile.handoff_radius,
        },
    )


def _stage_portrait(cfg: RunConfig, outdir: Path, cache: dict) -> None:
    t0 = time.perf_counter()
    betas = [0.30, 1.0 / 3.0, 11.0 / 24.0]
    rows = portrait_scan(cfg.mu, betas)
    write_csv(
        outdir / "portrait.csv",
        ["mu", "beta", "label", "j0"],
        [(r["mu"], r["beta"], r["label"], "" if r["j0"] is None else r["j0"]) for r in rows],
    )
    write_manifest(outdir / "manifest_portrait.json", cfg.to_dict(), time.perf_counter() - t0)


def _ensure_profile(cfg: RunConfig, outdir: Path, cache: dict):
    if "profile" not in cache:
        _stage_profile(cfg, outdir, cache)
    return cache["params"], cache["profile"]


def _stage_coercivity(cfg: RunConfig, outdir: Path, cache: dict) -> None:
    t0 = time.perf_counter()
    params, profile = _ensure_profile(cfg, outdir, cache)
    w = select_weight(profile, params.j0, A=36)
    count = 10 if cfg.quick else 50
    suite = make_test_suite(w.A, count=count, seed=cfg.seed)
    rows = coercivity_probe(profile, params, w, suite)
    write_csv(
        outdir / "coercivity.csv",
        ["index", "seed", "p", "s", "quotient", "pass"],
        [
            (r["index"], r["seed_label"], r["p"], r["s"], r["quotient"], not r["flagged"])
            for r in rows
        ],
    )
    write_json(
        outdir / "coercivity_certificate.json",
        {
            "A": w.A,
            "B": w.B,
            "R1": w.R1,
            "cert_tailnorm": w.cert_tailnorm,
            "cert_wholenorm": w.cert_wholenorm,
            "invariants": w.invariant_checks(params.j0),
        },
    )
    write_manifest(outdir / "manifest_coercivity.json", cfg.to_dict(), time.perf_counter() - t0)


def _stage_renorm(cfg: RunConfig, outdir: Path, cache: dict) -> None:
    t0 = time.perf_counter()
    params, profile = _ensure_profile(cfg, outdir, cache)
    lam0 = cfg.lambda0 if cfg.lambda0 is not None else 1.0e-3
    n = cfg.grid_n if cfg.grid_n is not None else (512 if cfg.quick else 4096)
    tau_end = 0.5 if cfg.quick else 2.0
    traj = run_renorm(profile, params, lam0, tau_end, n=n)
    kf = traj["c"].shape[1]
    write_csv(
        outdir / "renorm.csv",
        ["tau", "lam", "eps_sup", "residual"] + [f"c{j}" for j in range(kf)],
        [
            (traj["tau"][i], traj["lam"][i], traj["eps_sup"][i], traj["residual"][i])
            + tuple(traj["c"][i])
            for i in range(len(traj["tau"]))
        ],
    )
    write_manifest(
        outdir / "manifest_renorm.json",
        cfg.to_dict(),
        time.perf_counter() - t0,
        extra={"lam0": lam0, "n": n, "tau_end": tau_end,
               "sigma_expected": sigma_coupling(params)},
    )


def _stage_phys(cfg: RunConfig, outdir: Path, cache: dict) -> None:
    t0 = time.perf_counter()
    params, profile = _ensure_profile(cfg, outdir, cache)
    # default lam0 keeps the physical diffusion coefficient lam0^{2-4beta}
    # well under the aggregation scale so the run actually blows up
    lam0 = cfg.lambda0 if cfg.lambda0 is not None else 10.0 ** (-1.6 / (2.0 - 4.0 * params.beta))
    # the half-maximum radius starts at ~n/167 cells, so n must stay large for
    # the 8-cell resolution floor to leave a usable growth window
    n = cfg.grid_n if cfg.grid_n is not None else 8192
    series, fit = run_phys(profile, lam0=lam0, n=n)
    write_csv(
        outdir / "phys.csv",
        ["t", "sup_norm", "mass", "half_max_radius", "dt"],
        zip(series["t"], series["sup_norm"], series["mass"],
            series["half_max_radius"], series["dt"]),
    )
    write_json(
        outdir / "blowup_fit.json",
        {
            "T_est": fit.T_est,
            "p_amp": fit.p_amp,
            "p_len": fit.p_len,
            "fit_window": list(fit.fit_window),
            "r2_amp": fit.r2_amp,
            "r2_len": fit.r2_len,
            "mass_drift_rate": fit.mass_drift_rate,
            "mass_identity_err": fit.mass_identity_err,
            "lam0": lam0,
        },
    )
    write_manifest(outdir / "manifest_phys.json", cfg.to_dict(), time.perf_counter() - t0)


def _stage_heat(cfg: RunConfig, outdir: Path, cache: dict) -> None:
    t0 = time.perf_counter()
    hp = HeatParams(m=2)
    count = 10 if cfg.quick else 50
    suite = make_heat_suite(hp, count=count, seed=cfg.seed)
    report = heat_coercivity(hp, suite)
    write_csv(
        outdir / "heat.csv",
        ["index", "s", "quotient", "pass"],
        [(r["index"], r["s"], r["quotient"], not r["flagged"]) for r in report["records"]],
    )
    write_json(
        outdir / "heat_certificate.json",
        {"m": hp.m, "c": hp.c, "kappa": report["kappa"], "all_pass": report["all_pass"]},
    )
    write_manifest(outdir / "manifest_heat.json", cfg.to_dict(), time.perf_counter() - t0)


_STAGES = {
    "profile": (_stage_profile,),
    "portrait": (_stage_portrait,),
    "coercivity": (_stage_coercivity,),
    "renorm": (_stage_renorm,),
    "phys": (_stage_phys,),
    "heat": (_stage_heat,),
    "all": (_stage_profile, _stage_portrait, _stage_coercivity,
            _stage_renorm, _stage_phys, _stage_heat),
}


def run(config: RunConfig) -> int:
    """Execute the configured stage(s); returns the process exit code."""
    threads = os.environ.get("KSD_LAB_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cache: dict = {}
    for stage in _STAGES[config.command]:
        try:
            stage(config, outdir, cache)
        except (DomainError, ConfigParseError) as exc:
            print(f"ksdlab: {stage.__name__.lstrip('_')}: {exc}", file=sys.stderr)
            return 2
        except KSDLabError as exc:
            err = StageFailure(f"{stage.__name__.lstrip('_')}: {exc}")
            print(f"ksdlab: {err}", file=sys.stderr)
            return 3
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ksdlab",
        description="Self-similar blowup laboratory for aggregation-diffusion dynamics",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file; flags override its values")
    ap.add_argument("--mu", type=float, default=None)
    ap.add_argument("--j0", type=int, default=None)
    ap.add_argument("--qj0", type=float, default=None)
    ap.add_argument("--lambda0", type=float, default=None)
    ap.add_argument("--tol", type=float, default=None)
    ap.add_argument("--grid-n", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--quick", action="store_true", default=None)
    return ap


def parse_config(argv=None) -> RunConfig:
    """Merge config file and flags (flags win) into a validated RunConfig."""
    ns = _build_parser().parse_args(argv)
    base: dict = {}
    if ns.config:
        try:
            base = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigParseError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigParseError("config file must hold a JSON object")
    base["command"] = ns.command
    for key in ("mu", "j0", "qj0", "lambda0", "tol", "grid_n", "seed", "out", "quick"):
        val = getattr(ns, key)
        if val is not None:
            base[key] = val
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except ConfigParseError as exc:
        print(f"ksdlab: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
