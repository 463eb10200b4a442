"""Command-line front end: run experiments, emit oracle grids, validate.

Configuration is TOML with sections [problem], [hyperparams], [optimizer],
[chain], [output].  Every real number in file output is written with 17
significant digits in the C locale, so identical configurations and seeds
reproduce byte-identical traces.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .densities import HyperParams
from .model import ProblemSpec, get_problem, make_linear_problem
from .optimizer import OptSettings
from .oracle import default_axes, grid_joint_1d, grid_marginal, grid_proposal_1d
from .proposal import JacobianMode
from .sampler import ChainRecord, QuadSettings, run_chain_augmented, run_chain_legacy_1d
from .validate import CheckResult, chain_checks, standard_checks

_MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


def splitmix64_seeds(base_seed: int, n: int) -> list[int]:
    """Derive n child seeds from a base seed with the splitmix64 sequence.

    Chain i receives the (i+1)-th splitmix64 output of the state initialized
    to the base seed.  Documented so runs remain reproducible across tools.
    """
    state = base_seed & _MASK64
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append((z ^ (z >> 31)) & _MASK64)
    return out


@dataclass
class RunConfig:
    problem: str = "example1"
    linear: Optional[dict] = None
    rho: float = 0.65
    gamma: float = 0.01
    algorithm: str = "augmented"
    jacobian: str = "full"
    n_steps: int = 10000
    seed: int = 1
    discard_prefix: int = 0
    out_dir: str = "out"
    grid_points: int = 2048
    histogram_bins: int = 64
    optimizer: dict = field(default_factory=dict)
    quad: dict = field(default_factory=dict)

    def opt_settings(self) -> OptSettings:
        try:
            return OptSettings(**self.optimizer)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[optimizer] section invalid: {exc}") from exc

    def quad_settings(self) -> QuadSettings:
        try:
            return QuadSettings(**self.quad)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[chain] quad settings invalid: {exc}") from exc

    def hyper_params(self) -> HyperParams:
        try:
            return HyperParams(gamma=self.gamma, rho=self.rho)
        except ValueError as exc:
            raise ConfigError(f"[hyperparams] invalid: {exc}") from exc

    def jacobian_mode(self) -> JacobianMode:
        try:
            return JacobianMode.from_name(self.jacobian)
        except ValueError as exc:
            raise ConfigError(f"[chain] jacobian: {exc}") from exc

    def build_problem(self) -> ProblemSpec:
        if self.linear is not None:
            required = {"prior_mean", "prior_cov", "gain", "obs", "obs_cov"}
            missing = required - set(self.linear)
            if missing:
                raise ConfigError(f"[problem] linear spec missing keys: {sorted(missing)}")
            try:
                return make_linear_problem(
                    prior_mean=self.linear["prior_mean"],
                    prior_cov=self.linear["prior_cov"],
                    gain=self.linear["gain"],
                    obs=self.linear["obs"],
                    obs_cov=self.linear["obs_cov"],
                )
            except ValueError as exc:
                raise ConfigError(f"[problem] linear spec invalid: {exc}") from exc
        try:
            return get_problem(self.problem)
        except ValueError as exc:
            raise ConfigError(f"[problem] name: {exc}") from exc

    def echo(self) -> dict:
        return asdict(self)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    raw_bytes = Path(path).read_bytes()
    try:
        doc = tomllib.loads(raw_bytes.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc

    cfg = RunConfig()
    problem = doc.get("problem", {})
    if "name" in problem:
        cfg.problem = str(problem["name"])
    if "type" in problem and problem["type"] == "linear":
        cfg.problem = "linear"
        cfg.linear = {k: v for k, v in problem.items() if k != "type"}
    hp = doc.get("hyperparams", {})
    cfg.rho = float(hp.get("rho", cfg.rho))
    cfg.gamma = float(hp.get("gamma", cfg.gamma))
    cfg.optimizer = dict(doc.get("optimizer", {}))
    chain = doc.get("chain", {})
    cfg.algorithm = str(chain.get("algorithm", cfg.algorithm))
    if cfg.algorithm not in ("augmented", "legacy-1d"):
        raise ConfigError(f"[chain] algorithm must be 'augmented' or 'legacy-1d', got {cfg.algorithm!r}")
    cfg.jacobian = str(chain.get("jacobian", cfg.jacobian))
    cfg.n_steps = int(chain.get("n_steps", cfg.n_steps))
    if cfg.n_steps < 1:
        raise ConfigError("[chain] n_steps must be >= 1")
    cfg.seed = int(chain.get("seed", cfg.seed))
    cfg.discard_prefix = int(chain.get("discard_prefix", cfg.discard_prefix))
    if not 0 <= cfg.discard_prefix < cfg.n_steps:
        raise ConfigError("[chain] discard_prefix must lie in [0, n_steps)")
    cfg.quad = dict(chain.get("quad", {}))
    output = doc.get("output", {})
    cfg.out_dir = str(output.get("dir", cfg.out_dir))
    cfg.grid_points = int(output.get("grid_points", cfg.grid_points))
    cfg.histogram_bins = int(output.get("histogram_bins", cfg.histogram_bins))

    # Fail fast on anything structurally wrong before computing.
    cfg.hyper_params()
    cfg.opt_settings()
    cfg.quad_settings()
    cfg.jacobian_mode()
    cfg.build_problem()
    return cfg


def write_trace_csv(path: Path, record: ChainRecord, discard_prefix: int = 0) -> None:
    """Chain trace: one row per recorded state, reals at 17 significant digits."""
    dim_x = record.xs.shape[1]
    dim_d = record.ds.shape[1]
    header = (
        ["step", "accepted"]
        + [f"x_{j + 1}" for j in range(dim_x)]
        + [f"d_{j + 1}" for j in range(dim_d)]
        + ["log_pi_joint", "log_q"]
    )
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(discard_prefix, len(record)):
            accepted = 1 if (i == 0 or record.accept_flags[i - 1]) else 0
            vals = (
                list(record.xs[i])
                + list(record.ds[i])
                + [record.log_pi[i], record.log_q[i]]
            )
            fh.write(f"{i},{accepted}," + ",".join("%.17g" % v for v in vals) + "\n")


def write_summary_json(path: Path, record: ChainRecord, cfg: RunConfig, wall: float) -> None:
    summary = {
        "acceptance_rate": record.acceptance_rate,
        "n_steps": record.n_proposed,
        "n_accepted": record.n_accepted,
        "n_optfail": record.n_optfail,
        "seed": record.seed,
        "rho": cfg.rho,
        "gamma": cfg.gamma,
        "jacobian_mode": cfg.jacobian,
        "algorithm": cfg.algorithm,
        "wall_seconds": wall,
        "config": cfg.echo(),
    }
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_histogram_csv(path: Path, samples: np.ndarray, axes, n_bins: int) -> None:
    """Binned sample counts over the grid extents, for plotting."""
    if samples.shape[1] == 1:
        edges = np.linspace(axes[0][0], axes[0][1], n_bins + 1)
        counts, _ = np.histogram(samples[:, 0], bins=edges)
        centers = 0.5 * (edges[1:] + edges[:-1])
        with open(path, "w", newline="") as fh:
            fh.write("x_center,count,frequency\n")
            for c, n in zip(centers, counts):
                fh.write("%.17g,%d,%.17g\n" % (c, n, n / samples.shape[0]))
    else:
        ex = np.linspace(axes[0][0], axes[0][1], n_bins + 1)
        ey = np.linspace(axes[1][0], axes[1][1], n_bins + 1)
        counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=[ex, ey])
        cx = 0.5 * (ex[1:] + ex[:-1])
        cy = 0.5 * (ey[1:] + ey[:-1])
        with open(path, "w", newline="") as fh:
            fh.write("x1_center,x2_center,count,frequency\n")
            for i, a in enumerate(cx):
                for j, b in enumerate(cy):
                    fh.write(
                        "%.17g,%.17g,%d,%.17g\n"
                        % (a, b, counts[i, j], counts[i, j] / samples.shape[0])
                    )


def _run_single_chain(cfg: RunConfig, seed: int, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = cfg.build_problem()
    t0 = time.perf_counter()
    if cfg.algorithm == "legacy-1d":
        record = run_chain_legacy_1d(p, cfg.opt_settings(), cfg.n_steps, seed, cfg.quad_settings())
    else:
        record = run_chain_augmented(
            p, cfg.hyper_params(), cfg.opt_settings(), cfg.n_steps, seed, cfg.jacobian_mode()
        )
    wall = time.perf_counter() - t0
    write_trace_csv(out_dir / "trace.csv", record, cfg.discard_prefix)
    write_summary_json(out_dir / "summary.json", record, cfg, wall)
    if p.dim_x <= 2:
        n = cfg.grid_points if p.dim_x == 1 else min(cfg.grid_points, 512)
        grid = grid_marginal(p, n=n)
        grid.write_csv(out_dir / "grid_density.csv")
        samples = record.xs[cfg.discard_prefix :]
        write_histogram_csv(out_dir / "histogram.csv", samples, grid.axes, cfg.histogram_bins)
    return {"seed": seed, "acceptance_rate": record.acceptance_rate, "dir": str(out_dir)}


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    base = Path(cfg.out_dir)
    seeds = [cfg.seed] if args.chains <= 1 else splitmix64_seeds(cfg.seed, args.chains)
    try:
        for i, seed in enumerate(seeds):
            chain_dir = base if len(seeds) == 1 else base / f"chain_{i:03d}"
            info = _run_single_chain(cfg, seed, chain_dir)
            print(
                f"chain seed={info['seed']}: acceptance_rate="
                f"{info['acceptance_rate']:.6f} -> {info['dir']}"
            )
    except Exception as exc:  # mid-run failure: leave partial artifacts + error summary
        base.mkdir(parents=True, exist_ok=True)
        (base / "error_summary.json").write_text(
            json.dumps({"error": str(exc), "config": cfg.echo()}, indent=2) + "\n"
        )
        print(f"error: run failed: {exc}", file=sys.stderr)
        return 1
    return 0


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def cmd_oracle(args: argparse.Namespace) -> int:
    try:
        if args.config is not None:
            cfg = load_config(args.config)
            p = cfg.build_problem()
            name = cfg.problem
        else:
            p = get_problem(args.problem)
            name = args.problem
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if p.dim_x > 2:
        print("error: oracle grids support dim_x <= 2 only", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.grid_points
    grid = grid_marginal(p, n=n)
    grid.write_csv(out / "marginal.csv")
    modes = grid.find_modes()
    print(f"{name}: marginal grid written; {len(modes)} mode(s) at {modes}")

    if p.dim_x == 1 and p.dim_d == 1:
        x_axis = default_axes(p, 401)[0]
        gx = np.array([p.forward.eval(np.array([x]))[0] for x in np.linspace(*x_axis)])
        sd = float(np.sqrt(p.obs_cov[0, 0]))
        d_lo = min(gx.min(), p.obs[0]) - 4.0 * sd
        d_hi = max(gx.max(), p.obs[0]) + 4.0 * sd
        d_axis = (float(d_lo), float(d_hi), 401)
        for gamma in _parse_float_list(args.joint_gamma or ""):
            jg = grid_joint_1d(p, HyperParams(gamma=gamma, rho=0.5), x_axis, d_axis)
            jg.write_csv(out / f"joint_gamma_{gamma:g}.csv")
            print(f"joint grid at gamma={gamma:g} written")
        for rho in _parse_float_list(args.proposal_rho or ""):
            pg = grid_proposal_1d(p, HyperParams(gamma=0.01, rho=rho), x_axis, d_axis)
            pg.write_csv(out / f"proposal_rho_{rho:g}.csv")
            print(f"proposal grid at rho={rho:g} written")
    elif args.joint_gamma or args.proposal_rho:
        print("error: joint/proposal grids need a 1-D problem", file=sys.stderr)
        return 2
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    results: list[CheckResult] = standard_checks()
    if args.full:
        results.extend(chain_checks())
    width = max(len(r.name) for r in results)
    n_fail = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        n_fail += not r.passed
        print(f"{r.name:<{width}}  {status}  {r.detail}")
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return 1 if n_fail else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rml",
        description="Optimization-based independence Metropolis sampler.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a chain from a TOML config")
    p_run.add_argument("--config", required=True, help="path to the TOML configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument(
        "--chains",
        type=int,
        default=1,
        help="run N chains with splitmix64-derived seeds in per-chain subdirectories",
    )
    p_run.set_defaults(func=cmd_run)

    p_or = sub.add_parser("oracle", help="emit quadrature ground-truth grids")
    p_or.add_argument("--problem", default="example1", help="built-in problem name")
    p_or.add_argument("--config", default=None, help="TOML config supplying the problem")
    p_or.add_argument("--out", default="oracle_out", help="output directory")
    p_or.add_argument("--grid-points", type=int, default=1024, dest="grid_points")
    p_or.add_argument(
        "--joint-gamma",
        default=None,
        dest="joint_gamma",
        help="comma-separated gamma values for joint (x, d) target grids (1-D problems)",
    )
    p_or.add_argument(
        "--proposal-rho",
        default=None,
        dest="proposal_rho",
        help="comma-separated rho values for proposal density grids (1-D problems)",
    )
    p_or.set_defaults(func=cmd_oracle)

    p_val = sub.add_parser("validate", help="run the built-in property suite")
    p_val.add_argument(
        "--full",
        action="store_true",
        help="also run slow chain-level checks (acceptance windows, rho sweep)",
    )
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
