import argparse
import logging
import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from fp_control.adjoint import solve_adjoint, solve_hjb
from fp_control.core.config import ScenarioConfig, load_scenario
from fp_control.core.errors import ConfigError, SolverError
from fp_control.export import (
    write_active_set,
    write_adjoint,
    write_control,
    write_density,
    write_particle_states,
    write_particles_summary,
    write_report,
    write_residuals,
)
from fp_control.forward import (
    DensityPath,
    mass_and_loss,
    mass_identity_defect,
    path_cost,
    pushforward,
    solve_forward,
)
from fp_control.grid import Grid, NoisePath, flat_distance, sample_brownian
from fp_control.model import (
    BailoutParams,
    ModelSpec,
    bailout_model,
    constant_control,
    shift_control,
    shift_model,
)
from fp_control.particles import empirical_density, estimate_cost, simulate
from fp_control.picard import active_intervals, cost_comparison, picard_solve
from fp_control.reports import CompareReport, DistanceReport
from fp_control.sensitivity import extract_control, gradient_check_pairs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
D0_SNAPSHOTS = 10


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Scenario file (JSON or YAML)")
    common.add_argument("--out-dir", default=None, help="Output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, default=None, help="Random seed (overrides seed)")
    common.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one scenario key; may be repeated",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="fp-control",
        description="Solve and verify optimal control problems for nonlinear Fokker-Planck "
        "equations (government bailout model).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("forward", "Solve the forward equation for a constant control"),
        ("adjoint", "Solve the linear adjoint equation for a constant control"),
        ("hjb", "Solve the HJB equation against the uncontrolled density"),
        ("gradcheck", "Compare adjoint gradients with finite differences"),
        ("picard", "Solve the forward-backward system by Picard iteration"),
        ("compare", "Compare particle simulation and PDE solution at T"),
        ("d0", "Flat distances between particle and PDE densities over time"),
    ):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("forward", "adjoint", "compare", "d0"):
            cmd.add_argument(
                "--control", type=float, default=0.0, help="Constant control value (default 0)"
            )

    particles = sub.add_parser("particles", parents=[common], help="Simulate the particle system")
    particles.add_argument(
        "--control", type=float, default=0.0, help="Constant control value (default 0)"
    )
    particles.add_argument(
        "--dump-state",
        action="store_true",
        help="Also write every particle state to particles_state.parquet",
    )
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _require_noiseless(cfg: ScenarioConfig, command: str) -> None:
    if cfg.sigma0 > 0:
        raise ConfigError(
            f"'{command}' solves the noiseless system only; set sigma0 = 0 (got {cfg.sigma0:g})"
        )


def _constant(cfg: ScenarioConfig, value: float, g: Grid):
    if not 0.0 <= value <= cfg.g_max:
        raise ConfigError(f"--control {value:g} is outside [0, {cfg.g_max:g}]")
    return constant_control(value, g)


def _noise_path(cfg: ScenarioConfig, g: Grid) -> NoisePath:
    if cfg.sigma0 > 0:
        return sample_brownian(g, cfg.seed)
    return NoisePath(values=np.zeros(g.n_t + 1), seed=cfg.seed)


def _forward_in_original_coordinates(
    cfg: ScenarioConfig, spec: ModelSpec, gamma, g: Grid, wpath: NoisePath
) -> tuple[DensityPath, float]:
    """Solve the random equation along ``wpath`` and push it back to the original coordinates."""
    rho0 = cfg.initial_density(g)
    if spec.sigma0 == 0:
        path = solve_forward(spec, gamma, g, rho0)
        return path, path_cost(spec, path, gamma)
    shifted = shift_model(spec, wpath, g)
    shifted_gamma = shift_control(gamma, wpath, spec.sigma0, g)
    path = solve_forward(shifted, shifted_gamma, g, rho0)
    cost = path_cost(shifted, path, shifted_gamma)
    return pushforward(path, wpath, spec.sigma0, margin=cfg.shift_margin), cost


def cmd_forward(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    g = cfg.grid()
    spec = cfg.model_spec()
    gamma = _constant(cfg, args.control, g)
    path, cost = _forward_in_original_coordinates(cfg, spec, gamma, g, _noise_path(cfg, g))
    mass, loss = mass_and_loss(path)
    defect, leak = mass_identity_defect(path)
    summary = {
        "cost": cost,
        "mass_T": float(mass[-1]),
        "loss_T": float(loss[-1]),
        "max_mass_defect": float(np.max(np.maximum(defect - leak, 0.0))),
        "min_density": float(path.slices.min()),
    }
    return [
        write_density(path, cfg.out_dir / "density.csv"),
        write_report(summary, cfg.out_dir / "forward.json"),
    ]


def cmd_adjoint(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    _require_noiseless(cfg, "adjoint")
    g = cfg.grid()
    spec = cfg.model_spec()
    gamma = _constant(cfg, args.control, g)
    mu = solve_forward(spec, gamma, g, cfg.initial_density(g))
    u = solve_adjoint(spec, mu, gamma, g)
    return [
        write_density(mu, cfg.out_dir / "density.csv"),
        write_adjoint(u, cfg.out_dir / "adjoint.csv"),
    ]


def cmd_hjb(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    _require_noiseless(cfg, "hjb")
    g = cfg.grid()
    spec = cfg.model_spec()
    mu = solve_forward(spec, constant_control(0.0, g), g, cfg.initial_density(g))
    u = solve_hjb(spec, mu, g)
    return [
        write_adjoint(u, cfg.out_dir / "adjoint.csv"),
        write_control(extract_control(spec, u, 0.0, g), g, cfg.out_dir / "control.csv"),
    ]


def cmd_gradcheck(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    _require_noiseless(cfg, "gradcheck")
    g = cfg.grid()
    summary = gradient_check_pairs(
        cfg.model_spec(),
        g,
        cfg.initial_density(g),
        cfg.gradcheck_pairs,
        cfg.seed,
        eps=cfg.gradcheck_eps,
    )
    if not summary.passed:
        logger.warning("Gradient check failed: max rel_err %.3e", summary.max_rel_err)
    return [write_report(summary, cfg.out_dir / "gradcheck.json")]


def cmd_picard(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    _require_noiseless(cfg, "picard")
    g = cfg.grid()
    spec = cfg.model_spec()
    rho0 = cfg.initial_density(g)
    sol = picard_solve(spec, g, rho0, cfg.picard_options())
    comparison = cost_comparison(sol, spec, g, rho0, cfg.n_trials, cfg.seed)
    summary = {
        "converged": sol.converged,
        "iterations": sol.iterations,
        "cost": sol.cost,
        "smp_residual": sol.smp,
        "final_residual": float(sol.residual_history[-1]) if sol.iterations else None,
        "cost_comparison": comparison,
    }
    out = cfg.out_dir
    return [
        write_density(sol.density, out / "density.csv"),
        write_adjoint(sol.adjoint, out / "adjoint.csv"),
        write_control(sol.control, g, out / "control.csv"),
        write_residuals(sol.residual_history, sol.cost_history, out / "residuals.csv"),
        write_active_set(active_intervals(sol, spec, g), out / "active_set.csv"),
        write_report(summary, out / "picard.json"),
    ]


def cmd_particles(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    g = cfg.grid()
    gamma = _constant(cfg, args.control, g)
    traj = simulate(
        cfg.bailout_params(),
        gamma,
        _noise_path(cfg, g),
        cfg.n_particles,
        cfg.seed,
        g,
        killing=cfg.killing,
        keep_states=args.dump_state,
    )
    written = [write_particles_summary(traj, cfg.out_dir / "particles_summary.csv")]
    if args.dump_state:
        written.append(write_particle_states(traj, cfg.out_dir / "particles_state.parquet"))
    return written


def _noiseless_params(cfg: ScenarioConfig) -> BailoutParams:
    return cfg.bailout_params().model_copy(update={"sigma0": 0.0})


def cmd_compare(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    g = cfg.grid()
    gamma = _constant(cfg, args.control, g)
    rho0 = cfg.initial_density(g)
    params = _noiseless_params(cfg)
    spec = bailout_model(params)
    zero_path = NoisePath(values=np.zeros(g.n_t + 1), seed=cfg.seed)

    pde = solve_forward(spec, gamma, g, rho0)
    traj = simulate(params, gamma, zero_path, cfg.n_particles, cfg.seed, g, killing=cfg.killing)
    particle_cost, particle_se = estimate_cost(
        params, gamma, cfg.n_particles, cfg.n_paths, cfg.seed, g, killing=cfg.killing
    )

    shifted_distance = None
    if cfg.sigma0 > 0:
        noisy = cfg.bailout_params()
        wpath = sample_brownian(g, cfg.seed)
        pushed, _ = _forward_in_original_coordinates(
            cfg, bailout_model(noisy), gamma, g, wpath
        )
        noisy_traj = simulate(
            noisy, gamma, wpath, cfg.n_particles, cfg.seed, g, killing=cfg.killing
        )
        shifted_distance = flat_distance(
            empirical_density(noisy_traj.final, g), np.maximum(pushed.terminal, 0.0), g
        )

    report = CompareReport(
        n_particles=cfg.n_particles,
        flat_distance=flat_distance(
            empirical_density(traj.final, g), np.maximum(pde.terminal, 0.0), g
        ),
        shifted_flat_distance=shifted_distance,
        particle_mass=float(traj.mass[-1]),
        pde_mass=float(pde.mass[-1]),
        pde_cost=path_cost(spec, pde, gamma),
        particle_cost=particle_cost,
        particle_cost_se=particle_se,
    )
    return [write_report(report, cfg.out_dir / "compare.json")]


def cmd_d0(cfg: ScenarioConfig, args: argparse.Namespace) -> list[Path]:
    g = cfg.grid()
    gamma = _constant(cfg, args.control, g)
    params = _noiseless_params(cfg)
    pde = solve_forward(bailout_model(params), gamma, g, cfg.initial_density(g))
    zero_path = NoisePath(values=np.zeros(g.n_t + 1), seed=cfg.seed)
    traj = simulate(
        params,
        gamma,
        zero_path,
        cfg.n_particles,
        cfg.seed,
        g,
        killing=cfg.killing,
        keep_states=True,
    )
    steps = np.unique(np.linspace(0, g.n_t, D0_SNAPSHOTS + 1).astype(int))
    distances = [
        flat_distance(
            empirical_density(traj.states[k], g), np.maximum(pde.slices[k], 0.0), g
        )
        for k in steps
    ]
    report = DistanceReport(
        n_particles=cfg.n_particles,
        times=[float(g.times[k]) for k in steps],
        flat_distances=distances,
        max_distance=max(distances),
    )
    return [write_report(report, cfg.out_dir / "d0.json")]


COMMANDS: dict[str, Callable[[ScenarioConfig, argparse.Namespace], list[Path]]] = {
    "forward": cmd_forward,
    "adjoint": cmd_adjoint,
    "hjb": cmd_hjb,
    "gradcheck": cmd_gradcheck,
    "picard": cmd_picard,
    "particles": cmd_particles,
    "compare": cmd_compare,
    "d0": cmd_d0,
}


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv``, run one subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    values = {}
    if args.out_dir is not None:
        values["out_dir"] = Path(args.out_dir)
    if args.seed is not None:
        values["seed"] = args.seed

    try:
        cfg = load_scenario(args.config, args.override, **values)
        written = COMMANDS[args.command](cfg, args)
    except (ConfigError, ValidationError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except SolverError as e:
        logger.error("Solver failure in '%s': %s", args.command, e)
        return EXIT_SOLVER
    except OSError as e:
        logger.error("Could not write artifacts: %s", e)
        return EXIT_SOLVER

    for path in written:
        logger.info("Artifact: %s", path)
    return EXIT_OK


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
