"""rde-lab command line.

Exit codes: 0 success, 1 input error, 2 inconclusive verdict, 3 budget
exceeded.  JSON reports carry the resolved run configuration.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .convex_order import INCONCLUSIVE as CV_INCONCLUSIVE
from .convex_order import check_convex_order
from .endogeny import INCONCLUSIVE, endogeny_bivariate, endogeny_both, endogeny_higherlevel
from .higher_level import mu_bar
from .lp_feasibility import LPInconclusive
from .measure_core import (
    NORM_TOL,
    Measure,
    MeasureError,
    SimplexAtomMeasure,
    diagonal_mass,
    product,
    tv_distance,
)
from .rde_model import (
    BUNDLED,
    BudgetExceeded,
    NotFixedPoint,
    RdeSpec,
    SpecError,
    apply_T_power,
    apply_Tn_power,
    bundled,
    fixed_point_residual,
    iterate_T,
    load_spec,
)
from .rtp_mc import clt_tv_bound, coupled_agreement, root_law_estimate

EXIT_OK, EXIT_INPUT, EXIT_INCONCLUSIVE, EXIT_BUDGET = 0, 1, 2, 3


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    instance: str | None = None
    tol: float = 1e-10
    t_max: int = 2000
    depth: int = 5
    samples: int = 10**4
    seed: int = 0
    mode: str = "exact"
    merge_eps: float = NORM_TOL
    particles: int = 10**4
    starts: int = 8
    fmt: str = "json"
    out: str | None = None
    mu: list[float] | None = None
    rho1: str | None = None
    rho2: str | None = None

    def validate(self) -> None:
        for name in ("tol", "t_max", "depth", "samples", "particles", "starts"):
            if getattr(self, name) <= 0:
                raise InputError(f"--{name.replace('_', '-')} must be positive")
        if self.merge_eps < 0:
            raise InputError("--merge-eps must be >= 0")
        if self.seed < 0:
            raise InputError("--seed must be >= 0")
        if self.mode not in ("exact", "particle"):
            raise InputError(f"--mode must be exact or particle, got {self.mode!r}")
        if self.mode == "particle" and self.command not in ("endogeny",):
            raise InputError(f"--mode particle is not meaningful for {self.command}")


def resolve_spec(name: str) -> RdeSpec:
    """A path to an instance file, or a bundled name such as ex-c or xor."""
    if Path(name).is_file():
        return load_spec(name)
    if name.lower() in BUNDLED or name in BUNDLED.values():
        return bundled(name)
    raise InputError(f"no instance file or bundled instance named {name!r}")


def parse_weights(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"cannot parse weights {text!r}") from None


def resolve_atoms(arg: str) -> SimplexAtomMeasure:
    """An atom-list JSON file, or ``delta:w0,w1,..`` / ``bar:w0,w1,..`` for
    the point mass at a law and the law of a point mass drawn from it."""
    kind, _, rest = arg.partition(":")
    if kind in ("delta", "bar") and rest:
        mu = Measure.of(parse_weights(rest))
        return SimplexAtomMeasure.dirac(mu) if kind == "delta" else mu_bar(mu)
    path = Path(arg)
    if not path.is_file():
        raise InputError(f"measure file {arg!r} not found")
    try:
        return SimplexAtomMeasure.from_json(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{arg}: malformed atom list ({exc})") from None


def default_fixed_point(spec: RdeSpec, cfg: RunConfig) -> Measure:
    if cfg.mu is not None:
        if len(cfg.mu) != spec.space.size:
            raise InputError(f"--mu has {len(cfg.mu)} weights, instance has {spec.space.size} states")
        return Measure(spec.space, np.array(cfg.mu))
    mu, _, ok = iterate_T(spec, Measure.uniform(spec.space), cfg.t_max, cfg.tol)
    if not ok:
        raise InputError("iteration from the uniform law did not converge; pass --mu")
    return mu


def cmd_validate(cfg: RunConfig) -> tuple[dict, str, int]:
    spec = resolve_spec(cfg.instance)
    report = {"valid": True, "instance": spec.to_json(), "kappa_max": spec.kappa_max}
    return report, f"valid,{spec.name},{spec.space.size},{len(spec.noise)}\n", EXIT_OK


def _starts(spec: RdeSpec, n: int, seed: int) -> list[Measure]:
    k = spec.space.size
    out = [Measure.uniform(spec.space)] + [Measure.point(spec.space, x) for x in range(k)]
    rng = np.random.default_rng(seed)
    while len(out) < n:
        out.append(Measure(spec.space, rng.dirichlet(np.ones(k))))
    return out[:n]


def cmd_fixpoint(cfg: RunConfig) -> tuple[dict, str, int]:
    """Iterate T from several starts and report the distinct limits."""
    spec = resolve_spec(cfg.instance)
    found, failed = [], []
    for i, m0 in enumerate(_starts(spec, cfg.starts, cfg.seed)):
        mu, trace, ok = iterate_T(spec, m0, cfg.t_max, cfg.tol)
        if not ok:
            failed.append({"start": i, "residual": trace.residuals[-1]})
            continue
        for f in found:
            if tv_distance(f["mu"], mu) <= 10 * cfg.tol:
                f["starts"].append(i)
                break
        else:
            found.append({"mu": mu, "starts": [i], "steps": trace.entries[-1].t})
    points = [
        {"weights": f["mu"].weights.tolist(), "residual": fixed_point_residual(spec, f["mu"]),
         "starts": f["starts"], "steps": f["steps"]}
        for f in found
    ]
    report = {"fixed_points": points, "not_converged": failed}
    rows = ["index," + ",".join(f"w{x}" for x in range(spec.space.size)) + ",residual"]
    rows += [f"{i}," + ",".join(repr(float(w)) for w in p["weights"]) + f",{float(p['residual'])!r}" for i, p in enumerate(points)]
    return report, "\n".join(rows) + "\n", EXIT_OK if not failed else EXIT_INCONCLUSIVE


def cmd_endogeny(cfg: RunConfig) -> tuple[dict, str, int]:
    spec = resolve_spec(cfg.instance)
    mu = default_fixed_point(spec, cfg)
    if cfg.mode == "exact":
        combined, bv, hl = endogeny_both(spec, mu, cfg.t_max, cfg.tol, cfg.merge_eps)
    else:
        # particle estimates carry sampling noise, so only the bivariate
        # route decides; the particle run is reported alongside
        bv = endogeny_bivariate(spec, mu, cfg.t_max, cfg.tol)
        hl = endogeny_higherlevel(spec, mu, "particle", cfg.t_max, cfg.tol, cfg.merge_eps,
                                  cfg.particles, cfg.seed)
        combined = bv
    report = {
        "mu": mu.weights.tolist(),
        "status": combined.status,
        "verdict": combined.to_json(),
        "bivariate": bv.to_json(),
        "higher_level": hl.to_json(),
    }
    code = EXIT_INCONCLUSIVE if combined.status == INCONCLUSIVE else EXIT_OK
    return report, combined.to_csv(), code


def cmd_cvorder(cfg: RunConfig) -> tuple[dict, str, int]:
    rho1, rho2 = resolve_atoms(cfg.rho1), resolve_atoms(cfg.rho2)
    report = check_convex_order(rho1, rho2)
    out = report.to_json()
    buf = io.StringIO()
    if report.witness is not None:
        np.savetxt(buf, report.witness.P, delimiter=",", fmt="%.17g")
    else:
        buf.write(f"{report.verdict}\n")
    return out, buf.getvalue(), EXIT_INCONCLUSIVE if report.verdict == CV_INCONCLUSIVE else EXIT_OK


def cmd_simulate(cfg: RunConfig) -> tuple[dict, str, int]:
    spec = resolve_spec(cfg.instance)
    mu = default_fixed_point(spec, cfg)
    agree = coupled_agreement(spec, mu, cfg.depth, cfg.samples, cfg.seed, tol=cfg.tol)
    exact_diag = diagonal_mass(apply_Tn_power(spec, product([mu, mu]), cfg.depth))
    root = root_law_estimate(spec, mu, cfg.depth, cfg.samples, cfg.seed)
    exact_root = apply_T_power(spec, mu, cfg.depth)
    report = {
        "mu": mu.weights.tolist(),
        "agreement": agree.to_json(),
        "exact_diag_mass": exact_diag,
        "root_law": root.to_json(),
        "exact_root_law": exact_root.weights.tolist(),
        "root_tv": tv_distance(root.law, exact_root),
        "root_tv_clt_sigma": clt_tv_bound(exact_root.weights, cfg.samples),
    }
    csv = ("quantity,estimate,std_error,exact\n"
           f"agreement,{float(agree.value)!r},{float(agree.std_error)!r},{float(exact_diag)!r}\n")
    csv += "".join(f"root_p{x},{float(root.law.weights[x])!r},{float(root.std_errors[x])!r},"
                   f"{float(exact_root.weights[x])!r}\n"
                   for x in range(spec.space.size))
    return report, csv, EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "fixpoint": cmd_fixpoint,
    "endogeny": cmd_endogeny,
    "cvorder": cmd_cvorder,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--max-iter", dest="t_max", type=int, default=2000)
    common.add_argument("--depth", type=int, default=5)
    common.add_argument("--samples", type=int, default=10**4)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--mode", choices=("exact", "particle"), default="exact")
    common.add_argument("--merge-eps", dest="merge_eps", type=float, default=NORM_TOL)
    common.add_argument("--particles", type=int, default=10**4)
    common.add_argument("--starts", type=int, default=8)
    common.add_argument("--format", dest="fmt", choices=("json", "csv"), default="json")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--mu", type=parse_weights, default=None,
                        help="fixed point as comma-separated weights (default: iterate from uniform)")

    p = argparse.ArgumentParser(prog="rde-lab", description="RDE fixed points, endogeny and convex order on finite state spaces")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("validate", "check an instance file"),
                           ("fixpoint", "multi-start iteration of T"),
                           ("endogeny", "endogeny verdict by both routes"),
                           ("simulate", "Monte Carlo on truncated trees")]:
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("instance", help="instance JSON path or bundled name (ex-a .. ex-d)")
    sp = sub.add_parser("cvorder", parents=[common], help="decide rho1 <=cv rho2")
    sp.add_argument("rho1", help="atom-list JSON, delta:w0,w1,.. or bar:w0,w1,..")
    sp.add_argument("rho2")
    return p


def run(argv: list[str] | None = None) -> tuple[int, str, RunConfig]:
    """Parse, execute, and return (exit code, rendered output, config)."""
    cfg = RunConfig(**vars(build_parser().parse_args(argv)))
    try:
        cfg.validate()
        report, csv, code = COMMANDS[cfg.command](cfg)
    except BudgetExceeded as exc:
        return EXIT_BUDGET, _error(exc, cfg), cfg
    except LPInconclusive as exc:
        return EXIT_INCONCLUSIVE, _error(exc, cfg), cfg
    except (InputError, SpecError, MeasureError, NotFixedPoint, OSError, ValueError) as exc:
        return EXIT_INPUT, _error(exc, cfg), cfg
    if cfg.fmt == "csv":
        return code, csv, cfg
    return code, json.dumps({"config": asdict(cfg), **report}, indent=2) + "\n", cfg


def _error(exc: Exception, cfg: RunConfig) -> str:
    return json.dumps({"error": str(exc), "kind": type(exc).__name__, "config": asdict(cfg)}, indent=2) + "\n"


def main(argv: list[str] | None = None) -> int:
    code, text, cfg = run(argv)
    if code in (EXIT_INPUT, EXIT_BUDGET):
        sys.stderr.write(text)
    elif cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
