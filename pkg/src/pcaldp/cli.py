"""Command-line front end: ``pcaldp <command> --config FILE``.

Exit status is 0 on success, 1 when a computed check fails and 2 for
configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .chain import StateCapError, build_chain, stationary_distribution
from .entropy import EntropyReport, window_bound
from .io import (ConfigError, config_hash, config_label, dumps, kernel_from_dict, measure_csv,
                 measure_from_dict, measure_to_dict, read_json, table_csv)
from .lattice import KernelError, WindowError, assignments, validate
from .measures import (CylinderMeasure, ProbabilityError, half_l1, marginalize, push_kernel,
                       shift_measure)
from .oracle import (BudgetError, OracleBudget, UniquenessError, direct_window_terms,
                     dual_grid_max, exact_occupation_law, exact_stationary)
from .rate import RateConvergenceError, certify, dv_rate_primal, window_exhaustion, local_tilt
from .simulate import estimate_event, mass_at_least, run_occupation

ORACLE_COMMANDS = ("stationary", "occupation", "entropy", "dual")
BUNDLED = "bundled:"


class Context:
    """Resolved configuration shared by every command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        raw, base = _read_config(args.config)
        kernel_spec = raw.get("kernel")
        if isinstance(kernel_spec, str):
            kernel_spec = read_json(_resolve(kernel_spec, base))
        if not isinstance(kernel_spec, dict):
            raise ConfigError("config needs a 'kernel' object or path")
        self.kernel = kernel_from_dict(kernel_spec)
        self.experiment = dict(raw.get("experiment", {}))
        self.base = base
        self.seed = int(args.seed if args.seed is not None else raw.get("seed", 0))
        self.cap = args.cap
        resolved = {"kernel": kernel_spec, "experiment": self.experiment}
        overrides = {k: getattr(args, k) for k in ("tol", "samples", "T", "cap")}
        self.hash = config_hash({"command": args.command, "oracle": getattr(args, "oracle_command", None),
                                 "config": resolved, "seed": self.seed, "overrides": overrides})
        self._chain = None

    @property
    def chain(self):
        if self._chain is None:
            self._chain = build_chain(self.kernel, self.cap)
        return self._chain

    def param(self, name: str, default=None):
        flag = getattr(self.args, name, None)
        if flag is not None:
            return flag
        return self.experiment.get(name, default)

    def window(self, name: str, default=None) -> tuple:
        value = self.experiment.get(name, default)
        if value is None:
            raise ConfigError(f"experiment needs '{name}'")
        try:
            window = tuple(sorted(int(z) for z in value))
        except (TypeError, ValueError):
            raise ConfigError(f"'{name}' must be a list of sites") from None
        if not window or not set(window) <= set(self.kernel.sites):
            raise ConfigError(f"'{name}' must be a nonempty set of sites of the topology")
        return window

    def distribution(self, name: str, default="stationary") -> np.ndarray:
        """A law on the whole truncation from a config entry.

        Accepted forms: ``"stationary"``, ``"uniform"``,
        ``{"tilt": {"site", "beta"}}`` (a tilt of the stationary law),
        ``{"window", "probs"}`` over all sites, or ``{"file": path}``.
        """
        spec = self.experiment.get(name, default)
        chain = self.chain
        if spec == "stationary":
            return stationary_distribution(chain)
        if spec == "uniform":
            return np.full(chain.n_states, 1.0 / chain.n_states)
        if isinstance(spec, dict) and "tilt" in spec:
            tilt = spec["tilt"]
            try:
                site, beta = int(tilt["site"]), float(tilt["beta"])
            except (KeyError, TypeError, ValueError):
                raise ConfigError("tilt needs integer 'site' and numeric 'beta'") from None
            if site not in self.kernel.sites:
                raise ConfigError(f"tilt site {site} is not in the topology")
            return local_tilt(chain, stationary_distribution(chain), site, beta)
        if isinstance(spec, dict) and "file" in spec:
            spec = read_json(_resolve(spec["file"], self.base))
        if isinstance(spec, dict) and "window" in spec:
            mu = measure_from_dict(spec, self.kernel.alphabet)
            if mu.window != self.kernel.sites:
                raise ConfigError(f"'{name}' must be a law on every site {list(self.kernel.sites)}")
            return np.array(mu.probs)
        raise ConfigError(f"cannot interpret '{name}': {spec!r}")

    def stamp(self, report: dict) -> dict:
        report.update({"config_hash": self.hash, "seed": self.seed, "command": self.args.command,
                       "kernel_id": self.kernel.kernel_id(), "version": __version__})
        return report


def _read_config(path: str) -> tuple:
    if path.startswith(BUNDLED):
        name = path[len(BUNDLED):]
        ref = resources.files("pcaldp") / "configs" / f"{name}.json"
        if not ref.is_file():
            raise ConfigError(f"no bundled config named {name!r}")
        with resources.as_file(ref) as real:
            return read_json(real), Path(real).parent
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw, Path(path).resolve().parent


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _label_rows(window, probs, k):
    return [(config_label(v, k), repr(float(p))) for v, p in zip(assignments(window, k), probs)]


# -- commands --------------------------------------------------------------------


def cmd_validate(ctx: Context):
    positivity = bool(ctx.experiment.get("require_positivity", False))
    violations = [v.to_dict() for v in validate(ctx.kernel, positivity)]
    report = {"violations": violations, "require_positivity": positivity, "ok": not violations}
    text = table_csv(["assumption", "site", "h", "s", "message"],
                     [(v["assumption"], v["site"], v["h"], v["s"], v["message"]) for v in violations])
    return report, text, not violations


def _input_measure(ctx: Context) -> CylinderMeasure:
    """Either an explicit cylinder measure on any window or a law on the whole truncation."""
    spec = ctx.experiment.get("nu", "stationary")
    if isinstance(spec, dict) and "window" in spec:
        return measure_from_dict(spec, ctx.kernel.alphabet)
    return CylinderMeasure(ctx.kernel.sites, ctx.distribution("nu"), ctx.kernel.alphabet)


def cmd_push(ctx: Context):
    phi = ctx.window("phi")
    pushed = push_kernel(_input_measure(ctx), ctx.kernel, phi)
    report = {"measure": measure_to_dict(pushed), "n_phi": list(ctx.kernel.neighborhood_closure(phi))}
    return report, measure_csv(pushed), True


def cmd_shift(ctx: Context):
    if ctx.kernel.topology.kind != "halfline":
        raise ConfigError("shift needs a halfline topology")
    psi = ctx.window("psi", [0, 1])
    L = ctx.kernel.topology.L
    shifts = ctx.experiment.get("shifts", list(range(L - psi[-1])))
    mu = CylinderMeasure(ctx.kernel.sites, ctx.distribution("mu"), ctx.kernel.alphabet)
    invariant = marginalize(CylinderMeasure(ctx.kernel.sites, stationary_distribution(ctx.chain),
                                            ctx.kernel.alphabet), psi)
    rows = []
    for n in shifts:
        mu_n = shift_measure(mu, int(n), psi, ctx.kernel.topology)
        rows.append({"n": int(n), "probs": mu_n.probs.tolist(),
                     "tv_to_invariant": half_l1(mu_n.probs, invariant.probs)})
    report = {"psi": list(psi), "invariant_marginal": invariant.probs.tolist(), "rows": rows}
    ok = True
    check = ctx.experiment.get("decay_check")
    if check:
        by_n = {r["n"]: r["tv_to_invariant"] for r in rows}
        try:
            at, ratio = int(check["n"]), float(check["ratio"])
            ok = by_n[at] <= ratio * by_n[0]
        except (KeyError, TypeError, ValueError):
            raise ConfigError("decay_check needs 'n' and 'ratio' with n and 0 among the shifts") from None
        report["decay_check"] = {"n": at, "ratio": ratio, "passed": ok}
    labels = [config_label(v, ctx.kernel.alphabet) for v in assignments(psi, ctx.kernel.alphabet)]
    text = table_csv(["n", "tv_to_invariant"] + labels,
                     [[r["n"], repr(r["tv_to_invariant"])] + [repr(p) for p in r["probs"]] for r in rows])
    return report, text, ok


def _solve(ctx: Context):
    nu = ctx.distribution("nu")
    return dv_rate_primal(ctx.chain, nu, tol=float(ctx.param("tol", 1e-8)))


def cmd_rate(ctx: Context):
    result = _solve(ctx)
    cert = certify(result)
    report = result.to_dict()
    report["certificate"] = cert.to_dict()
    states = ctx.chain.states
    text = table_csv(["config", "nu", "dual_certificate"],
                     [(config_label(s, ctx.kernel.alphabet), repr(float(p)), repr(float(f)))
                      for s, p, f in zip(states, result.nu, result.dual_certificate)])
    return report, text, cert.passed


def cmd_bounds(ctx: Context):
    windows = ctx.experiment.get("windows")
    windows = None if windows is None else [tuple(sorted(int(z) for z in w)) for w in windows]
    nu = ctx.distribution("nu")
    table = window_exhaustion(ctx.kernel, nu, windows, tol=float(ctx.param("tol", 1e-8)), chain=ctx.chain)
    reports: list[EntropyReport] = [window_bound(table.rate.optimal_coupling, r.window) for r in table.rows]
    failures = table.failures()
    failures += [f"window {list(r.window)}: slack {r.slack:.3g}" for r in reports if r.slack < -1e-9]
    report = table.to_dict()
    report["entropy_reports"] = [r.to_dict() for r in reports]
    report["failures"] = failures
    text = table_csv(["n", "window", "alpha_n", "d_phi_n", "rhs", "tail_sup", "edge_affected", "slack"],
                     [(r.n, " ".join(map(str, r.window)), repr(r.alpha), repr(r.d_phi), repr(r.rhs),
                       repr(r.tail_sup), int(r.edge_affected), repr(e.slack))
                      for r, e in zip(table.rows, reports)])
    return report, text, not failures


def _x0(ctx: Context):
    x0 = ctx.experiment.get("x0")
    if x0 is None:
        raise ConfigError("experiment needs an explicit initial configuration 'x0'")
    return x0


def cmd_simulate(ctx: Context):
    T = int(ctx.param("T", 1000))
    window = ctx.window("window", [0])
    event = ctx.experiment.get("event")
    if event is None:
        occ = run_occupation(ctx.kernel, _x0(ctx), T, window, ctx.seed)
        report = {"window": list(occ.window), "T": T, "counts": occ.counts.tolist(),
                  "frequencies": occ.freqs.tolist()}
        k = ctx.kernel.alphabet
        text = table_csv(["config", "count", "frequency"],
                         [(config_label(v, k), int(c), repr(float(c) / T))
                          for v, c in zip(assignments(occ.window, k), occ.counts)])
        return report, text, True
    try:
        predicate = mass_at_least([int(c) for c in event["cells"]], float(event["threshold"]))
    except (KeyError, TypeError, ValueError):
        raise ConfigError("event needs 'cells' (window assignment indices) and 'threshold'") from None
    est = estimate_event(ctx.kernel, _x0(ctx), T, window, predicate,
                         int(ctx.param("samples", 1000)), ctx.seed)
    report = est.to_dict()
    report["window"] = list(window)
    text = table_csv(list(report), [[v if not isinstance(v, list) else " ".join(map(str, v))
                                     for v in report.values()]])
    return report, text, True


def cmd_oracle(ctx: Context):
    sub = ctx.args.oracle_command
    budget = OracleBudget(max_states=ctx.cap or OracleBudget().max_states)
    k = ctx.kernel.alphabet
    if sub == "stationary":
        pi = exact_stationary(ctx.chain, budget)
        return ({"probs": pi.tolist(), "window": list(ctx.kernel.sites)},
                table_csv(["config", "prob"], _label_rows(ctx.kernel.sites, pi, k)), True)
    if sub == "occupation":
        T = int(ctx.param("T", 10))
        x0 = int(ctx.experiment.get("x0_state", 0))
        target = [int(s) for s in ctx.experiment.get("target_states", [ctx.chain.n_states - 1])]
        law = exact_occupation_law(ctx.chain, x0, T, target, budget)
        return ({"T": T, "x0_state": x0, "target_states": target, "law": law.tolist()},
                table_csv(["count", "prob"], [(c, repr(float(p))) for c, p in enumerate(law)]), True)
    if sub == "entropy":
        phi = ctx.window("phi")
        nu = ctx.distribution("nu")
        terms = direct_window_terms(ctx.kernel, np.outer(nu, nu), phi)
        report = {"window": list(phi), "coupling": "nu x nu", **terms.__dict__}
        return report, table_csv(list(terms.__dict__), [[repr(v) for v in terms.__dict__.values()]]), True
    nu = ctx.distribution("nu")
    value = dual_grid_max(ctx.chain, nu, int(ctx.experiment.get("restarts", 4)),
                          int(ctx.experiment.get("grid_resolution", 21)), ctx.seed)
    return {"lower_bound": value}, table_csv(["lower_bound"], [[repr(value)]]), True


HANDLERS = {"validate": cmd_validate, "push": cmd_push, "shift": cmd_shift, "rate": cmd_rate,
            "bounds": cmd_bounds, "simulate": cmd_simulate, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment JSON, or bundled:NAME")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--samples", type=int)
    common.add_argument("--T", type=int)
    common.add_argument("--cap", type=int, help="state cap (default PCALDP_MAX_STATES or 4096)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(prog="pcaldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pcaldp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"validate": "check kernel assumptions", "push": "one-step image of a measure on a window",
             "shift": "shifted measures against the stationary marginal", "rate": "action functional",
             "bounds": "window bounds and nested-window table", "simulate": "occupation measures and events"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    oracle = sub.add_parser("oracle", parents=[common], help="brute-force reference computations")
    oracle.add_argument("oracle_command", choices=ORACLE_COMMANDS)
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        ctx = Context(args)
        report, text, ok = HANDLERS[args.command](ctx)
    except (ConfigError, KernelError, WindowError, StateCapError, ProbabilityError,
            BudgetError) as exc:
        print(f"pcaldp: configuration error: {exc}", file=sys.stderr)
        return 2
    except (RateConvergenceError, UniquenessError) as exc:
        print(f"pcaldp: {exc}", file=sys.stderr)
        return 1
    report = ctx.stamp(report)
    report["passed"] = ok
    if args.format == "json":
        _emit(dumps(report), args.out)
    else:
        header = f"# config_hash={ctx.hash} seed={ctx.seed} command={args.command}\n"
        _emit(header + text, args.out)
    if not ok:
        print(f"pcaldp: {args.command}: checks failed", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
