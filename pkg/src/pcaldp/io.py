"""JSON and CSV formats for kernels, measures and reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .lattice import (BUILTINS, KernelError, LocalKernel, MalformedKernelError, Topology,
                      assignments, validate)
from .measures import CylinderMeasure, check_exact_probs


class ConfigError(ValueError):
    """A configuration file is missing, malformed or out of range."""


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable, allow_nan=True) + "\n"


def config_hash(obj) -> str:
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canonical.encode()).hexdigest()


# -- kernels ---------------------------------------------------------------------


def topology_from_dict(spec: dict) -> Topology:
    try:
        kind = spec["kind"]
        if kind == "torus":
            return Topology.torus(int(spec.get("d", 1)), int(spec["L"]))
        if kind == "halfline":
            return Topology.halfline(int(spec["L"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad topology {spec!r}: {exc}") from None
    raise ConfigError(f"unknown topology kind {kind!r}")


def kernel_from_dict(spec: dict, require_stochastic: bool = True) -> LocalKernel:
    """Build a kernel from its JSON description.

    ``spec["kernel"]`` is either ``{"builtin": name, "params": {...}}`` or
    ``{"tables": [{"z", "neighborhood", "rows"}, ...]}`` with ``rows``
    mapping a canonical neighbourhood index to a distribution. Explicit
    tables must be row-stochastic to 1e-12.
    """
    try:
        k = int(spec["alphabet"])
        topology = topology_from_dict(spec["topology"])
        body = spec["kernel"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"kernel file needs alphabet, topology and kernel: {exc}") from None
    if "builtin" in body:
        name = body["builtin"]
        if name not in BUILTINS:
            raise ConfigError(f"unknown builtin kernel {name!r}; choose from {sorted(BUILTINS)}")
        params = dict(body.get("params", {}))
        if name in ("uniform", "identity"):
            params.setdefault("alphabet", k)
        elif k != 2:
            raise ConfigError(f"builtin {name!r} is binary but alphabet is {k}")
        try:
            kernel = BUILTINS[name](topology, **params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {name!r}: {exc}") from None
    else:
        kernel = _explicit_kernel(k, topology, body)
    if require_stochastic:
        try:
            bad = [v for v in validate(kernel) if v.assumption == "A2"]
        except MalformedKernelError as exc:
            raise ConfigError(str(exc)) from None
        if bad:
            raise ConfigError(f"kernel violates A2 at site {bad[0].site}: {bad[0].message}")
    return kernel


def _explicit_kernel(k: int, topology: Topology, body: dict) -> LocalKernel:
    tables = body.get("tables")
    if not isinstance(tables, list):
        raise ConfigError("explicit kernel needs a 'tables' list")
    by_site = {}
    for entry in tables:
        try:
            z = int(entry["z"])
            nb = tuple(sorted(int(y) for y in entry["neighborhood"]))
            rows = {int(h): [float(p) for p in row] for h, row in entry["rows"].items()}
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"bad table entry: {exc}") from None
        size = k ** len(nb)
        if sorted(rows) != list(range(size)):
            raise ConfigError(f"site {z}: rows must be indexed 0..{size - 1}")
        if any(len(r) != k for r in rows.values()):
            raise ConfigError(f"site {z}: every row needs {k} probabilities")
        by_site[z] = (nb, np.array([rows[h] for h in range(size)]))
    if sorted(by_site) != list(topology.sites):
        raise ConfigError("explicit kernel must give exactly one table per site")
    radius = body.get("shift_invariant_radius")
    return LocalKernel(k, topology, tuple(by_site[z][0] for z in topology.sites),
                       tuple(by_site[z][1] for z in topology.sites),
                       None if radius is None else int(radius), body.get("name", "explicit"))


def kernel_to_dict(kernel: LocalKernel) -> dict:
    """Explicit-table description; loads back to an identical kernel."""
    tables = [{"z": z, "neighborhood": list(kernel.neighborhood(z)),
               "rows": {str(h): row.tolist() for h, row in enumerate(kernel.tables[z])}}
              for z in kernel.sites]
    body = {"tables": tables, "name": kernel.name}
    if kernel.shift_invariant_radius is not None:
        body["shift_invariant_radius"] = kernel.shift_invariant_radius
    return {"alphabet": kernel.alphabet, "topology": kernel.topology.to_dict(), "kernel": body}


def load_kernel(path) -> LocalKernel:
    return kernel_from_dict(read_json(path))


# -- measures --------------------------------------------------------------------


def measure_from_dict(spec: dict, alphabet: int = 2) -> CylinderMeasure:
    try:
        window = tuple(int(z) for z in spec["window"])
        probs = np.asarray(spec["probs"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"measure needs window and probs: {exc}") from None
    try:
        check_exact_probs(probs, "measure")
        return CylinderMeasure(window, probs, int(spec.get("alphabet", alphabet)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def measure_to_dict(mu: CylinderMeasure) -> dict:
    return {"window": list(mu.window), "probs": mu.probs.tolist(), "alphabet": mu.alphabet}


def config_label(values, k: int) -> str:
    sep = "" if k <= 10 else "."
    return sep.join(str(s) for s in values)


def table_csv(header: list, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def measure_csv(mu: CylinderMeasure) -> str:
    rows = [(config_label(v, mu.alphabet), repr(float(p)))
            for v, p in zip(assignments(mu.window, mu.alphabet), mu.probs)]
    return table_csv(["config", "prob"], rows)


__all__ = ["ConfigError", "KernelError", "read_json", "dumps", "config_hash", "kernel_from_dict",
           "kernel_to_dict", "load_kernel", "measure_from_dict", "measure_to_dict", "measure_csv",
           "table_csv", "config_label", "topology_from_dict"]
