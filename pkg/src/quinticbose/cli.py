"""Experiment driver: ``quinticbose --experiment NAME [--config FILE.yaml] [overrides]``.

Exit status: 0 when every criterion passes, 1 on a numerical failure (the failing
criteria are named on stderr and in the JSON summary), 2 on an invalid config.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import yaml

from . import __version__
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment, validate
from .io import dump_array, write_csv

SCHEMA_VERSION = 1
log = logging.getLogger("quinticbose")

_LIST_FIELDS = {"N_list", "pairing_H", "pairing_K"}


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if hasattr(x, "item"):
        return _json_safe(x.item())
    return x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quinticbose", description="Run one named experiment.")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="YAML file with ExperimentConfig fields")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--version", action="version", version=__version__)
    g = p.add_argument_group("overrides")
    g.add_argument("--grid-n", dest="grid_n", type=int)
    g.add_argument("--amplitude", type=float)
    g.add_argument("--integral", type=float)
    g.add_argument("--radius", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--form", choices=("pair_product_sum", "triple_product"))
    g.add_argument("--N-list", dest="N_list", type=int, nargs="+")
    g.add_argument("--dt", type=float)
    g.add_argument("--t-final", dest="t_final", type=float)
    g.add_argument("--M-modes", dest="M_modes", type=int)
    g.add_argument("--P", dest="P", type=int)
    g.add_argument("--m", dest="m", type=int)
    g.add_argument("--eta-policy", dest="eta_policy")
    g.add_argument("--sites-per-dim", dest="sites_per_dim", type=int)
    g.add_argument("--pairing-H", dest="pairing_H", type=float, nargs="+")
    g.add_argument("--pairing-K", dest="pairing_K", type=float, nargs="+",
                   help="row-major entries of the symmetric K matrix")
    g.add_argument("--n-instances", dest="n_instances", type=int)
    g.add_argument("--dump", action="store_true", default=None, help="write binary array dumps")
    return p


def load_config(args) -> tuple[ExperimentConfig | None, list[str]]:
    """Merge file and flags (flags win); returns the config or a list of problems."""
    data = {}
    if args.config is not None:
        try:
            data = yaml.safe_load(args.config.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            return None, [f"config: cannot read {args.config}: {exc}"]
        if not isinstance(data, dict):
            return None, ["config: top level must be a mapping"]
        # nested sections are accepted and flattened
        flat = {}
        for k, v in data.items():
            if isinstance(v, dict) and k in ("grid", "potential", "time", "fock", "lattice", "sweep"):
                flat.update(v)
            else:
                flat[k] = v
        data = flat
    known = set(ExperimentConfig.field_names())
    unknown = sorted(set(data) - known)
    if unknown:
        return None, [f"config: unknown field {k!r}" for k in unknown]
    flags = {k: v for k, v in vars(args).items() if k in known and v is not None}
    if args.out is not None:
        flags["output"] = str(args.out)
    if "pairing_K" in flags and "pairing_H" in flags:
        n = len(flags["pairing_H"])
        vals = flags["pairing_K"]
        if len(vals) != n * n:
            return None, ["pairing_K: needs len(pairing_H)^2 entries"]
        flags["pairing_K"] = [vals[i * n:(i + 1) * n] for i in range(n)]
    merged = {**data, **flags}
    name = merged.pop("experiment", None)
    if name is None:
        return None, ["experiment: missing (use --experiment or the config file)"]
    try:
        cfg = ExperimentConfig.for_experiment(str(name), **merged)
    except TypeError as exc:
        return None, [f"config: {exc}"]
    for k in _LIST_FIELDS:
        v = getattr(cfg, k)
        if v is not None and not isinstance(v, list):
            setattr(cfg, k, [v])
    problems = validate(cfg)
    return (cfg if not problems else None), problems


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("QUINTICBOSE_LOG", "WARNING"),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cfg, problems = load_config(args)
    if cfg is None:
        report = {"schema_version": SCHEMA_VERSION, "status": "invalid_config", "errors": problems}
        print(json.dumps(report, indent=2))
        return 2
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"schema_version": SCHEMA_VERSION, "experiment": cfg.experiment,
               "version": __version__, "config": cfg.to_dict()}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res, wall = run_experiment(cfg)
    except (ArithmeticError, RuntimeError, MemoryError, ValueError) as exc:
        summary.update(status="numerical_failure", failed=[type(exc).__name__], error=str(exc),
                       passed=False)
        (out / f"{cfg.experiment}_summary.json").write_text(json.dumps(_json_safe(summary), indent=2))
        print(f"{cfg.experiment}: FAILED ({type(exc).__name__}: {exc})", file=sys.stderr)
        return 1
    files = []
    for name, (header, rows, footer) in res.tables.items():
        files.append(write_csv(out / f"{cfg.experiment}_{name}.csv", header, rows, footer).name)
    for name, arr in res.arrays.items():
        files.append(dump_array(out / f"{cfg.experiment}_{name}.qmfd", arr).name)
    failed = [k for k, c in res.criteria.items() if not c.passed]
    summary.update(
        status="ok" if not failed else "numerical_failure",
        passed=not failed,
        failed=failed,
        criteria={k: {"value": c.value, "threshold": c.threshold, "passed": c.passed}
                  for k, c in res.criteria.items()},
        info=res.info,
        warnings=[str(w.message) for w in caught],
        wall_time=wall,
        files=files,
    )
    (out / f"{cfg.experiment}_summary.json").write_text(json.dumps(_json_safe(summary), indent=2))
    for k, c in res.criteria.items():
        print(f"{'PASS' if c.passed else 'FAIL'} {k} = {c.value:.6g} ({c.threshold})")
    if failed:
        print(f"{cfg.experiment}: failing criteria: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
