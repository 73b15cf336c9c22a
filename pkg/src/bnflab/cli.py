"""Batch experiment runner.

    bnflab run <config.json> [--out DIR] [--jobs N] [--strict]
    bnflab accept [--upto K]

A config is a flat JSON object whose "kind" selects the experiment:

    lemma-sweep    exhaustive inequality sweeps over a finite pair budget
    measure-mc     Monte Carlo estimate of the resonant-frequency measure
    bnf-run        one normal-form construction, manifest and per-step table
    stability-run  empirical first-exit times from a norm tube
    drift-toy      the two-mode and three-mode drift families over a grid
    ledger-dump    every constants-ledger entry, exactly as evaluated

Each run writes its tables plus a `manifest.json` into the output directory.
Manifests and CSVs are deterministic for fixed config and seeds (no
timestamps; wall-clock timings never enter the files), so reruns are
byte-identical and diffable.  The output root defaults to ./runs, or the
BNFLAB_OUT environment variable when set; the config's stem names the
subdirectory.

Exit codes: 0 on success, 1 when the run finished but an invariant failed
(outputs are still written), 2 on a config or usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .constants import ConstantsLedger, LedgerInputs
from .engine import SmallnessViolation, bnf_normalize
from .frequencies import (
    MEASURE_CSV_HEADER,
    FrequencyVector,
    LatticeBudget,
    measure_estimate_mc,
    sample_frequency,
)
from .hamiltonians import HamiltonianBuilder, MajorantHamiltonian, MultiIndex
from .simulator import (
    NonlinearitySpec,
    drift_toy_H,
    drift_toy_K,
    fit_loglog_slope,
    hamiltonian_from_nonlinearity,
    measure_stability_time,
)
from .smalldiv import (
    SWEEP_CSV_HEADER,
    sweep_coefficient_monotonicity,
    sweep_constance,
    sweep_near_resonant,
    sweep_rearrangement,
)
from .spaces import WeightProfile

__all__ = ["ConfigError", "main", "run_config", "reproduce_acceptance"]


class ConfigError(ValueError):
    """Invalid config; the message starts with the offending field path."""


_MISSING = object()


def _get(cfg: dict, key: str, path: str, types, default=_MISSING):
    if key not in cfg:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    val = cfg[key]
    if val is None and default is not _MISSING:
        return default
    if types is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, types) or isinstance(val, bool) and types is not bool:
        want = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}.{key}: expected {want}, got {type(val).__name__}")
    return val


def _no_extras(cfg: dict, allowed: set, path: str) -> None:
    extra = set(cfg) - allowed
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}: unknown field")


def _ledger_from(cfg: dict, path: str) -> ConstantsLedger:
    overrides = _get(cfg, "ledger", path, dict, default={})
    allowed = {f for f in LedgerInputs.__dataclass_fields__}
    _no_extras(overrides, allowed, f"{path}.ledger")
    try:
        return ConstantsLedger(LedgerInputs(**overrides))
    except Exception as err:  # LedgerInputError carries the field name
        raise ConfigError(f"{path}.ledger: {err}") from err


def _profile_from(cfg, path: str) -> WeightProfile | None:
    if cfg is None:
        return None
    family = _get(cfg, "family", path, str)
    p = _get(cfg, "p", path, float, default=1.0)
    if family == "sobolev":
        return WeightProfile.sobolev(p)
    if family == "modified":
        return WeightProfile.modified_sobolev(p)
    if family == "gevrey":
        return WeightProfile.gevrey(
            p,
            _get(cfg, "s", path, float),
            _get(cfg, "a", path, float, default=0.0),
            _get(cfg, "theta", path, float, default=0.5),
        )
    raise ConfigError(f"{path}.family: unknown profile family {family!r}")


def _omega_from(cfg, window: int, path: str):
    if cfg is None:
        return FrequencyVector.unperturbed(window)
    q = _get(cfg, "q", path, float, default=0.0)
    seed = _get(cfg, "seed", path, int, default=None)
    _no_extras(cfg, {"q", "seed"}, path)
    if seed is None:
        return FrequencyVector.unperturbed(window, q=q)
    return sample_frequency(q, window, seed)


def _nonlinearity_from(cfg: dict, path: str) -> NonlinearitySpec:
    terms = _get(cfg, "terms", path, list)
    radius = _get(cfg, "radius", path, float, default=1.0)
    _no_extras(cfg, {"terms", "radius"}, path)
    try:
        return NonlinearitySpec(tuple((int(d), float(c)) for d, c in terms), radius)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}.terms: {err}") from err


def _multiindex_from(data: dict, path: str) -> MultiIndex:
    try:
        return MultiIndex({int(j): int(e) for j, e in data.items()})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


# -- kind runners --------------------------------------------------------------

_SWEEPS = {
    "rearrangement": sweep_rearrangement,
    "constance": sweep_constance,
    "near-resonant": sweep_near_resonant,
    "coefficient-monotonicity": sweep_coefficient_monotonicity,
}


def _run_one_sweep(name: str, kwargs: dict):
    return name, _SWEEPS[name](**kwargs)


def _run_lemma_sweep(cfg: dict, out: Path, jobs: int, strict: bool):
    path = "lemma-sweep"
    names = _get(cfg, "sweeps", path, list, default=sorted(_SWEEPS))
    for n in names:
        if n not in _SWEEPS:
            raise ConfigError(f"{path}.sweeps: unknown sweep {n!r}")
    max_degree = _get(cfg, "max_degree", path, int, default=8)
    max_mode = _get(cfg, "max_mode", path, int, default=6)
    ledger = _ledger_from(cfg, path)
    tau1 = _get(cfg, "tau1", path, float, default=ledger.value("tau1"))
    thetas = tuple(_get(cfg, "thetas", path, list, default=[0.25, 0.5, 0.75]))
    qs = tuple(_get(cfg, "qs", path, list, default=[0.0, 1.0]))

    jobs_args = []
    for name in names:
        kwargs = {"max_degree": max_degree, "max_mode": max_mode}
        if name == "constance":
            kwargs["thetas"] = thetas
        elif name == "near-resonant":
            kwargs["thetas"] = thetas
            kwargs["qs"] = qs
        elif name == "coefficient-monotonicity":
            kwargs["tau1"] = tau1
        jobs_args.append((name, kwargs))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = dict(pool.map(_run_one_sweep, *zip(*jobs_args)))
    else:
        reports = dict(_run_one_sweep(*a) for a in jobs_args)

    rows = [[_fmt(v) for v in reports[name].csv_values()] for name in names]
    _write_csv(out / "sweeps.csv", SWEEP_CSV_HEADER, rows)
    ok = all(reports[name].ok for name in names)
    summary = {
        name: {
            "cases_checked": reports[name].cases_checked,
            "failures": reports[name].failures,
            "worst_margin": reports[name].worst_margin,
        }
        for name in names
    }
    return ok, summary


def _run_measure_mc(cfg: dict, out: Path, jobs: int, strict: bool):
    path = "measure-mc"
    gammas = _get(cfg, "gammas", path, list)
    q = _get(cfg, "q", path, float, default=0.0)
    trials = _get(cfg, "trials", path, int, default=2000)
    seed = _get(cfg, "seed", path, int)
    window = _get(cfg, "window", path, int, default=8)
    bcfg = _get(cfg, "budget", path, dict, default={})
    _no_extras(bcfg, {"max_support", "max_entry", "max_mode"}, f"{path}.budget")
    budget = LatticeBudget(
        max_support=bcfg.get("max_support", 3),
        max_entry=bcfg.get("max_entry", 2),
        max_mode=bcfg.get("max_mode", min(8, window)),
    )
    ratio_bound = _get(cfg, "max_fraction_over_gamma", path, float, default=None)
    rows = measure_estimate_mc(gammas, q, trials, budget, seed, window=window)
    _write_csv(out / "measure.csv", MEASURE_CSV_HEADER, [[_fmt(v) for v in r.csv_values()] for r in rows])
    fractions = [r.fraction for r in rows]
    ok = all(a <= b for a, b in zip(fractions, fractions[1:]))
    if ratio_bound is not None:
        ok = ok and all(r.fraction <= ratio_bound * r.gamma for r in rows)
    summary = {
        "rows": [r.csv_values() for r in rows],
        "monotone": all(a <= b for a, b in zip(fractions, fractions[1:])),
    }
    return ok, summary


def _hamiltonian_from(cfg: dict, path: str) -> MajorantHamiltonian:
    window = _get(cfg, "window", path, int)
    cap = _get(cfg, "degree_cap", path, int, default=None)
    _no_extras(cfg, {"window", "degree_cap", "nonlinearity", "actions", "pairs"}, path)
    parts = []
    if "nonlinearity" in cfg:
        spec = _nonlinearity_from(cfg["nonlinearity"], f"{path}.nonlinearity")
        parts.append(hamiltonian_from_nonlinearity(spec, window, degree_cap=cap))
    extras = cfg.get("actions", []) or cfg.get("pairs", [])
    if extras or not parts:
        builder = HamiltonianBuilder(window, degree_cap=cap)
        for j, coeff in _get(cfg, "actions", path, list, default=[]):
            builder.add_action(int(j), float(coeff))
        for k, pair in enumerate(_get(cfg, "pairs", path, list, default=[])):
            alpha = _multiindex_from(pair.get("alpha", {}), f"{path}.pairs[{k}].alpha")
            beta = _multiindex_from(pair.get("beta", {}), f"{path}.pairs[{k}].beta")
            coeff = complex(pair.get("re", 0.0), pair.get("im", 0.0))
            builder.add_real_pair(alpha, beta, coeff)
        parts.append(builder.build())
    total = parts[0]
    for extra in parts[1:]:
        total = total + extra
    if cap is None:
        cap = total.max_degree() if not total.is_zero() else 4
    return total.with_cap(cap)


def _run_bnf(cfg: dict, out: Path, jobs: int, strict: bool):
    path = "bnf-run"
    case = _get(cfg, "case", path, str)
    steps = _get(cfg, "steps", path, int)
    r = _get(cfg, "r", path, float)
    ledger = _ledger_from(cfg, path)
    G = _hamiltonian_from(_get(cfg, "hamiltonian", path, dict), f"{path}.hamiltonian")
    omega = _omega_from(cfg.get("omega"), G.window, f"{path}.omega")
    kwargs = {}
    if "r_bar" in cfg:
        kwargs["r_bar"] = _get(cfg, "r_bar", path, float)
    if _get(cfg, "allow_radius_override", path, bool, default=False):
        kwargs["allow_radius_override"] = True
    try:
        result = bnf_normalize(G, omega, case, steps, r, ledger, strict=strict, **kwargs)
    except SmallnessViolation as err:
        return False, {"aborted": str(err)}
    manifest = result.manifest()
    with open(out / "bnf.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    header = ("n", "r_norm_in", "z_norm_in", "bound_Z", "bound_R", "smallness_ok", "displacement_bound")
    rows = [
        [
            rep.n,
            _fmt(rep.r_norm_in),
            _fmt(rep.z_norm_in),
            _fmt(rep.bound_Z),
            _fmt(rep.bound_R),
            int(rep.smallness_ok),
            _fmt(rep.displacement_bound),
        ]
        for rep in result.step_reports
    ]
    _write_csv(out / "steps.csv", header, rows)
    ok = all(result.flags.values())
    return ok, {"flags": result.flags, "eps": result.eps}


def _run_stability(cfg: dict, out: Path, jobs: int, strict: bool):
    path = "stability-run"
    window = _get(cfg, "window", path, int)
    spec = _nonlinearity_from(_get(cfg, "nonlinearity", path, dict), f"{path}.nonlinearity")
    omega = _omega_from(cfg.get("omega"), window, f"{path}.omega")
    profile = _profile_from(cfg.get("profile"), f"{path}.profile")
    m = measure_stability_time(
        spec,
        omega,
        window,
        _get(cfg, "delta", path, float),
        _get(cfg, "dt", path, float),
        _get(cfg, "t_max", path, float),
        profile=profile,
        n_members=_get(cfg, "n_members", path, int, default=16),
        seed=_get(cfg, "seed", path, int, default=2026),
        tube_factor=_get(cfg, "tube_factor", path, float, default=4.0),
        check_every=_get(cfg, "check_every", path, int, default=1),
        support=_get(cfg, "support", path, int, default=None),
    )
    with open(out / "stability.json", "w") as fh:
        json.dump(m.to_json_dict(), fh, indent=1, sort_keys=True)
    require = _get(cfg, "require_min_exit", path, float, default=None)
    ok = True if require is None else m.min_exit_time > require
    return ok, {"min_exit_time": m.min_exit_time, "fraction_capped": m.fraction_capped}


_TOY_HEADER = ("family", "j", "delta", "drift", "predicted", "ratio", "invariant", "invariant_drift")


def _run_one_toy(family: str, j: int, delta: float, kwargs: dict):
    toy = drift_toy_H if family == "H" else drift_toy_K
    return family, j, delta, toy(j, delta, **kwargs)


def _run_drift_toy(cfg: dict, out: Path, jobs: int, strict: bool):
    path = "drift-toy"
    family = _get(cfg, "family", path, str)
    if family not in ("H", "K"):
        raise ConfigError(f"{path}.family: expected 'H' or 'K', got {family!r}")
    j_values = _get(cfg, "j_values", path, list)
    deltas = _get(cfg, "deltas", path, list)
    tol = _get(cfg, "invariant_tol", path, float, default=1e-10)
    kwargs = {
        "decay": _get(cfg, "decay", path, float, default=1.0),
        "t_final": _get(cfg, "t_final", path, float, default=1.0),
        "amplitude_scale": _get(cfg, "amplitude_scale", path, float, default=1.0),
    }
    if family == "H":
        kwargs["a_strip"] = _get(cfg, "a_strip", path, float, default=1.0)

    grid = [(family, int(j), float(d), kwargs) for j in j_values for d in deltas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one_toy, *zip(*grid)))
    else:
        results = [_run_one_toy(*g) for g in grid]

    rows = []
    worst_invariant = 0.0
    drifts: dict[int, list] = {}
    for fam, j, delta, res in results:
        for name, drift in sorted(res.invariant_drifts.items()):
            worst_invariant = max(worst_invariant, drift)
            rows.append(
                [fam, j, _fmt(delta), _fmt(res.drift), _fmt(res.predicted_drift),
                 _fmt(res.drift_ratio), name, _fmt(drift)]
            )
        drifts.setdefault(j, []).append((delta, res.drift))
    _write_csv(out / "drift.csv", _TOY_HEADER, rows)
    slopes = {
        j: fit_loglog_slope([d for d, _ in pts], [v for _, v in pts])
        for j, pts in drifts.items()
        if len(pts) >= 2
    }
    ok = worst_invariant <= tol
    return ok, {"worst_invariant_drift": worst_invariant, "slopes": slopes}


def _run_ledger_dump(cfg: dict, out: Path, jobs: int, strict: bool):
    path = "ledger-dump"
    ledger = _ledger_from(cfg, path)
    data = {name: ledger.entry(name).to_json_dict() for name in ledger.names()}
    for case in _get(cfg, "cases", path, list, default=[]):
        steps = _get(cfg, "case_steps", path, int, default=4)
        data[f"case_{case}_n{steps}"] = {
            k: v.to_json_dict() for k, v in ledger.case_constants(case, steps).items()
        }
    with open(out / "ledger.json", "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
    return True, {"entries": len(data)}


_RUNNERS = {
    "lemma-sweep": _run_lemma_sweep,
    "measure-mc": _run_measure_mc,
    "bnf-run": _run_bnf,
    "stability-run": _run_stability,
    "drift-toy": _run_drift_toy,
    "ledger-dump": _run_ledger_dump,
}


def run_config(config_path, out_dir=None, jobs: int = 1, strict: bool = False) -> int:
    """Execute one config file; returns the process exit code."""
    config_path = Path(config_path)
    try:
        cfg = json.loads(config_path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"{config_path}: not valid JSON ({err})")
    if not isinstance(cfg, dict):
        raise ConfigError(f"{config_path}: top level must be a JSON object")
    kind = _get(cfg, "kind", config_path.stem, str)
    if kind not in _RUNNERS:
        raise ConfigError(f"{config_path.stem}.kind: unknown kind {kind!r} (one of {sorted(_RUNNERS)})")

    root = Path(out_dir) if out_dir is not None else Path(os.environ.get("BNFLAB_OUT", "runs"))
    out = root / config_path.stem
    out.mkdir(parents=True, exist_ok=True)

    ok, summary = _RUNNERS[kind](cfg, out, jobs, strict)

    outputs = {}
    for p in sorted(out.iterdir()):
        if p.name != "manifest.json" and p.is_file():
            outputs[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {"kind": kind, "config": cfg, "ok": ok, "summary": summary, "outputs": outputs}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=_json_default)
    return 0 if ok else 1


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def reproduce_acceptance(upto: int | None = None, stream=None):
    """Run the acceptance criteria in order; returns (ok, first_failed_name)."""
    from . import acceptance

    stream = sys.stdout if stream is None else stream
    first_failed = None
    for res in acceptance.run_all(upto=upto):
        print(res.line(), file=stream)
        if not res.ok and first_failed is None:
            first_failed = res.name
    return first_failed is None, first_failed


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bnflab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a JSON experiment config")
    p_run.add_argument("config", help="path to the config file")
    p_run.add_argument("--out", default=None, help="output root (default: $BNFLAB_OUT or ./runs)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel workers where applicable")
    p_run.add_argument("--strict", action="store_true", help="abort bnf runs on smallness violations")
    p_accept = sub.add_parser("accept", help="re-run acceptance criteria, stop reporting at first failure")
    p_accept.add_argument("--upto", type=int, default=None, help="only run criteria 1..K")
    args = parser.parse_args(argv)

    if args.command == "accept":
        ok, first = reproduce_acceptance(upto=args.upto)
        if not ok:
            print(f"first failed criterion: {first}", file=sys.stderr)
        return 0 if ok else 1
    try:
        return run_config(args.config, args.out, args.jobs, args.strict)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
