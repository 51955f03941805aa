"""Scenario-driven command line front end.

Usage::

    asdweld <subcommand> --scenario FILE [--seed N] [--threads N] [--out DIR]
                         [--max-passes N] [--target X]

Subcommands: ``weld``, ``decay``, ``lemma``, ``lipschitz``, ``equiv``,
``energy``, ``dump``.  The output directory defaults to ``$ASDWELD_OUT`` and
then to ``./asdweld-out``.  Scenario files are strict JSON (see
``docs/scenario.md``); ``--scenario bundled:<name>`` loads one of the
scenarios shipped with the package.
"""

import argparse
import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import moduli, welding
from .fields import algebra as alg
from .fields import calculus as calc
from .fields import io as fio
from .fields.calculus import Connection
from .geometry import GeometryError, NeckParams

SCENARIO_VERSION = 1
OUT_ENV = "ASDWELD_OUT"
DEFAULT_OUT = "asdweld-out"

# Every accepted key with its default; ``None`` marks a required or optional
# value without a default.  Nested dicts are checked recursively.
DEFAULTS = {
    "version": SCENARIO_VERSION,
    "name": "scenario",
    "seed": 0,
    "chart": {"resolution": 16, "size": None},
    "neck": {"k": 0.5, "N": 2.0, "lam": 0.04, "q": 4, "budget": 1e-2},
    "catalog": None,
    "chain": {"assignment": None, "periodic": True},
    "rho": {"kind": "random"},
    "solver": {"p": 8, "tol": 1e-8, "inner_tol": None, "mu": 0.0, "max_iter": 4000, "max_picard": 30},
    "passes": {"max_passes": 30, "target": 1e-6, "floor_factor": 10.0},
    "output": {"dir": None, "cache": None},
    "lemma": {"draws": 10000, "mode": "worst-case"},
    "lipschitz": {"samples": 2, "rho_prime": {"kind": "random"}},
    "equiv": {"patterns": 10, "angle": 0.7853981633974483, "neck": 0, "axis": [0.0, 0.0, 1.0]},
    "dump": {"blocks": None, "fields": ["perturbation", "sd_curvature"]},
}
BACKGROUND_KEYS = {"flat": {"kind"}, "bpst": {"kind", "center", "scale", "clean_tol"}}
RHO_KINDS = {"identity": {"kind"}, "random": {"kind"}, "explicit": {"kind", "values"},
             "twist": {"kind", "of", "signs"}}
SUBCOMMANDS = ("weld", "decay", "lemma", "lipschitz", "equiv", "energy", "dump")


class ScenarioError(ValueError):
    """The scenario violates an invariant; the message names the first one."""


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ScenarioError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _merge(defaults, given, where):
    if not isinstance(given, dict):
        raise ScenarioError(f"{where or 'scenario'} must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ScenarioError(f"unknown key {(where + '.' if where else '') + unknown[0]!r}")
    out = {}
    for key, default in defaults.items():
        path = f"{where}.{key}" if where else key
        if isinstance(default, dict) and key in given and key not in ("rho", "rho_prime"):
            out[key] = _merge(default, given[key], path)
        elif key in given:
            out[key] = copy.deepcopy(given[key])
        else:
            out[key] = copy.deepcopy(default)
    return out


def _check_rho_spec(spec, where):
    if not isinstance(spec, dict) or spec.get("kind") not in RHO_KINDS:
        raise ScenarioError(f"{where}.kind must be one of {sorted(RHO_KINDS)}")
    unknown = sorted(set(spec) - RHO_KINDS[spec["kind"]])
    if unknown:
        raise ScenarioError(f"unknown key {where + '.' + unknown[0]!r}")
    if spec["kind"] == "twist":
        _check_rho_spec(spec.get("of"), where + ".of")
        if "signs" not in spec:
            raise ScenarioError(f"{where}.signs is required for a twist")
    if spec["kind"] == "explicit" and "values" not in spec:
        raise ScenarioError(f"{where}.values is required")


@dataclass(frozen=True)
class Scenario:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def neck(self):
        return NeckParams(**self.data["neck"])

    def canonical(self):
        return json.dumps(self.data, sort_keys=True)


def parse_scenario(data):
    """Validate a scenario dict against every module precondition; no compute."""
    if "version" not in data:
        raise ScenarioError("missing 'version'")
    if data["version"] != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported version {data['version']!r} (expected {SCENARIO_VERSION})")
    d = _merge(DEFAULTS, data, "")
    if not isinstance(d["seed"], int) or not 0 <= d["seed"] < 2**64:
        raise ScenarioError("seed must be an unsigned 64-bit integer")
    try:
        neck = NeckParams(**d["neck"])
        neck.check_smallness()
    except GeometryError as exc:
        raise ScenarioError(f"neck: {exc}") from exc
    res = d["chart"]["resolution"]
    if not isinstance(res, int) or res < 8:
        raise ScenarioError("chart.resolution must be an integer >= 8")
    catalog = d["catalog"]
    if not isinstance(catalog, dict) or not catalog:
        raise ScenarioError("catalog must be a non-empty object")
    for key, spec in catalog.items():
        kind = spec.get("kind") if isinstance(spec, dict) else None
        if kind not in BACKGROUND_KEYS:
            raise ScenarioError(f"catalog.{key}.kind must be one of {sorted(BACKGROUND_KEYS)}")
        unknown = sorted(set(spec) - BACKGROUND_KEYS[kind])
        if unknown:
            raise ScenarioError(f"unknown key {'catalog.' + key + '.' + unknown[0]!r}")
    assignment = d["chain"]["assignment"]
    if not isinstance(assignment, list) or len(assignment) < 2:
        raise ScenarioError("chain.assignment must list at least two catalog keys")
    missing = [k for k in assignment if k not in catalog]
    if missing:
        raise ScenarioError(f"chain.assignment uses unknown catalog key {missing[0]!r}")
    if d["chain"]["periodic"] and len(assignment) % 2:
        raise ScenarioError("a periodic chain needs an even number of blocks")
    _check_rho_spec(d["rho"], "rho")
    _check_rho_spec(d["lipschitz"]["rho_prime"], "lipschitz.rho_prime")
    if d["lemma"]["mode"] not in ("worst-case", "sampled"):
        raise ScenarioError("lemma.mode must be 'worst-case' or 'sampled'")
    chart = welding.standard_chart(res, neck, d["chart"]["size"])
    try:
        chart.validate(neck)
    except GeometryError as exc:
        raise ScenarioError(f"chart: {exc}") from exc
    if not 0 <= d["equiv"]["neck"] < len(assignment):
        raise ScenarioError("equiv.neck out of range")
    return Scenario(d)


def load_scenario(path):
    """Read a scenario file, or ``bundled:<name>`` for a packaged one."""
    path = str(path)
    if path.startswith("bundled:"):
        text = resources.files("asdweld").joinpath("scenarios", path[8:] + ".json").read_text()
    else:
        text = Path(path).read_text()
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"not valid JSON: {exc}") from exc
    return parse_scenario(data)


# ---------------------------------------------------------------------------
# building blocks from a scenario


def _streams(seed):
    """Independent generators for every random choice, all from one seed."""
    ss = np.random.SeedSequence(seed)
    names = ("rho", "rho_prime", "lemma", "equiv")
    return {n: np.random.default_rng(s) for n, s in zip(names, ss.spawn(len(names)))}


def make_rho(spec, W, rng):
    kind = spec["kind"]
    if kind == "identity":
        return welding.GluingParameter.identity(W)
    if kind == "random":
        return welding.GluingParameter.random(W, rng)
    if kind == "explicit":
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape != (W, 4):
            raise ScenarioError(f"explicit rho needs shape ({W}, 4), got {vals.shape}")
        try:
            return welding.GluingParameter(vals)
        except ValueError as exc:
            raise ScenarioError(f"rho: {exc}") from exc
    base = make_rho(spec["of"], W, rng)
    if len(spec["signs"]) != W:
        raise ScenarioError(f"twist needs {W} signs")
    try:
        return base.twist(spec["signs"])
    except ValueError as exc:
        raise ScenarioError(f"rho: {exc}") from exc


def _cache_key(chart, neck, spec):
    blob = json.dumps({"chart": [chart.size, chart.resolution, list(chart.marked_L), list(chart.marked_R)],
                       "neck": [neck.k, neck.N, neck.lam], "spec": spec}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def build_datum(chart, neck, key, spec, cache=None):
    """Gluing datum for one catalog entry, reusing a cached background when present."""
    if spec["kind"] == "flat":
        return welding.flat_datum(chart, key)
    path = None
    if cache:
        path = Path(cache) / f"bpst-{_cache_key(chart, neck, spec)}.npz"
        if path.exists():
            with np.load(path) as z:
                return welding.GluingDatum(chart, Connection(chart, z["A"]), True, key,
                                           float(z["floor"]), float(z["raw_floor"]))
    d = welding.bpst_datum(chart, neck, center=spec.get("center"), scale=spec.get("scale", 0.6), name=key,
                           clean_tol=spec.get("clean_tol", 1e-10))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, A=d.A, floor=d.floor, raw_floor=d.raw_floor)
    return d


def build_chain(scenario, cache=None):
    neck = scenario.neck
    chart = welding.standard_chart(scenario["chart"]["resolution"], neck, scenario["chart"]["size"])
    used = dict.fromkeys(scenario["chain"]["assignment"])
    catalog = {k: build_datum(chart, neck, k, scenario["catalog"][k], cache) for k in used}
    return welding.ChainConfig(catalog, tuple(scenario["chain"]["assignment"]), neck, scenario["chain"]["periodic"])


def solver_settings(scenario):
    return welding.SolverSettings(**scenario["solver"])


# ---------------------------------------------------------------------------
# subcommands


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=float)
        fh.write("\n")


def _weld(ctx):
    chain = ctx["chain"]()
    rho = make_rho(ctx["scenario"]["rho"], chain.W, ctx["rng"]["rho"])
    return chain, rho, welding.alternate(chain, rho, max_passes=ctx["max_passes"], target=ctx["target"],
                                         settings=solver_settings(ctx["scenario"]),
                                         floor_factor=ctx["scenario"]["passes"]["floor_factor"])


def _summary(welded, trace):
    comp = welding.compatibility_check(welded)
    return {"passes": len(trace.records) - 1, "converged": trace.converged, "reason": trace.reason,
            "delta": trace.deltas[-1], "delta0": trace.deltas[0], "floor": trace.records[0]["floor"],
            "compatibility": comp, "energy": welding.energy_ledger(welded)}


def cmd_weld(ctx, dump_fields=True):
    _, _, (welded, trace) = _weld(ctx)
    out = ctx["out"]
    trace.write(out / "trace.jsonl")
    _write_json(out / "summary.json", _summary(welded, trace))
    if dump_fields:
        np.savez(out / "perturbations.npz", **{f"a{i}": a for i, a in enumerate(welded.a)})
    ctx["print"](f"{trace.reason}: delta {trace.deltas[0]:.3e} -> {trace.deltas[-1]:.3e} "
                 f"in {len(trace.records) - 1} passes")
    return 0


def cmd_decay(ctx):
    return cmd_weld(ctx, dump_fields=False)


def cmd_lemma(ctx):
    cfg = ctx["scenario"]["lemma"]
    rep = moduli.recurrence_fuzz(ctx["rng"]["lemma"], cfg["draws"], cfg["mode"])
    top, ok = moduli.recurrence_verify(moduli.RecurrenceState(0.01, 1.0, 0.01, 1.0))
    factor, check = moduli.proof_checkpoint(0.01)
    rep.update(mode=cfg["mode"], reference_sup_alpha=top, reference_bound=0.1,
               checkpoint_factor=factor, checkpoint_ok=check)
    rep["status"] = "PASS" if rep["violations"] == 0 and ok and check else "FAIL"
    _write_json(ctx["out"] / "lemma.json", rep)
    ctx["print"](f"{rep['status']}: {rep['violations']} violations in {rep['draws']} draws, "
                 f"max alpha_n / (eps K) = {rep['max_ratio_to_epsK']:.4f} <= 10")
    return 0 if rep["status"] == "PASS" else 1


def cmd_lipschitz(ctx):
    chain = ctx["chain"]()
    s = ctx["scenario"]
    rho = make_rho(s["rho"], chain.W, ctx["rng"]["rho"])
    rho2 = make_rho(s["lipschitz"]["rho_prime"], chain.W, ctx["rng"]["rho_prime"])
    rep = moduli.lipschitz_probe(chain, rho, rho2, s["lipschitz"]["samples"], solver_settings(s),
                                 ctx["max_passes"], ctx["target"])
    _write_json(ctx["out"] / "lipschitz.json", rep)
    ctx["print"](f"K = {rep['K']:.4f}, ratio = {rep.get('ratio', float('nan')):.4e}"
                 + (" (partial)" if rep["partial"] else ""))
    return 1 if rep["partial"] else 0


def cmd_equiv(ctx):
    chain = ctx["chain"]()
    s = ctx["scenario"]
    cfg = s["equiv"]
    rng = ctx["rng"]["equiv"]
    rho = make_rho(s["rho"], chain.W, ctx["rng"]["rho"])
    settings = solver_settings(s)
    base, trace = welding.alternate(chain, rho, max_passes=ctx["max_passes"], target=ctx["target"],
                                    settings=settings)
    pairs = []
    for _ in range(cfg["patterns"]):
        signs = rng.choice([-1.0, 1.0], size=chain.W)
        rep = moduli.center_equivalence(chain, rho, signs, settings, ctx["max_passes"], ctx["target"], base=base)
        dist = moduli.gauge_distinguish(*rep["welded"])
        pairs.append({"signs": signs.tolist(), "identical": rep["identical"], "closes": rep["closes"],
                      "density_difference": rep["density_difference"], "distance": dist})
    fp_scale = float(np.max(np.abs(moduli.fingerprint(base))))
    threshold, floor = moduli.noise_threshold([p["distance"] for p in pairs], fp_scale)
    rot = alg.axis_rotation(np.asarray(cfg["axis"], dtype=float), cfg["angle"])
    twisted = rho.rho.copy()
    twisted[cfg["neck"]] = alg.qmul(twisted[cfg["neck"]], rot)
    other, _ = welding.alternate(chain, welding.GluingParameter(twisted), max_passes=ctx["max_passes"],
                                 target=ctx["target"], settings=settings)
    sep = moduli.gauge_distinguish(base, other)
    rep = {"centre_pairs": pairs, "noise_floor": floor, "threshold": threshold, "rotation_distance": sep,
           "max_centre_distance": max(p["distance"] for p in pairs) if pairs else 0.0,
           "separated": sep > threshold}
    _write_json(ctx["out"] / "equiv.json", rep)
    ctx["print"](f"centre pairs: max distance {rep['max_centre_distance']:.3e}; "
                 f"rotation: {sep:.3e} vs threshold {threshold:.3e}")
    return 0


def cmd_energy(ctx):
    _, _, (welded, trace) = _weld(ctx)
    led = welding.energy_ledger(welded)
    led["converged"] = trace.converged
    _write_json(ctx["out"] / "energy.json", led)
    ctx["print"](f"total energy {led['total']:.6g} over {led['nonflat_count']} non-flat blocks")
    return 0


def cmd_dump(ctx):
    _, _, (welded, _) = _weld(ctx)
    chain = welded.chain
    cfg = ctx["scenario"]["dump"]
    blocks = range(chain.W) if cfg["blocks"] is None else cfg["blocks"]
    for i in blocks:
        ch = chain.block(i).chart
        for what in cfg["fields"]:
            if what == "perturbation":
                vals, deg = welded.a[i], 1
            elif what == "sd_curvature":
                vals, deg = calc.sd_curvature(ch, welded.total(i)), "SD"
            else:
                raise ScenarioError(f"dump.fields: unknown field {what!r}")
            fio.dump_field(ctx["out"] / f"block{i}_{what}.csv", ch, vals, deg, extra={"block": i, "field": what})
    ctx["print"](f"dumped {len(list(blocks))} blocks")
    return 0


COMMANDS = {"weld": cmd_weld, "decay": cmd_decay, "lemma": cmd_lemma, "lipschitz": cmd_lipschitz,
            "equiv": cmd_equiv, "energy": cmd_energy, "dump": cmd_dump}


def build_parser():
    p = argparse.ArgumentParser(prog="asdweld", description="Weld anti-self-dual blocks along conformal necks.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--scenario", required=True, help="scenario JSON file or bundled:<name>")
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, default=None, help="compute threads")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--max-passes", type=int, default=None)
    p.add_argument("--target", type=float, default=None)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ScenarioError("--threads must be positive")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(subcommand, scenario, seed=None, threads=None, out=None, max_passes=None, target=None, echo=print):
    """Run one subcommand on a validated scenario; returns the exit status."""
    data = copy.deepcopy(scenario.data)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ScenarioError("seed must be an unsigned 64-bit integer")
        data["seed"] = seed
    scenario = Scenario(data)
    _set_threads(threads)
    out = Path(out or data["output"]["dir"] or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    cache = data["output"]["cache"]
    chain_box = {}

    def chain():
        if "c" not in chain_box:
            chain_box["c"] = build_chain(scenario, cache)
        return chain_box["c"]

    ctx = {"scenario": scenario, "rng": _streams(data["seed"]), "out": out, "chain": chain, "print": echo,
           "max_passes": max_passes if max_passes is not None else data["passes"]["max_passes"],
           "target": target if target is not None else data["passes"]["target"]}
    return COMMANDS[subcommand](ctx)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        return run(args.subcommand, scenario, args.seed, args.threads, args.out, args.max_passes, args.target)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"asdweld: invalid scenario: {exc}", file=sys.stderr)
        return 2
    except (welding.WeldingError, moduli.ModuliError) as exc:
        print(f"asdweld: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
