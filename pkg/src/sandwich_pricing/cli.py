"""Command-line front end: scenario files in, text summaries and CSV tables out.

Exit codes: 0 success / feasible / holds, 2 definitive negative (violation,
infeasibility), 1 usage or numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _lp
from .bounds import (BoundFamily, BoundsError, ComposedGoodDeal, Density, DensityBounds, GoodDeal,
                     MeasureFamilies, is_dynamic_ngd_measure)
from .extension import SandwichViolation, full_extend
from .ftap import NumericalError, build_measure, lp_feasibility, verify_representation
from .operators import PriceSystem, PricingError, check_axioms, check_sandwich
from .prob_space import FilteredSpace, SpaceError

COMMANDS = ("validate", "check-axioms", "check-sandwich", "extend", "find-measure", "bounds", "check-ngd", "report")
DEFAULT_OPTIONS = {"lambda": 0.5, "eps_pos": 1e-9, "tol": 1e-9, "seed": 0}
CSV_HEADER = ["s", "t", "claim_id", "quantity", "cell_id", "value"]

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class Scenario:
    space: FilteredSpace
    ps: PriceSystem
    bounds: BoundFamily | None
    options: dict
    raw: dict = field(repr=False, default_factory=dict)

    def pairs(self) -> list[tuple[int, int]]:
        req = self.options.get("pairs")
        if req:
            return [tuple(int(v) for v in p) for p in req]
        return [p for p in self.ps.grid_pairs if p[0] < p[1]]


# --------------------------------------------------------------------------- parsing

def _num_list(obj, path, n, errors):
    if not isinstance(obj, list) or len(obj) != n or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                              for v in obj):
        errors.append(f"{path}: expected a list of {n} numbers")
        return None
    return np.asarray(obj, dtype=float)


def _pair_key(key):
    if isinstance(key, str):
        txt = key.strip().strip("[]()")
        parts = [p for p in txt.replace(" ", "").split(",") if p]
        if len(parts) == 2 and all(p.lstrip("-").isdigit() for p in parts):
            return int(parts[0]), int(parts[1])
    return None


def _parse_bounds(cfg, space, flags, errors):
    if cfg is None:
        return None
    if not isinstance(cfg, dict) or "variant" not in cfg:
        errors.append("bounds: expected an object with a 'variant' tag")
        return None
    variant = cfg["variant"]
    n = space.n_atoms
    try:
        if variant == "density":
            if "terminal" in cfg:
                m = _num_list(cfg["terminal"].get("m"), "bounds.terminal.m", n, errors)
                M = _num_list(cfg["terminal"].get("M"), "bounds.terminal.M", n, errors)
                return None if m is None or M is None else DensityBounds.from_terminal(space, m, M)
            if "steps" in cfg:
                lo, hi = [], []
                for k, st in enumerate(cfg["steps"]):
                    lo.append(_num_list(st.get("m"), f"bounds.steps[{k}].m", n, errors))
                    hi.append(_num_list(st.get("M"), f"bounds.steps[{k}].M", n, errors))
                return None if any(v is None for v in lo + hi) else DensityBounds(space, lo, hi)
            if "pairs" in cfg:
                pairs = {}
                for k, st in enumerate(cfg["pairs"]):
                    m = _num_list(st.get("m"), f"bounds.pairs[{k}].m", n, errors)
                    M = _num_list(st.get("M"), f"bounds.pairs[{k}].M", n, errors)
                    pairs[(int(st["s"]), int(st["t"]))] = (m, M)
                return None if any(v is None for p in pairs.values() for v in p) else DensityBounds.from_pairs(space, pairs)
            errors.append("bounds: density bounds need 'terminal', 'steps' or 'pairs'")
            return None
        if variant == "measure_families":
            up = [_num_list(v, f"bounds.upper[{k}]", n, errors) for k, v in enumerate(cfg.get("upper", []))]
            lo_cfg = cfg.get("lower")
            lo = None if lo_cfg is None else [_num_list(v, f"bounds.lower[{k}]", n, errors)
                                               for k, v in enumerate(lo_cfg)]
            if any(v is None for v in up + (lo or [])):
                return None
            return MeasureFamilies(space, up, lo)
        if variant == "good_deal":
            pos = bool(cfg.get("positivity_constrained", True)) and not flags.get("drop_positivity")
            if "delta" in cfg:
                return GoodDeal(space, float(cfg["delta"]), positivity_constrained=pos)
            if "delta_0T" in cfg:
                d0 = float(cfg["delta_0T"])
                if d0 <= 0:
                    errors.append("bounds.delta_0T: delta must exceed 1 (delta_0T must be positive)")
                    return None
                return GoodDeal.from_horizon_delta(space, d0, positivity_constrained=pos)
            errors.append("bounds: good_deal needs 'delta' or 'delta_0T'")
            return None
        if variant == "composed_good_deal":
            return ComposedGoodDeal(space, cfg.get("step_deltas", []))
        errors.append(f"bounds.variant: unknown variant {variant!r}")
    except (BoundsError, SpaceError, KeyError, TypeError, ValueError) as exc:
        errors.append(f"bounds: {exc}")
    return None


def parse_scenario(path, flags: dict | None = None) -> Scenario:
    """Load and validate a scenario file; every problem found is reported at once."""
    flags = flags or {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioError([f"{path}: file not found"]) from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ScenarioError([f"{path}: not valid UTF-8 JSON ({exc})"]) from None
    return scenario_from_dict(raw, flags)


def scenario_from_dict(raw: dict, flags: dict | None = None) -> Scenario:
    flags = flags or {}
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario: expected a JSON object"])
    for key in ("space", "claims", "prices"):
        if key not in raw:
            errors.append(f"{key}: missing")
    sp = raw.get("space", {})
    space = None
    if isinstance(sp, dict):
        for key in ("atoms", "probs", "times", "partitions"):
            if key not in sp:
                errors.append(f"space.{key}: missing")
        if all(k in sp for k in ("atoms", "probs", "times", "partitions")):
            try:
                space = FilteredSpace(sp["atoms"], sp["probs"], sp["times"], sp["partitions"])
            except SpaceError as exc:
                errors += str(exc).split("; ")
            except (TypeError, ValueError) as exc:
                errors.append(f"space: {exc}")
    else:
        errors.append("space: expected an object")
    options = dict(DEFAULT_OPTIONS)
    opts = raw.get("options", {})
    if not isinstance(opts, dict):
        errors.append("options: expected an object")
    else:
        options.update(opts)
    if flags.get("lambda") is not None:
        options["lambda"] = flags["lambda"]
    if flags.get("seed") is not None:
        options["seed"] = flags["seed"]
    if not 0 <= float(options["lambda"]) <= 1:
        errors.append("options.lambda: must lie in [0, 1]")
    if space is None:
        raise ScenarioError(errors)
    n = space.n_atoms
    claims = {}
    for key, basis in (raw.get("claims") or {}).items():
        try:
            t = int(key)
        except ValueError:
            errors.append(f"claims.{key}: time key must be a grid index")
            continue
        if not 0 <= t <= space.K:
            errors.append(f"claims.{key}: grid index out of range")
            continue
        rows = [_num_list(v, f"claims.{key}[{j}]", n, errors) for j, v in enumerate(basis)]
        if all(r is not None for r in rows):
            claims[t] = rows
    prices = {}
    pr = raw.get("prices") or {}
    items = []
    if isinstance(pr, dict):
        items = [(_pair_key(k), k, v) for k, v in pr.items()]
    elif isinstance(pr, list):
        items = [((int(o["s"]), int(o["t"])) if isinstance(o, dict) and "s" in o and "t" in o else None,
                  f"[{i}]", o.get("images") if isinstance(o, dict) else None) for i, o in enumerate(pr)]
    for pair, label, imgs in items:
        if pair is None:
            errors.append(f"prices.{label}: key must name a grid pair 's,t'")
            continue
        s, t = pair
        if not (0 <= s <= t <= space.K):
            errors.append(f"prices.{label}: invalid grid pair ({s}, {t})")
            continue
        if t not in claims:
            errors.append(f"prices.{label}: no claims declared at index {t}")
            continue
        if not isinstance(imgs, list) or len(imgs) != len(claims[t]):
            errors.append(f"prices.{label}: expected {len(claims[t])} images")
            continue
        rows = [_num_list(v, f"prices.{label}[{j}]", n, errors) for j, v in enumerate(imgs)]
        if all(r is not None for r in rows):
            prices[pair] = rows
    bounds = _parse_bounds(raw.get("bounds"), space, flags, errors)
    ps = None
    if not errors:
        try:
            ps = PriceSystem(space, claims, prices)
        except PricingError as exc:
            errors += [f"prices: {e}" for e in str(exc).split("; ")]
    if errors:
        raise ScenarioError(errors)
    return Scenario(space, ps, bounds, options, raw)


# --------------------------------------------------------------------------- output

class Output:
    def __init__(self):
        self.rows: list[list] = []
        self.lines: list[str] = []
        self.details: dict = {}

    def row(self, s, t, claim_id, quantity, cell_id, value):
        self.rows.append([s, t, claim_id, quantity, cell_id, value])

    def say(self, line: str):
        self.lines.append(line)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in r])
        return buf.getvalue()

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _cell_rows(out, space, s, t, claim_id, quantity, values):
    for c in range(space.n_cells(s)):
        out.row(s, t, claim_id, quantity, space.cell_id(s, c), float(values[space.cell_members(s, c)[0]]))


def _need_bounds(sc):
    if sc.bounds is None:
        raise ScenarioError(["bounds: this command needs a bound family"])
    return sc.bounds


# --------------------------------------------------------------------------- commands

def cmd_validate(sc, out):
    out.say(f"valid: {sc.space.n_atoms} atoms, {sc.space.K + 1} dates, "
            f"{len(sc.pairs())} priced pairs, bounds={sc.bounds.variant if sc.bounds else 'none'}")
    return EXIT_OK


def cmd_check_axioms(sc, out):
    rep = check_axioms(sc.ps)
    for name, v in rep.verdicts.items():
        out.say(f"{name}: {v.status} (checked {v.checked}, worst {v.worst:.3e})")
        out.row("", "", "", name, "all", float(v.worst))
    out.details["axioms"] = {k: {"status": v.status, "checked": v.checked, "worst": v.worst,
                                 "witnesses": v.witnesses} for k, v in rep.verdicts.items()}
    return EXIT_OK if rep.passed else EXIT_NEGATIVE


def cmd_check_sandwich(sc, out):
    bounds = _need_bounds(sc)
    code = EXIT_OK
    out.details["sandwich"] = {}
    for s, t in sc.pairs():
        rep = check_sandwich(sc.ps, s, t, bounds, seed=int(sc.options["seed"]))
        out.say(f"sandwich ({s},{t}): {'holds' if rep.holds else 'FAILS'} "
                f"[{rep.method}] worst violation {rep.worst_violation!r}")
        out.row(s, t, "", "worst_violation", "all", float(rep.worst_violation))
        if not rep.holds:
            code = EXIT_NEGATIVE
            for name, v in zip("XYZ", rep.witness):
                out.say(f"  witness {name} = {v.values.tolist()}")
        out.details["sandwich"][f"{s},{t}"] = rep.to_dict()
    return code


def cmd_extend(sc, out):
    bounds = _need_bounds(sc)
    lam = float(sc.options["lambda"])
    out.details["extend"] = {}
    for s, t in sc.pairs():
        try:
            res = full_extend(sc.space, s, t, sc.ps.pair(s, t), bounds, lam)
        except SandwichViolation as exc:
            out.say(f"extend ({s},{t}): sandwich violation on cell {exc.cell}: {exc}")
            out.details["extend"][f"{s},{t}"] = {"violation": str(exc), "cell": exc.cell, "witness": exc.witness}
            return EXIT_NEGATIVE
        out.say(f"extend ({s},{t}): {len(res.steps)} steps, lambda={lam}")
        for st in res.steps:
            out.say(f"  {st.cell} <- 1[{st.claim}]: [{st.c!r}, {st.d!r}] y0={st.y0!r}"
                    + ("  (zero width)" if st.width <= 1e-12 else ""))
            out.row(s, t, f"1[{st.claim}]", "c", st.cell, st.c)
            out.row(s, t, f"1[{st.claim}]", "d", st.cell, st.d)
            out.row(s, t, f"1[{st.claim}]", "y0", st.cell, st.y0)
        out.details["extend"][f"{s},{t}"] = {"steps": [st.to_dict() for st in res.steps], "checks": res.checks}
    return EXIT_OK


def _find(sc, out):
    bounds = _need_bounds(sc)
    opts = sc.options
    cert = lp_feasibility(sc.ps, bounds, eps_pos=float(opts["eps_pos"]), tol=float(opts["tol"]))
    pm, failure = None, None
    try:
        pm = build_measure(sc.ps, bounds, lam=float(opts["lambda"]), eps_pos=float(opts["eps_pos"]),
                           seed=int(opts["seed"]))
    except SandwichViolation as exc:
        failure = exc
    return cert, pm, failure


def cmd_find_measure(sc, out):
    cert, pm, failure = _find(sc, out)
    space = sc.space
    K = space.K
    built = pm is not None
    agree = built == cert.feasible
    out.say(f"constructive: {'measure built' if built else 'failed'}"
            + (f" (pair {failure.pair}, cell {failure.cell}: {failure})" if failure else ""))
    out.say(f"lp oracle: {cert.status} ({cert.iterations} iterations)")
    out.say(f"agreement: {'yes' if agree else 'NO'}")
    out.details["find_measure"] = {"oracle": cert.to_dict(), "agree": agree}
    if built:
        out.details["find_measure"]["measure"] = pm.to_dict()
        for i, a in enumerate(space.atoms):
            out.row(0, K, "", "f", str(a), float(pm.f.f[i]))
        out.say(f"f = {pm.f.f.tolist()}")
        for w in pm.warnings + pm.notes:
            out.say(f"note: {w}")
    if cert.feasible:
        for i, a in enumerate(space.atoms):
            out.row(0, K, "", "f_oracle", str(a), float(cert.measure.f[i]))
    elif cert.farkas is not None:
        out.say(f"infeasibility witness ({cert.farkas['kind']}), value {cert.farkas['value']!r}")
        out.row(0, K, "", "farkas_value", "all", float(cert.farkas["value"]))
    if failure is not None and failure.witness:
        out.say(f"sandwich witness on cell {failure.cell}: X={failure.witness['X']} Y={failure.witness['Y']} "
                f"Z={failure.witness['Z']}")
    if not agree:
        out.say("error: constructive path and oracle disagree")
        return EXIT_ERROR
    return EXIT_OK if built else EXIT_NEGATIVE


def _bound_claims(sc):
    req = sc.options.get("claims")
    if req:
        return [(f"claim{k}", np.asarray(v, float)) for k, v in enumerate(req)]
    out = []
    for t, cs in sorted(sc.ps.claim_spaces.items()):
        for j, row in enumerate(cs.basis):
            if row.min() >= 0:
                out.append((f"L{t}[{j}]", row))
    return out


def cmd_bounds(sc, out):
    bounds = _need_bounds(sc)
    claims = _bound_claims(sc)
    for s, t in sc.pairs():
        for cid, X in claims:
            if sc.space.level_of(X) > t:
                continue
            lo, hi = bounds.eval_m(s, t, X), bounds.eval_M(s, t, X)
            _cell_rows(out, sc.space, s, t, cid, "m", lo)
            _cell_rows(out, sc.space, s, t, cid, "M", hi)
            out.say(f"({s},{t}) {cid}: m={float(lo[0])!r} M={float(hi[0])!r}" if sc.space.n_cells(s) == 1 else
                    f"({s},{t}) {cid}: m={lo.tolist()} M={hi.tolist()}")
    return EXIT_OK


def _delta_table(bounds):
    if isinstance(bounds, GoodDeal):
        return bounds.table
    if isinstance(bounds, ComposedGoodDeal):
        return bounds.delta_table()
    return None


def cmd_check_ngd(sc, out):
    bounds = _need_bounds(sc)
    table = _delta_table(bounds)
    if table is None:
        raise ScenarioError(["bounds: check-ngd needs good-deal bounds"])
    if "density" in sc.options:
        dens = Density(sc.space, sc.options["density"])
    else:
        _, pm, failure = _find(sc, out)
        if pm is None:
            out.say(f"no pricing measure: {failure}")
            return EXIT_NEGATIVE
        dens = pm.f
    rep = is_dynamic_ngd_measure(dens, table, sc.space)
    for e in rep.entries:
        out.row(e["s"], e["t"], "", "ngd_excess", "all", float(e["excess"]))
    out.say(f"dynamic no-good-deal measure: {'yes' if rep.passes else 'NO'} (static excess {rep.static_excess!r})")
    return EXIT_OK if rep.passes else EXIT_NEGATIVE


def cmd_report(sc, out):
    codes = [cmd_validate(sc, out), cmd_check_axioms(sc, out)]
    if sc.bounds is not None:
        codes += [cmd_check_sandwich(sc, out), cmd_find_measure(sc, out), cmd_bounds(sc, out)]
        if _delta_table(sc.bounds) is not None:
            codes.append(cmd_check_ngd(sc, out))
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_NEGATIVE if EXIT_NEGATIVE in codes else EXIT_OK


HANDLERS = {"validate": cmd_validate, "check-axioms": cmd_check_axioms, "check-sandwich": cmd_check_sandwich,
            "extend": cmd_extend, "find-measure": cmd_find_measure, "bounds": cmd_bounds,
            "check-ngd": cmd_check_ngd, "report": cmd_report}


def run_command(cmd: str, sc: Scenario) -> tuple[int, Output]:
    out = Output()
    try:
        code = HANDLERS[cmd](sc, out)
    except ScenarioError as exc:
        out.say("error: " + "; ".join(exc.errors))
        code = EXIT_ERROR
    except (NumericalError, _lp.LPError, PricingError, BoundsError) as exc:
        out.say(f"error: {exc}")
        code = EXIT_ERROR
    return code, out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sandwich-pricing", description="Sandwich-bounded price operators on finite filtrations.")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="interior selection in [c, d]")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="directory for CSV/text/JSON artifacts")
    p.add_argument("--csv", action="store_true", help="print the CSV table instead of the text summary")
    p.add_argument("--drop-positivity", action="store_true", help="good-deal bounds without the positivity constraint")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {"lambda": args.lam, "seed": args.seed, "drop_positivity": args.drop_positivity}
    try:
        sc = parse_scenario(args.scenario, flags)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    code, out = run_command(args.command, sc)
    sys.stdout.write(out.csv_text() if args.csv else out.text())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        stem = args.command.replace("-", "_")
        (args.out / f"{stem}.csv").write_text(out.csv_text(), encoding="utf-8")
        (args.out / f"{stem}.txt").write_text(out.text(), encoding="utf-8")
        (args.out / f"{stem}.json").write_text(json.dumps(out.details, indent=2, sort_keys=True, default=_jsonable),
                                               encoding="utf-8")
    return code


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    return str(obj)


if __name__ == "__main__":
    raise SystemExit(main())
