"""Command-line driver: analyze a field, sweep the drift rate, reduce a family.

Every command reads one JSON run configuration::

    {
      "domain": {"type": "disk", "center": [0, 0], "radius": 1},
      "field": {"builtin": "corollary", "alpha": 0.5},   # or {"b1": "...", "b2": "..."}
      "c": "x1^2",
      "A": [25, 50, 100, 200],
      "n": 257,
      "scheme": "exponential",
      "bc": "neumann",
      "tol": 1e-8,
      "gap_tol": 0.1,
      "gap_relative": false
    }

Optional keys: ``predicted`` (skip the dynamics and use this limit),
``degenerate`` (drift-free regions with case tags), ``stations``,
``analysis`` (phase-plane search options) and ``out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (Analysis, AssembleOptions, LimitComponent, UnsupportedTopologyError,
                       assemble_components)
from .expr import ExprError
from .fields import PlanarField, ScalarField, builtin_field
from .geometry import (Domain, GeometryError, Sublevel, boundary_samples, build_grid,
                       domain_from_json, domain_to_json)
from .limits import (AllInfiniteError, PredictedLimit, coarea_weights, constrained_rayleigh_2d,
                     degenerate_value, family_rayleigh, predicted_limit, region_bc)
from .pde import BoundarySpec, SCHEMES, WeightError, principal_eigenvalue
from .sparse import SparseError

EXIT_OK, EXIT_FAIL, EXIT_TOPOLOGY, EXIT_CONFIG = 0, 2, 3, 4
SWEEP_HEADER = ["A", "lambda", "residual", "iters", "gap"]
COROLLARY_DOMAIN = {"type": "sublevel", "H": "x2^2/2 + x1^4/4 - x1^2/2", "level": 1.0,
                    "lo": [-1.9, -1.7], "hi": [1.9, 1.7]}
UNIT_DISK = {"type": "disk", "center": [0.0, 0.0], "radius": 1.0}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# configuration
# --------------------------------------------------------------------------- #

@dataclass
class RunConfig:
    domain: dict
    field: dict
    c: str
    A: list[float]
    n: int = 257
    scheme: str = "exponential"
    bc: object = "neumann"
    tol: float = 1e-8
    gap_tol: float = 0.1
    gap_relative: bool = False
    predicted: float | None = None
    degenerate: list = field(default_factory=list)
    stations: int = 128
    analysis: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        a = self.A
        if not a or any(not math.isfinite(x) or x <= 0 for x in a):
            raise ConfigError("A list must be non-empty and positive")
        if any(y <= x for x, y in zip(a, a[1:])):
            raise ConfigError("A list must be strictly increasing")
        if not (16 <= self.n <= 2048):
            raise ConfigError("grid size n must lie in [16, 2048]")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if not (0 < self.tol < 1):
            raise ConfigError("tol must lie in (0, 1)")
        if self.gap_tol < 0:
            raise ConfigError("gap_tol must be non-negative")
        for reg in self.degenerate:
            if reg.get("case") not in ("N", "D", "DN"):
                raise ConfigError("each degenerate region needs case N, D or DN")
            if "region" not in reg:
                raise ConfigError("each degenerate region needs a region")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        for key in ("field", "c", "A"):
            if key not in raw:
                raise ConfigError(f"missing configuration key {key!r}")
        raw = dict(raw)
        raw.setdefault("domain", _default_domain(raw["field"]))
        try:
            raw["A"] = [float(x) for x in raw["A"]]
            raw["n"] = int(raw.get("n", 257))
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read configuration: {err}") from None
        return cls.from_dict(raw)

    # derived objects; all raise ConfigError on bad input
    def build_domain(self) -> Domain:
        try:
            return domain_from_json(self.domain)
        except (GeometryError, ExprError, TypeError, ValueError) as err:
            raise ConfigError(f"bad domain: {err}") from None

    def build_field(self) -> PlanarField:
        spec = self.field
        try:
            if "builtin" in spec:
                return builtin_field(spec["builtin"], spec.get("alpha"))
            return PlanarField.from_str(spec["b1"], spec["b2"], spec.get("name", ""))
        except (KeyError, ExprError, TypeError, ValueError) as err:
            raise ConfigError(f"bad field: {err}") from None

    def build_c(self) -> ScalarField:
        try:
            return ScalarField.from_str(str(self.c))
        except ExprError as err:
            raise ConfigError(f"bad potential c: {err}") from None

    def build_bc(self, d: Domain) -> BoundarySpec:
        bc = self.bc
        if isinstance(bc, str):
            bc = {"kind": bc}
        kind = bc.get("kind")
        if kind == "neumann":
            return BoundarySpec.neumann()
        if kind == "dirichlet":
            return BoundarySpec.dirichlet()
        if kind == "mixed":
            try:
                return region_bc(d, "DN", [tuple(s) for s in bc["sectors"]])
            except (KeyError, TypeError, ValueError) as err:
                raise ConfigError(f"bad mixed boundary: {err}") from None
        raise ConfigError(f"unknown boundary condition {kind!r}")

    def build_regions(self) -> list[dict]:
        out = []
        for reg in self.degenerate:
            try:
                region = domain_from_json(reg["region"])
            except (GeometryError, ExprError, TypeError, ValueError) as err:
                raise ConfigError(f"bad degenerate region: {err}") from None
            out.append({"region": region, "case": reg["case"],
                        "sectors": [tuple(s) for s in reg.get("sectors", [])]})
        return out

    def assemble_options(self) -> AssembleOptions:
        try:
            opts = AssembleOptions(**self.analysis)
        except TypeError as err:
            raise ConfigError(f"bad analysis options: {err}") from None
        opts.degenerate = self.build_regions()
        return opts


def _default_domain(spec) -> dict:
    if isinstance(spec, dict) and spec.get("builtin") == "corollary":
        return dict(COROLLARY_DOMAIN)
    return dict(UNIT_DISK)


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _predict(cfg: RunConfig, out: Path | None) -> tuple[PredictedLimit, Analysis | None]:
    """Predicted limit from the dynamics (or from the configured override)."""
    b, c, d = cfg.build_field(), cfg.build_c(), cfg.build_domain()
    if cfg.predicted is not None:
        pred = PredictedLimit(float(cfg.predicted), "FixedPointValue" if math.isfinite(
            cfg.predicted) else "Unstable", {"source": "configuration"})
        if out is not None:
            _write_json(out / "components.json", {
                "field": b.to_json(), "c": str(cfg.c), "domain": domain_to_json(d),
                "components": [], "predicted": pred.to_json()})
        return pred, None
    an = assemble_components(b, d, cfg.assemble_options())
    try:
        pred = predicted_limit(an.components, c, b, stations=cfg.stations, n=cfg.n)
    except AllInfiniteError:
        pred = PredictedLimit(math.inf, "Unstable", {"reason": "no stable component"})
    if out is not None:
        _write_json(out / "components.json", {
            "field": b.to_json(), "c": str(cfg.c), "domain": domain_to_json(d),
            "inflow": an.inflow.to_json(), "warnings": an.warnings,
            "components": [k.to_json() for k in an.components],
            "predicted": pred.to_json(),
        })
        (out / "phase.svg").write_text(phase_svg(d, an.components))
    return pred, an


def cmd_analyze(cfg: RunConfig, out: Path) -> int:
    pred, an = _predict(cfg, out)
    print(f"predicted limit {pred.value:.10g} ({pred.case})")
    if an is not None:
        for k in an.components:
            print(f"  {k.kind:<18} {k.stability}")
    return EXIT_OK if pred.finite else EXIT_FAIL


def _sweep_row(cfg_dict: dict, A: float) -> dict:
    """One eigenvalue solve; errors are recorded instead of raised."""
    cfg = RunConfig.from_dict(cfg_dict)
    d = cfg.build_domain()
    grid = build_grid(d, cfg.n)
    try:
        res = principal_eigenvalue(grid, cfg.build_field(), A, cfg.build_c(), cfg.build_bc(d),
                                   scheme=cfg.scheme, tol=cfg.tol)
        return {"A": A, "lambda": float(res.lam), "residual": float(res.residual),
                "iters": int(res.iterations), "error": ""}
    except (SparseError, ArithmeticError, ValueError) as err:
        return {"A": A, "lambda": math.nan, "residual": math.nan, "iters": 0,
                "error": f"{type(err).__name__}: {err}"}


def run_sweep(cfg: RunConfig, jobs: int = 1) -> list[dict]:
    raw = _config_dict(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, [raw] * len(cfg.A), cfg.A))
    else:
        rows = [_sweep_row(raw, A) for A in cfg.A]
    return sorted(rows, key=lambda r: r["A"])


def _config_dict(cfg: RunConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def gap_of(lam: float, predicted: float, relative: bool) -> float:
    g = abs(lam - predicted)
    return g / max(abs(predicted), 1e-300) if relative else g


def verdicts(rows: list[dict], gap_tol: float, slack: float = 1e-9) -> dict:
    """Pass/fail rules computed from the table alone."""
    gaps = [r["gap"] for r in rows]
    ok = [g for g in gaps if math.isfinite(g)]
    failed = len(gaps) - len(ok)
    tail = gaps[len(gaps) // 2:] if len(gaps) > 1 else gaps
    mono = all(math.isfinite(x) and math.isfinite(y) and y <= x + slack
               for x, y in zip(tail, tail[1:]))
    final = gaps[-1] if gaps else math.nan
    final_ok = math.isfinite(final) and final <= gap_tol
    rows_ok = failed <= 0.25 * len(gaps)
    return {
        "gaps_nonincreasing_last_half": mono,
        "final_gap_within_tol": final_ok,
        "failed_rows": failed,
        "failed_rows_within_limit": rows_ok,
        "final_gap": final if math.isfinite(final) else "nan",
        "gap_tol": gap_tol,
        "pass": bool(mono and final_ok and rows_ok),
    }


def write_sweep_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([repr(float(r["A"])), repr(float(r["lambda"])), repr(float(r["residual"])),
                        int(r["iters"]), repr(float(r["gap"]))])


def read_sweep_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != SWEEP_HEADER:
            raise ConfigError(f"unexpected sweep.csv header {header}")
        return [{"A": float(a), "lambda": float(l), "residual": float(r), "iters": int(i),
                 "gap": float(g)} for a, l, r, i, g in rd]


def _finish_sweep(cfg: RunConfig, pred: PredictedLimit, rows: list[dict], out: Path,
                  extra: dict | None = None) -> int:
    for r in rows:
        r["gap"] = gap_of(r["lambda"], pred.value, cfg.gap_relative)
    write_sweep_csv(out / "sweep.csv", rows)
    v = verdicts(rows, cfg.gap_tol)
    report = {
        "predicted": pred.to_json(),
        "gap_relative": cfg.gap_relative,
        "table": [{k: (r[k] if not isinstance(r[k], float) or math.isfinite(r[k]) else str(r[k]))
                   for k in ("A", "lambda", "residual", "iters", "gap", "error")} for r in rows],
        "verdicts": v,
    }
    if extra:
        report.update(extra)
    _write_json(out / "report.json", report)
    for r in rows:
        note = f"  [{r['error']}]" if r.get("error") else ""
        print(f"A={r['A']:<8g} lambda={r['lambda']:.8g} gap={r['gap']:.3g}{note}")
    print("PASS" if v["pass"] else "FAIL", f"final gap {v['final_gap']} (tol {cfg.gap_tol:g})")
    return EXIT_OK if v["pass"] else EXIT_FAIL


def cmd_sweep(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    pred, _ = _predict(cfg, out)
    rows = run_sweep(cfg, jobs)
    return _finish_sweep(cfg, pred, rows, out)


def cmd_reduce(cfg: RunConfig, out: Path) -> int:
    b, c, d = cfg.build_field(), cfg.build_c(), cfg.build_domain()
    an = assemble_components(b, d, cfg.assemble_options())
    fams = [k.data for k in an.components if k.kind == "ClosedOrbitFamily"]
    if not fams:
        raise UnsupportedTopologyError("no closed-orbit family to reduce")
    fam = fams[0]
    w = coarea_weights(c, b, fam, cfg.stations)
    with open(out / "weights.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["ell", "kappa", "mu", "gamma"])
        for row in w.rows():
            wr.writerow([repr(float(x)) for x in row])
    res = family_rayleigh(c, b, fam, cfg.stations, weights=w)
    report = {"family": fam.to_json(), "reduced": res.to_json()}
    code = EXIT_OK
    if cfg.n <= 129:
        direct = constrained_rayleigh_2d(c, b, fam, build_grid(d, cfg.n))
        rel = abs(direct - res.value) / max(abs(res.value), 1e-12)
        agree = rel <= 0.01 or abs(direct - res.value) <= 1e-8
        report["direct_2d"] = {"value": direct, "relative_difference": rel, "agree": agree}
        code = EXIT_OK if agree else EXIT_FAIL
    _write_json(out / "reduce.json", report)
    print(f"reduced eigenvalue {res.value:.10g}")
    if "direct_2d" in report:
        print(f"2D constrained minimum {report['direct_2d']['value']:.10g}")
    return code


def cmd_degenerate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    regions = cfg.build_regions()
    if not regions:
        raise ConfigError("degenerate command needs declared regions")
    c = cfg.build_c()
    values = [degenerate_value(c, r["region"], r["case"], r["sectors"], n=cfg.n) for r in regions]
    best = min(values, key=lambda p: p.value)
    if cfg.predicted is not None:
        best = PredictedLimit(float(cfg.predicted), best.case, {"source": "configuration"})
    _write_json(out / "components.json", {
        "regions": [{"region": domain_to_json(r["region"]), "case": r["case"],
                     "sectors": [list(s) for s in r["sectors"]], "value": p.to_json()}
                    for r, p in zip(regions, values)],
        "predicted": best.to_json(),
    })
    rows = run_sweep(cfg, jobs)
    return _finish_sweep(cfg, best, rows, out)


def cmd_report(cfg: RunConfig, out: Path) -> int:
    """Recompute verdicts from an existing sweep table."""
    rows = read_sweep_csv(out / "sweep.csv")
    v = verdicts(rows, cfg.gap_tol)
    path = out / "report.json"
    report = json.loads(path.read_text()) if path.exists() else {}
    report["verdicts"] = v
    _write_json(path, report)
    print("PASS" if v["pass"] else "FAIL", f"final gap {v['final_gap']} (tol {cfg.gap_tol:g})")
    return EXIT_OK if v["pass"] else EXIT_FAIL


# --------------------------------------------------------------------------- #
# phase portrait
# --------------------------------------------------------------------------- #

KIND_COLORS = {
    "StableNode": "#1b7837", "StableSpiral": "#1b7837", "UnstableNode": "#b2182b",
    "UnstableSpiral": "#b2182b", "Saddle": "#2166ac", "Center": "#762a83", "Degenerate": "#e08214",
}


def phase_svg(d: Domain, components: list[LimitComponent], size: int = 800) -> str:
    """Self-contained 800x800 SVG of the domain boundary and limit-set components."""
    (x0, y0), (x1, y1) = d.bounds()
    span = max(x1 - x0, y1 - y0) * 1.05
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    def tr(p):
        return (size * (0.5 + (p[0] - cx) / span), size * (0.5 - (p[1] - cy) / span))

    def poly(pts, color, width=1.5, closed=True):
        xy = [tr(p) for p in pts]
        if closed:
            xy.append(xy[0])
        s = " ".join(f"{u:.2f},{v:.2f}" for u, v in xy)
        return f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="{width}"/>'

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    bpts, _ = boundary_samples(d, 400)
    if isinstance(d, Sublevel):
        order = np.argsort(np.arctan2(bpts[:, 1] - cy, bpts[:, 0] - cx))
        bpts = bpts[order]
    parts.append(poly(bpts, "black", 2.0))
    for k in components:
        x = k.data
        if k.kind == "Cycle":
            parts.append(poly(x.samples[::4], "#1b7837" if k.stability == "Stable" else "#b2182b"))
        elif k.kind in ("HomoclinicUnion", "SingleHomoclinic"):
            for lp in x.loops:
                parts.append(poly(lp[::4], "#2166ac"))
        elif k.kind == "ClosedOrbitFamily":
            for frac in (0.25, 0.5, 0.75, 0.98):
                ell = x.l0 + frac * (x.l1 - x.l0)
                try:
                    parts.append(poly(x.orbit(ell)[1][::4], "#762a83", 1.0))
                except Exception:  # a failed leaf only drops it from the picture
                    continue
        elif k.kind == "DegenerateRegion":
            rp, _ = boundary_samples(x["region"], 200)
            parts.append(poly(rp, "#e08214", 1.5))
    for k in components:
        if k.kind == "FixedPt" or k.kind in ("HomoclinicUnion", "SingleHomoclinic", "ClosedOrbitFamily"):
            loc = {"FixedPt": lambda z: z.location, "ClosedOrbitFamily": lambda z: z.origin}.get(
                k.kind, lambda z: z.saddle)(k.data)
            kind = k.data.kind if k.kind == "FixedPt" else (
                "Center" if k.kind == "ClosedOrbitFamily" else "Saddle")
            u, v = tr(loc)
            parts.append(f'<circle cx="{u:.2f}" cy="{v:.2f}" r="6" '
                         f'fill="{KIND_COLORS.get(kind, "gray")}"><title>{kind}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #

COMMANDS = ("analyze", "sweep", "reduce", "degenerate", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drifteig",
                                description="Large-drift limits of principal eigenvalues.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (default: config 'out' or '.')")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--tol", type=float, default=None, help="override the final-gap tolerance")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.tol is not None:
            if args.tol < 0:
                raise ConfigError("--tol must be non-negative")
            cfg.gap_tol = args.tol
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out = Path(args.out or cfg.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        # validate every derived object before any long computation
        d = cfg.build_domain()
        cfg.build_field(), cfg.build_c(), cfg.build_bc(d), cfg.build_regions()
        if args.command == "analyze":
            return cmd_analyze(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.jobs)
        if args.command == "reduce":
            return cmd_reduce(cfg, out)
        if args.command == "degenerate":
            return cmd_degenerate(cfg, out, args.jobs)
        return cmd_report(cfg, out)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedTopologyError as err:
        print(f"unsupported topology: {err}", file=sys.stderr)
        return EXIT_TOPOLOGY
    except WeightError as err:
        print(f"weight singularity: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
