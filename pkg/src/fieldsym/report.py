"""Analysis reports: building sections, rendering text, pinned-format JSON."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from . import expr as E
from .constraints import ConstraintSet
from .dsl import ModelDef
from .goldstone import (SymmetryNotVerified, VacuumConfig, generalized_residual, goldstone_count)
from .symmetry import BROKEN, verify

SCHEMA = "fieldsym-report/1"
FLOAT_FORMAT = ".17g"
TEXT_FLOAT_FORMAT = ".12g"


@dataclass
class Report:
    model: str
    command: str
    sections: dict = field(default_factory=dict)   # title -> plain data
    exit_status: int = 0
    version: str = __version__

    def add(self, title: str, data: dict, ok: bool = True) -> None:
        self.sections[title] = data
        if not ok and self.exit_status == 0:
            self.exit_status = 1

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "tool_version": self.version, "model": self.model,
                "command": self.command, "sections": self.sections,
                "exit_status": self.exit_status}

    @classmethod
    def from_dict(cls, d: dict) -> Report:
        if d.get("schema") != SCHEMA:
            raise ValueError(f"not a {SCHEMA} document")
        return cls(d["model"], d["command"], d["sections"], d["exit_status"], d["tool_version"])


# ---------------------------------------------------------------------------
# plain data


def plain(x):
    """Turn analysis values into JSON-ready data."""
    if isinstance(x, dict):
        return {str(k): plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return 0.0 if x == 0 else x
    if isinstance(x, E.Expr):
        return E.to_text(x)
    if x is None or isinstance(x, str):
        return x
    return str(x)


def _float_text(x: float, fmt: str) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    return format(x, fmt)


def _dump(x, out: list) -> None:
    if isinstance(x, dict):
        out.append("{")
        for n, k in enumerate(sorted(x)):
            if n:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _dump(x[k], out)
        out.append("}")
    elif isinstance(x, list):
        out.append("[")
        for n, v in enumerate(x):
            if n:
                out.append(",")
            _dump(v, out)
        out.append("]")
    elif isinstance(x, bool) or x is None:
        out.append(json.dumps(x))
    elif isinstance(x, int):
        out.append(str(x))
    elif isinstance(x, float):
        out.append(_float_text(x, FLOAT_FORMAT))
    else:
        out.append(json.dumps(x))


def to_json(r: Report) -> str:
    out: list = []
    _dump(plain(r.to_dict()), out)
    return "".join(out) + "\n"


def _text_value(x) -> str:
    if isinstance(x, float):
        return _float_text(x, TEXT_FLOAT_FORMAT).strip('"')
    if isinstance(x, bool):
        return "yes" if x else "no"
    if x is None:
        return "-"
    if isinstance(x, list):
        return "[" + ", ".join(_text_value(v) for v in x) + "]"
    if isinstance(x, dict):
        return "{" + ", ".join(f"{k}: {_text_value(v)}" for k, v in x.items()) + "}"
    return str(x)


def _text_block(data: dict, indent: str, lines: list) -> None:
    for k, v in data.items():
        if isinstance(v, dict) and v and any(isinstance(w, (dict, list)) for w in v.values()):
            lines.append(f"{indent}{k}:")
            _text_block(v, indent + "  ", lines)
        elif isinstance(v, list) and v and all(isinstance(w, dict) for w in v):
            lines.append(f"{indent}{k}:")
            for w in v:
                lines.append(f"{indent}  -")
                _text_block(w, indent + "    ", lines)
        else:
            lines.append(f"{indent}{k}: {_text_value(v)}")


def to_text(r: Report) -> str:
    lines = [f"fieldsym {r.version}  model {r.model}  command {r.command}"]
    for title, data in r.sections.items():
        lines.append("")
        lines.append(title.upper())
        _text_block(plain(data), "  ", lines)
    lines.append("")
    lines.append(f"exit status {r.exit_status}")
    return "\n".join(lines) + "\n"


def emit_report(r: Report, fmt: str = "text") -> bytes:
    if fmt == "json":
        return to_json(r).encode("utf-8")
    if fmt == "text":
        return to_text(r).encode("utf-8")
    raise ValueError(f"unknown format {fmt!r}")


def load_report(data: bytes | str) -> Report:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return Report.from_dict(json.loads(data))


# ---------------------------------------------------------------------------
# sections


def _constraints(cs: ConstraintSet) -> list:
    return [{"label": c.label, "verdict": c.verdict, "expression": c.text(), "note": c.note}
            for c in cs]


def verify_section(m: ModelDef, ts: list) -> tuple:
    rows = []
    ok = True
    for t in ts:
        v = verify(m, t)
        row = {"transformation": t.name, "kind": t.kind, "status": v.status,
               "residual": E.to_text(v.residual)}
        if v.current is not None:
            row["current"] = E.to_text(v.current)
            row["current_index"] = v.current_index.name
        if v.coefficients:
            row["coefficients"] = {k: E.to_text(c) for k, c in v.coefficients.items()}
        ok &= v.status != BROKEN
        rows.append(row)
    return {"transformations": rows}, ok


def goldstone_sections(m: ModelDef, v: VacuumConfig, ts: list, override: bool,
                       rel_tol: float) -> list:
    """[(title, data, ok), ...] for the mass matrix and the Goldstone accounting."""
    try:
        rep = goldstone_count(m, v, ts, override=override, rel_tol=rel_tol)
    except SymmetryNotVerified as exc:
        return [("goldstone accounting", {"error": str(exc),
                                          "hint": "use --override to count it anyway"}, False)]
    mass = {"components": rep.components, "matrix": rep.matrix, "eigenvalues": rep.eigenvalues,
            "zero_tolerance": rep.tol, "zero_eigenvalues": rep.zero_count,
            "extremum": rep.extremum.is_extremum, "gradient": rep.extremum.gradient}
    acct = {
        "goldstone_count": rep.goldstone_count,
        "zero_eigenvalues": rep.zero_count,
        "directions": [list(d) for d in rep.goldstone_directions],
        "shared_directions": rep.shared_directions,
        "deltas": [{"transformation": d.transformation, "delta": d.vector,
                    "mass_times_delta": d.mass_times_delta, "annihilated": d.annihilated,
                    "direction": d.direction} for d in rep.deltas],
        "warnings": rep.warnings,
    }
    ok = rep.extremum.is_extremum and all(d.annihilated for d in rep.deltas) \
        and rep.zero_count >= rep.n_broken
    residuals = {}
    for t in ts:
        xd = generalized_residual(m, t)
        residuals[t.name] = {(" ".join(f"x{k}" for k in key) or "1"):
                             {n: E.to_text(e) for n, e in per.items()}
                             for key, per in sorted(xd.parts.items())}
    acct["generalized_residual"] = residuals
    return [("mass matrix", mass, rep.extremum.is_extremum),
            ("goldstone accounting", acct, ok)]


def higgs_sections(m: ModelDef, v: VacuumConfig | None, tol: float) -> list:
    from .gauge_higgs import (derive_constraints, eliminate_would_be_goldstone, gauge_mass,
                              residual_identities)
    from .symmetry import verify_local

    out = []
    gc = derive_constraints(m)
    local = [t for t in m.transformations if t.kind == "local"]
    vl = verify_local(m, local[0])
    out.append(("gauge invariance", {
        "transformation": local[0].name, "status": vl.status,
        "coefficients": {k: E.to_text(c) for k, c in vl.coefficients.items()}}, vl.ok))
    data = {"constraints": _constraints(gc.constraints),
            "theta_route": _constraints(gc.theta_route),
            "route_of": gc.agreement,
            "identities": _constraints(residual_identities(m)),
            "kinetic_coefficient": gc.kinetic, "charge": gc.charge_note,
            "warnings": gc.warnings}
    if gc.rescaled is not None:
        data["rescaled"] = _constraints(gc.rescaled)
    ok = gc.constraints.ok and gc.theta_route.ok
    out.append(("higgs constraints", data, ok))
    pr = eliminate_would_be_goldstone(m)
    out.append(("would-be goldstone", {
        "shift": pr.shift, "shift_sign": pr.shift_sign,
        "dL_dxi": E.to_text(pr.residual_xi), "dL_d_dxi": E.to_text(pr.residual_dxi),
        "eliminated": pr.goldstone_eliminated, "theta_invariant": pr.theta_invariant,
        "rho_kinetic": E.to_text(pr.rho_kinetic),
        "vector_mass": E.to_text(pr.vector_mass) if pr.vector_mass is not None else None},
        pr.goldstone_eliminated))
    if v is not None:
        gm = gauge_mass(m, v, tol)
        out.append(("gauge mass", {
            "mass_squared": gm.mass_squared, "gauge_mass": gm.mass, "tensor": gm.tensor,
            "direct": E.to_text(gm.symbolic_direct),
            "via_constraints": E.to_text(gm.symbolic_via_constraints),
            "routes_agree": gm.routes_agree, "note": gm.note},
            gm.routes_agree and not math.isnan(gm.mass)))
    return out


def conformal_sections(m: ModelDef, v: VacuumConfig | None, override: bool,
                       dilaton: str | None, scale: str) -> list:
    from .conformal import analyze, build_scenario, goldstone_multiplicity

    scn = build_scenario(m, dilaton, scale)
    rep = analyze(scn, v, override=override)
    dil = rep.residuals["dilation"].part(())
    data = {
        "dilaton": scn.dilaton,
        "dilation_constraint": {n: E.to_text(e) for n, e in dil.items()},
        "degeneracy": {k: (str(r) if r is not None else None) for k, r in rep.degeneracy.items()},
        "stray_parts": {k: [list(p) for p in s] for k, s in rep.stray_parts.items()},
        "constant_parts_zero": rep.constant_parts_zero,
        "solution": rep.solution.text(),
        "extra_constraints": _constraints(rep.extra),
        "notes": rep.notes,
    }
    ok = (rep.degenerate and not any(rep.stray_parts.values())
          and all(rep.constant_parts_zero.values()) and rep.extra.ok
          and rep.solution.status in ("solved", "unconstrained"))
    out = [("conformal constraints", data, ok)]
    if v is not None:
        g = rep.goldstone
        broken, rank, extra = goldstone_multiplicity(scn, v)
        acct = {"broken": broken, "goldstone": rank, "extra_constraints": extra,
                "dilation_value": rep.dilation_value,
                "directions": [list(d) for d in g.goldstone_directions],
                "shared_directions": g.shared_directions,
                "zero_eigenvalues": g.zero_count, "eigenvalues": g.eigenvalues,
                "warnings": g.warnings}
        out.append(("goldstone accounting", acct, g.extremum.is_extremum))
    return out


def oracle_section(m: ModelDef, v: VacuumConfig, ts: list, sites: int, tol: float,
                   require_solution: bool) -> tuple:
    from .lattice import (LatticeConfig, LatticeSpec, NotASolution, check_generalized_goldstone,
                          discretize_action, numeric_hessian, symbolic_agreement)

    spec = LatticeSpec((sites,))
    action = discretize_action(m, spec)
    c = LatticeConfig.constant(m, spec, v)
    rows = []
    ok = True
    H = None
    for t in ts:
        try:
            if H is None:
                r = check_generalized_goldstone(m, t, v, spec, require_solution=require_solution)
                H = numeric_hessian(action, c)
            else:
                r = check_generalized_goldstone(m, t, v, spec, require_solution=require_solution,
                                                hessian=H)
        except NotASolution as exc:
            return {"lattice_sites": sites, "error": str(exc)}, False
        agree = symbolic_agreement(m, t, v, generalized_residual(m, t), spec, r)
        passed = r.residual < tol
        ok &= passed
        rows.append({"transformation": t.name, "residual": r.residual, "pass": passed,
                     "gradient_norm": r.gradient_norm, "hessian_asymmetry": r.hessian_asymmetry,
                     "rows_used": r.rows_used, "rows_total": r.rows_total,
                     "symbolic_agreement": agree, "notes": r.notes})
    return {"lattice_sites": sites, "spacing": spec.spacing, "tolerance": tol,
            "action": action(c), "checks": rows}, ok


def pick_transformations(m: ModelDef, names: list | None, kinds: tuple | None = None) -> list:
    ts = list(m.transformations)
    if names:
        ts = [m.transformation(n) for n in names]
    elif kinds is not None:
        ts = [t for t in ts if t.kind in kinds]
    return ts

