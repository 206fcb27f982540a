"""LP-format export and ``name value`` solution import.

Structured names such as ``v[3,1,0,0]@p1w4`` contain characters that LP
readers reject, so they are escaped into ``[A-Za-z0-9_]`` reversibly:

    ``_`` -> ``__``, ``[`` -> ``_L``, ``]`` -> ``_R``, ``,`` -> ``_C``,
    ``@`` -> ``_A``, ``-`` -> ``_M``, ``.`` -> ``_D``, other -> ``_xHHHH``

and prefixed with ``v_`` (columns) or ``c_`` (rows).
"""
from __future__ import annotations

import math
import re
from pathlib import Path

import numpy as np

from .model import BINARY, EQ, GE, LE, MilpModel, MilpSolution

_ESC = {"_": "__", "[": "_L", "]": "_R", ",": "_C", "@": "_A", "-": "_M", ".": "_D"}
_UNESC = {v[1]: k for k, v in _ESC.items() if k != "_"}
_PLAIN = re.compile(r"[A-Za-z0-9]")


class SolutionFileError(ValueError):
    pass


def sanitize(name: str, prefix: str = "v_") -> str:
    out = [prefix]
    for ch in name:
        if _PLAIN.match(ch):
            out.append(ch)
        elif ch in _ESC:
            out.append(_ESC[ch])
        else:
            out.append(f"_x{ord(ch):04X}")
    return "".join(out)


def unsanitize(token: str, prefix: str = "v_") -> str:
    if not token.startswith(prefix):
        raise ValueError(f"{token!r} lacks prefix {prefix!r}")
    s = token[len(prefix):]
    out = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch != "_":
            out.append(ch)
            i += 1
            continue
        nxt = s[i + 1] if i + 1 < len(s) else ""
        if nxt == "_":
            out.append("_")
            i += 2
        elif nxt == "x":
            out.append(chr(int(s[i + 2:i + 6], 16)))
            i += 6
        elif nxt in _UNESC:
            out.append(_UNESC[nxt])
            i += 2
        else:
            raise ValueError(f"bad escape in {token!r}")
    return "".join(out)


def _num(a: float) -> str:
    return repr(float(a))


def _terms(pairs) -> str:
    parts = []
    for name, a in pairs:
        sign = "-" if a < 0 else "+"
        parts.append(f"{sign} {_num(abs(a))} {name}")
    if not parts:
        return "0"
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else s


def _wrap(text: str, width: int = 200) -> str:
    # LP readers cap line length; break between terms
    out, line = [], ""
    for tok in text.split(" "):
        if len(line) + len(tok) + 1 > width and line:
            out.append(line)
            line = "   " + tok
        else:
            line = f"{line} {tok}" if line else tok
    out.append(line)
    return "\n".join(out)


def export_lp_file(model: MilpModel, path: str | Path, sos: bool = True) -> None:
    """Write ``model`` in LP format.  SOS1 groups are already present as
    sum-at-most-one rows, so ``sos=False`` drops the redundant SOS section for
    readers that do not support it."""
    vn = [sanitize(v.name) for v in model.variables]
    lines = [f"\\ {model.name}", "Minimize"]
    obj = _terms((vn[j], v.obj) for j, v in enumerate(model.variables) if v.obj != 0.0)
    if model.obj_const:
        obj += f" {'+' if model.obj_const >= 0 else '-'} {_num(abs(model.obj_const))}"
    lines.append(_wrap(f" obj: {obj}"))
    lines.append("Subject To")
    for r in model.constraints:
        op = {LE: "<=", GE: ">=", EQ: "="}[r.sense]
        body = _terms((vn[j], a) for j, a in zip(r.cols, r.coefs))
        lines.append(_wrap(f" {sanitize(r.name, 'c_')}: {body} {op} {_num(r.rhs)}"))
    lines.append("Bounds")
    for j, v in enumerate(model.variables):
        if v.kind == BINARY and v.lb == 0.0 and v.ub == 1.0:
            continue
        lo = "-inf" if math.isinf(v.lb) else _num(v.lb)
        hi = "+inf" if math.isinf(v.ub) else _num(v.ub)
        if math.isinf(v.lb) and math.isinf(v.ub):
            lines.append(f" {vn[j]} free")
        elif v.lb == v.ub:
            lines.append(f" {vn[j]} = {lo}")
        else:
            lines.append(f" {lo} <= {vn[j]} <= {hi}")
    bins = [vn[j] for j, v in enumerate(model.variables) if v.kind == BINARY]
    if bins:
        lines.append("Binaries")
        for k in range(0, len(bins), 8):
            lines.append(" " + " ".join(bins[k:k + 8]))
    if sos and model.sos1:
        lines.append("SOS")
        for g, cols in enumerate(model.sos1):
            members = " ".join(f"{vn[j]}:{w + 1}" for w, j in enumerate(cols))
            lines.append(f" s{g}: S1:: {members}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def import_solution_file(model: MilpModel, path: str | Path, tol: float = 1e-6) -> MilpSolution:
    """Read ``name value`` lines (original or escaped names; ``#`` comments and
    blank lines skipped; unlisted columns read as 0) and validate the point."""
    values = np.zeros(model.n)
    unknown: list[str] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SolutionFileError(f"line {lineno}: expected 'name value', got {raw!r}")
        name, val = parts
        try:
            x = float(val)
        except ValueError:
            raise SolutionFileError(f"line {lineno}: bad value {val!r}") from None
        if not model.has_var(name) and name.startswith("v_"):
            try:
                name = unsanitize(name)
            except ValueError:
                pass
        if not model.has_var(name):
            unknown.append(parts[0])
            continue
        values[model.var(name)] = x
    if unknown:
        raise SolutionFileError(f"{len(unknown)} unknown variable name(s): {', '.join(unknown[:10])}")
    bad = model.check_feasibility(values, tol=tol, int_tol=tol)
    if bad:
        raise SolutionFileError("solution violates the model: " + "; ".join(bad[:10]))
    obj = model.objective_value(values)
    return MilpSolution(MilpSolution.OPTIMAL, obj,
                        values={v.name: float(values[j]) for j, v in enumerate(model.variables)},
                        best_bound=obj)
