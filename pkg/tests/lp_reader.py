"""A small, independent reader for the LP text files written by export_lp."""

import math
import re

_SECTIONS = {"maximize": "obj", "maximum": "obj", "subject to": "con", "such that": "con",
             "st": "con", "s.t.": "con", "bounds": "bnd", "generals": "gen", "general": "gen",
             "binaries": "bin", "binary": "bin", "end": "end"}
_TOKEN = re.compile(r"[+-]|[A-Za-z_][A-Za-z0-9_]*|[0-9.]+(?:[eE][+-]?[0-9]+)?")


def _parse_expr(text):
    """Return ({var: coef}, constant) for a linear expression."""
    coefs, const = {}, 0.0
    sign, num = 1.0, None
    for tok in _TOKEN.findall(text):
        if tok in "+-":
            if num is not None:  # a trailing constant
                const += sign * num
                num = None
            sign = -1.0 if tok == "-" else 1.0
        elif tok[0].isalpha() or tok[0] == "_":
            c = sign * (1.0 if num is None else num)
            coefs[tok] = coefs.get(tok, 0.0) + c
            sign, num = 1.0, None
        else:
            num = float(tok)
    if num is not None:
        const += sign * num
    return {k: v for k, v in coefs.items() if v != 0}, const


def _value(tok):
    tok = tok.strip().lower()
    if tok in ("-inf", "-infinity"):
        return -math.inf
    if tok in ("+inf", "inf", "infinity", "+infinity"):
        return math.inf
    return float(tok)


def read_lp(text):
    section = None
    statements = {"obj": [], "con": [], "bnd": [], "gen": [], "bin": []}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        key = line.lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            continue
        if section in ("obj", "con") and raw.startswith("   ") and statements[section]:
            statements[section][-1] += " " + line
        else:
            statements[section].append(line)

    objective, constant = _parse_expr(statements["obj"][0].split(":", 1)[1])
    constraints = []
    for stmt in statements["con"]:
        name, body = stmt.split(":", 1)
        m = re.search(r"(<=|>=|=)", body)
        lhs, sense, rhs = body[:m.start()], m.group(1), body[m.end():]
        coefs, c = _parse_expr(lhs)
        assert c == 0.0
        constraints.append((name.strip(), coefs, sense, float(rhs)))
    bounds = {}
    for stmt in statements["bnd"]:
        parts = stmt.split()
        if len(parts) == 5:
            bounds[parts[2]] = (_value(parts[0]), _value(parts[4]))
        elif len(parts) == 3 and parts[1] == "=":
            v = _value(parts[2])
            bounds[parts[0]] = (v, v)
        else:
            raise ValueError(f"unsupported bound {stmt!r}")
    generals = [t for stmt in statements["gen"] for t in stmt.split()]
    binaries = [t for stmt in statements["bin"] for t in stmt.split()]
    return {"objective": objective, "constant": constant, "constraints": constraints,
            "bounds": bounds, "generals": generals, "binaries": binaries}
