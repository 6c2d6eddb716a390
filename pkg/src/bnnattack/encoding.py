"""Attack MILP construction, solution checking and LP-format export.

Activations are encoded over {0,1} (``h = 1`` means the neuron outputs +1)
and the next layer sees ``2h - 1``. First-layer neurons are linked to their
continuous pre-activation with big-M rows carrying a small robustness margin,
so any feasible point decodes to a perturbation the float forward pass agrees
with. Deeper pre-activations are integers of fixed parity and are linked
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import ActivationTrace, AttackInstance, BnnModel, BoundsTable, forward

CONTINUOUS, BINARY, INTEGER = "continuous", "binary", "integer"
LE, GE, EQ = "<=", ">=", "="

# A first-layer neuron counts as +1 (-1) only when its shifted pre-activation
# is >= margin (<= -margin).
ACTIVATION_MARGIN = 1e-6


class EncodingError(ValueError):
    pass


class MissingVariableError(KeyError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    lower: float
    upper: float


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple  # ((var index, coefficient), ...)
    sense: str
    rhs: float


@dataclass
class MilpModel:
    """Linear model, always maximized."""

    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: tuple = ()
    objective_constant: float = 0.0
    roles: dict = field(default_factory=dict)
    _names: dict = field(default_factory=dict, repr=False)

    def add_variable(self, name, kind=CONTINUOUS, lower=0.0, upper=math.inf, role=None):
        if name in self._names:
            raise EncodingError(f"duplicate variable {name}")
        if kind == BINARY:
            lower, upper = 0.0, 1.0
        if lower > upper:
            raise EncodingError(f"variable {name}: lower bound {lower} > upper bound {upper}")
        idx = len(self.variables)
        self.variables.append(Variable(name, kind, float(lower), float(upper)))
        self._names[name] = idx
        if role is not None:
            if role in self.roles:
                raise EncodingError(f"duplicate role {role}")
            self.roles[role] = idx
        return idx

    def add_constraint(self, terms, sense, rhs, name=None):
        if sense not in (LE, GE, EQ):
            raise EncodingError(f"unknown sense {sense!r}")
        merged = {}
        for j, c in terms:
            if not 0 <= j < len(self.variables):
                raise EncodingError(f"constraint references undeclared variable {j}")
            merged[j] = merged.get(j, 0.0) + float(c)
        packed = tuple((j, c) for j, c in merged.items() if c != 0.0)
        if name is None:
            name = f"c{len(self.constraints)}"
        self.constraints.append(Constraint(name, packed, sense, float(rhs)))

    def set_objective(self, terms, constant=0.0):
        merged = {}
        for j, c in terms:
            merged[j] = merged.get(j, 0.0) + float(c)
        self.objective = tuple((j, c) for j, c in merged.items() if c != 0.0)
        self.objective_constant = float(constant)

    def index(self, name) -> int:
        return self._names[name]

    def var(self, *role) -> int:
        return self.roles[role]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def integer_mask(self):
        return np.array([v.kind != CONTINUOUS for v in self.variables], dtype=bool)

    def to_arrays(self):
        """Dense ``(c, A, senses, b, lower, upper, integer_mask)``."""
        n = self.n_vars
        c = np.zeros(n)
        for j, v in self.objective:
            c[j] = v
        A = np.zeros((len(self.constraints), n))
        for i, con in enumerate(self.constraints):
            for j, v in con.terms:
                A[i, j] = v
        senses = [con.sense for con in self.constraints]
        b = np.array([con.rhs for con in self.constraints], dtype=np.float64)
        lower = np.array([v.lower for v in self.variables])
        upper = np.array([v.upper for v in self.variables])
        return c, A, senses, b, lower, upper, self.integer_mask()

    def objective_value(self, values) -> float:
        return float(sum(c * values[j] for j, c in self.objective) + self.objective_constant)


# ---------------------------------------------------------------------------
# builders


def _check_bounds(bounds: BoundsTable):
    for l, (lo, hi) in enumerate(zip(bounds.lower, bounds.upper)):
        bad = np.nonzero(lo > hi)[0]
        if bad.size:
            raise EncodingError(f"layer {l + 1} neuron {bad[0]}: lower bound exceeds upper bound")


def _base_model(model: BnnModel, instance: AttackInstance, bounds: BoundsTable):
    """Variables p, a, h; pre-activation equalities; objective."""
    _check_bounds(bounds)
    m = MilpModel()
    lo_p, hi_p = instance.perturbation_box()
    for j in range(model.n_inputs):
        m.add_variable(f"p_{j}", CONTINUOUS, lo_p[j], hi_p[j], role=("p", j))
    depth = model.depth
    for l in range(1, depth + 2):
        kind = CONTINUOUS if l == 1 else INTEGER
        lo, hi = bounds.lower[l - 1], bounds.upper[l - 1]
        for j in range(len(lo)):
            m.add_variable(f"a_{l}_{j}", kind, lo[j], hi[j], role=("a", l, j))
        if l <= depth:
            for j in range(len(lo)):
                m.add_variable(f"h_{l}_{j}", BINARY, role=("h", l, j))

    w1 = model.weights[0].astype(np.float64)
    x = instance.x
    for j in range(w1.shape[1]):
        terms = [(m.var("a", 1, j), 1.0)]
        terms += [(m.var("p", i), -w1[i, j]) for i in range(model.n_inputs)]
        m.add_constraint(terms, EQ, float(w1[:, j] @ x), name=f"pre_1_{j}")
    for l in range(2, depth + 2):
        w = model.weights[l - 1].astype(np.float64)
        for j in range(w.shape[1]):
            terms = [(m.var("a", l, j), 1.0)]
            terms += [(m.var("h", l - 1, i), -2.0 * w[i, j]) for i in range(w.shape[0])]
            m.add_constraint(terms, EQ, -float(w[:, j].sum()), name=f"pre_{l}_{j}")

    out = depth + 1
    s, b = model.out_scale, model.out_bias
    t, p = instance.target, instance.prediction
    m.set_objective(
        [(m.var("a", out, t), s[t]), (m.var("a", out, p), -s[p])],
        constant=float(b[t] - b[p]),
    )
    return m


def _link_first_layer(m, model, bounds):
    tau, pol = model.thresholds[0], model.polarity[0]
    lo, hi = bounds.lower[0], bounds.upper[0]
    d = ACTIVATION_MARGIN
    for j in range(len(lo)):
        s = float(pol[j])
        # z = s * (a - tau)
        zlo = min(s * (lo[j] - tau[j]), s * (hi[j] - tau[j]))
        zhi = max(s * (lo[j] - tau[j]), s * (hi[j] - tau[j]))
        a, h = m.var("a", 1, j), m.var("h", 1, j)
        # h = 1 -> z <= zhi ; h = 0 -> z <= -d
        m.add_constraint([(a, s), (h, -(zhi + d))], LE, -d + s * tau[j], name=f"ub_1_{j}")
        # h = 1 -> z >= d ; h = 0 -> z >= zlo
        m.add_constraint([(a, s), (h, -(d - zlo))], GE, zlo + s * tau[j], name=f"lb_1_{j}")


def value_set(lower, upper, parity_of):
    """Integers in ``[lower, upper]`` with the parity of ``parity_of``."""
    lo = math.ceil(lower - 1e-9)
    if (lo - parity_of) % 2:
        lo += 1
    hi = math.floor(upper + 1e-9)
    return list(range(lo, hi + 1, 2))


def _split_values(values, tau, pol):
    """Partition attainable integer pre-activations by resulting activation."""
    pos = [k for k in values if pol * (k - tau) >= 0]
    neg = [k for k in values if pol * (k - tau) < 0]
    return pos, neg


def _link_integer_layers(m, model, bounds):
    for l in range(2, model.depth + 1):
        tau, pol = model.thresholds[l - 1], model.polarity[l - 1]
        r_prev = model.weights[l - 1].shape[0]
        for j in range(len(tau)):
            lo, hi = bounds.lower[l - 1][j], bounds.upper[l - 1][j]
            values = value_set(lo, hi, r_prev)
            if not values:
                raise EncodingError(f"layer {l} neuron {j}: no attainable pre-activation")
            pos, neg = _split_values(values, tau[j], pol[j])
            a, h = m.var("a", l, j), m.var("h", l, j)
            if not pos:
                m.add_constraint([(h, 1.0)], EQ, 0.0, name=f"fix_{l}_{j}")
                continue
            if not neg:
                m.add_constraint([(h, 1.0)], EQ, 1.0, name=f"fix_{l}_{j}")
                continue
            lo, hi = values[0], values[-1]
            if pol[j] > 0:
                k_pos, k_neg = min(pos), max(neg)
                # h = 1 -> a >= k_pos ; h = 0 -> a <= k_neg
                m.add_constraint([(a, 1.0), (h, -(k_pos - lo))], GE, lo, name=f"lb_{l}_{j}")
                m.add_constraint([(a, 1.0), (h, -(hi - k_neg))], LE, k_neg, name=f"ub_{l}_{j}")
            else:
                k_pos, k_neg = max(pos), min(neg)
                # h = 1 -> a <= k_pos ; h = 0 -> a >= k_neg
                m.add_constraint([(a, 1.0), (h, hi - k_pos)], LE, hi, name=f"ub_{l}_{j}")
                m.add_constraint([(a, 1.0), (h, k_neg - lo)], GE, k_neg, name=f"lb_{l}_{j}")


def build_bigm_milp(model: BnnModel, instance: AttackInstance, bounds: BoundsTable) -> MilpModel:
    m = _base_model(model, instance, bounds)
    _link_first_layer(m, model, bounds)
    _link_integer_layers(m, model, bounds)
    return m


def build_value_enum_milp(model: BnnModel, instance: AttackInstance, bounds: BoundsTable) -> MilpModel:
    """Layers >= 2 select their pre-activation value through one-hot indicators."""
    m = _base_model(model, instance, bounds)
    _link_first_layer(m, model, bounds)
    depth = model.depth
    for l in range(2, depth + 2):
        r_prev = model.weights[l - 1].shape[0]
        r = model.weights[l - 1].shape[1]
        for j in range(r):
            values = value_set(bounds.lower[l - 1][j], bounds.upper[l - 1][j], r_prev)
            if not values:
                raise EncodingError(f"layer {l} neuron {j}: empty value set")
            vs = [m.add_variable(_v_name(l, j, k), BINARY, role=("v", l, j, k)) for k in values]
            a = m.var("a", l, j)
            m.add_constraint(
                [(a, 1.0)] + [(v, -float(k)) for v, k in zip(vs, values)], EQ, 0.0,
                name=f"val_{l}_{j}",
            )
            m.add_constraint([(v, 1.0) for v in vs], EQ, 1.0, name=f"onehot_{l}_{j}")
            if l > depth:
                continue
            tau, pol = model.thresholds[l - 1][j], model.polarity[l - 1][j]
            h = m.var("h", l, j)
            for v, k in zip(vs, values):
                tag = _k_tag(k)
                if pol * (k - tau) >= 0:
                    m.add_constraint([(h, 1.0), (v, -1.0)], GE, 0.0, name=f"vpos_{l}_{j}_{tag}")
                else:
                    m.add_constraint([(h, 1.0), (v, 1.0)], LE, 1.0, name=f"vneg_{l}_{j}_{tag}")
    return m


def _k_tag(k):
    return f"m{-k}" if k < 0 else str(k)


def _v_name(l, j, k):
    return f"v_{l}_{j}_{_k_tag(k)}"


# ---------------------------------------------------------------------------
# assignments and checking


def trace_assignment(m: MilpModel, model: BnnModel, instance: AttackInstance, p) -> dict:
    """Variable values implied by running ``x + p`` through the network."""
    p = np.asarray(p, dtype=np.float64)
    trace: ActivationTrace = forward(model, instance.x + p)
    values = {}
    for j in range(model.n_inputs):
        values[f"p_{j}"] = float(p[j])
    for l, a in enumerate(trace.pre, start=1):
        for j, v in enumerate(a):
            values[f"a_{l}_{j}"] = float(v)
    for l, h in enumerate(trace.act, start=1):
        for j, v in enumerate(h):
            values[f"h_{l}_{j}"] = 1.0 if v > 0 else 0.0
    for role, idx in m.roles.items():
        if role[0] == "v":
            _, l, j, k = role
            values[m.variables[idx].name] = 1.0 if int(trace.pre[l - 1][j]) == k else 0.0
    return values


@dataclass
class SolutionReport:
    violations: list  # (constraint name, amount)
    integrality: list  # (variable name, distance to nearest integer)
    bound_violations: list  # (variable name, amount)
    objective: float

    @property
    def feasible(self) -> bool:
        return not (self.violations or self.integrality or self.bound_violations)


def _as_vector(m: MilpModel, assignment):
    if isinstance(assignment, dict):
        missing = [v.name for v in m.variables if v.name not in assignment]
        if missing:
            raise MissingVariableError(f"assignment lacks {len(missing)} variables, e.g. {missing[0]}")
        return np.array([assignment[v.name] for v in m.variables], dtype=np.float64)
    vec = np.asarray(assignment, dtype=np.float64)
    if vec.shape != (m.n_vars,):
        raise MissingVariableError(f"assignment has {vec.size} values, model has {m.n_vars}")
    return vec


def check_solution(m: MilpModel, assignment, tol: float = 1e-6) -> SolutionReport:
    x = _as_vector(m, assignment)
    violations = []
    for con in m.constraints:
        lhs = sum(c * x[j] for j, c in con.terms)
        if con.sense == LE:
            amount = lhs - con.rhs
        elif con.sense == GE:
            amount = con.rhs - lhs
        else:
            amount = abs(lhs - con.rhs)
        if amount > tol:
            violations.append((con.name, amount))
    integrality, bound_violations = [], []
    for v, val in zip(m.variables, x):
        if v.kind != CONTINUOUS:
            gap = abs(val - round(val))
            if gap > tol:
                integrality.append((v.name, gap))
        amount = max(v.lower - val, val - v.upper, 0.0)
        if amount > tol:
            bound_violations.append((v.name, amount))
    return SolutionReport(violations, integrality, bound_violations, m.objective_value(x))


# ---------------------------------------------------------------------------
# LP text export

_TERMS_PER_LINE = 8


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _expr(m: MilpModel, terms) -> list:
    """Render ``terms`` as LP-format chunks, one chunk per output line."""
    parts = []
    for k, (j, c) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        if k == 0 and c >= 0:
            sign = ""
        mag = abs(c)
        coef = "" if mag == 1 else _num(mag) + " "
        parts.append(f"{sign} {coef}{m.variables[j].name}".strip())
    if not parts:
        parts = ["0 " + m.variables[0].name] if m.variables else ["0"]
    return [" ".join(parts[i:i + _TERMS_PER_LINE]) for i in range(0, len(parts), _TERMS_PER_LINE)]


def _bound(v: Variable) -> str:
    lo = "-inf" if v.lower == -math.inf else _num(v.lower)
    hi = "+inf" if v.upper == math.inf else _num(v.upper)
    if v.lower == v.upper:
        return f" {v.name} = {lo}"
    return f" {lo} <= {v.name} <= {hi}"


def export_lp(m: MilpModel, sink) -> None:
    """Write ``m`` in LP text format to the text stream ``sink``."""
    lines = ["\\ BNN attack model", "Maximize"]
    obj = _expr(m, m.objective)
    if m.objective_constant:
        const = m.objective_constant
        obj[-1] += f" {'-' if const < 0 else '+'} {_num(abs(const))}"
    lines.append(" obj: " + obj[0])
    lines += ["   " + chunk for chunk in obj[1:]]
    lines.append("Subject To")
    for con in m.constraints:
        chunks = _expr(m, con.terms)
        sense = {LE: "<=", GE: ">=", EQ: "="}[con.sense]
        chunks[-1] += f" {sense} {_num(con.rhs)}"
        lines.append(f" {con.name}: " + chunks[0])
        lines += ["   " + chunk for chunk in chunks[1:]]
    lines.append("Bounds")
    lines += [_bound(v) for v in m.variables if v.kind != BINARY]
    generals = [v.name for v in m.variables if v.kind == INTEGER]
    binaries = [v.name for v in m.variables if v.kind == BINARY]
    if generals:
        lines.append("Generals")
        lines += [" " + " ".join(generals[i:i + 10]) for i in range(0, len(generals), 10)]
    if binaries:
        lines.append("Binaries")
        lines += [" " + " ".join(binaries[i:i + 10]) for i in range(0, len(binaries), 10)]
    lines.append("End")
    sink.write("\n".join(lines) + "\n")
