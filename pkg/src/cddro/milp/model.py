"""Sparse mixed-binary model container.

Variables are registered by structured name (``alpha[0,2]``, ``v[3,1,0,0]@p1w4``)
and constraints are stored row-wise until the model is frozen into arrays.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

BINARY = "binary"
CONTINUOUS = "continuous"
LE, EQ, GE = "<=", "=", ">="

INF = float("inf")


class ModelError(ValueError):
    pass


def vname(base: str, *idx, tag: str | None = None) -> str:
    """Build a structured variable name, e.g. ``vname('x', 2, 0, tag='p1w3')``."""
    s = base
    if idx:
        s += "[" + ",".join(str(i) for i in idx) + "]"
    if tag:
        s += "@" + tag
    return s


@dataclass
class Variable:
    name: str
    kind: str
    lb: float
    ub: float
    obj: float = 0.0


@dataclass
class Constraint:
    name: str
    cols: list[int]
    coefs: list[float]
    sense: str
    rhs: float


@dataclass
class ModelStats:
    m: int
    n01: int
    nc: int
    nz: int

    def as_row(self) -> dict:
        return {"m": self.m, "n01": self.n01, "nc": self.nc, "nz": self.nz}


@dataclass
class FrozenModel:
    """Array form used by the solvers. Row bounds are ``row_lo <= A x <= row_hi``."""
    names: list[str]
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    row_names: list[str]
    is_binary: np.ndarray
    obj_const: float = 0.0

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return self.A.shape[0]


class MilpModel:
    """Minimization model over binary and continuous variables.

    SOS1 groups are accepted through :meth:`add_sos1` and stored as a
    sum-to-at-most-one row, which is exact when every member is binary.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self._index: dict[str, int] = {}
        self._row_index: dict[str, int] = {}
        self.obj_const = 0.0
        self.sos1: list[list[int]] = []
        # free-form registry: group tag -> column list (e.g. "first_stage")
        self.groups: dict[str, list[int]] = {}
        # column -> priority; fractional binaries of the highest priority branch first
        self.branch_priority: dict[int, int] = {}
        self._frozen: FrozenModel | None = None

    # -- construction -------------------------------------------------
    def add_var(self, name: str, kind: str = CONTINUOUS, lb: float = 0.0,
                ub: float = INF, obj: float = 0.0, group: str | None = None) -> int:
        if name in self._index:
            raise ModelError(f"duplicate variable name {name!r}")
        if kind not in (BINARY, CONTINUOUS):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(0.0, lb), min(1.0, ub)
        if lb > ub:
            raise ModelError(f"empty bounds for {name!r}: [{lb}, {ub}]")
        j = len(self.variables)
        self.variables.append(Variable(name, kind, float(lb), float(ub), float(obj)))
        self._index[name] = j
        if group is not None:
            self.groups.setdefault(group, []).append(j)
        self._frozen = None
        return j

    def add_constr(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                   sense: str, rhs: float, name: str | None = None) -> int:
        if sense not in (LE, EQ, GE):
            raise ModelError(f"unknown sense {sense!r}")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[int, float] = {}
        n = len(self.variables)
        for j, a in items:
            if not 0 <= j < n:
                raise ModelError(f"constraint references unknown column {j}")
            acc[j] = acc.get(j, 0.0) + float(a)
        cols = [j for j in acc if acc[j] != 0.0]
        i = len(self.constraints)
        if name is None:
            name = f"r{i}"
        if name in self._row_index:
            raise ModelError(f"duplicate constraint name {name!r}")
        self._row_index[name] = i
        self.constraints.append(Constraint(name, cols, [acc[j] for j in cols], sense, float(rhs)))
        self._frozen = None
        return i

    def add_sos1(self, cols: Sequence[int], name: str | None = None) -> int:
        for j in cols:
            if self.variables[j].kind != BINARY:
                raise ModelError("SOS1 reformulation requires binary members")
        self.sos1.append(list(cols))
        return self.add_constr({j: 1.0 for j in cols}, LE, 1.0, name=name)

    def set_obj(self, j: int, coef: float) -> None:
        self.variables[j].obj = float(coef)
        self._frozen = None

    def set_bounds(self, j: int, lb: float, ub: float) -> None:
        v = self.variables[j]
        if lb > ub:
            raise ModelError(f"empty bounds for {v.name!r}: [{lb}, {ub}]")
        v.lb, v.ub = float(lb), float(ub)
        self._frozen = None

    # -- lookup -------------------------------------------------------
    def var(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def has_var(self, name: str) -> bool:
        return name in self._index

    def row(self, name: str) -> int:
        return self._row_index[name]

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def copy(self) -> "MilpModel":
        other = MilpModel(self.name)
        other.variables = [Variable(v.name, v.kind, v.lb, v.ub, v.obj) for v in self.variables]
        other.constraints = [Constraint(r.name, list(r.cols), list(r.coefs), r.sense, r.rhs)
                             for r in self.constraints]
        other._index = dict(self._index)
        other._row_index = dict(self._row_index)
        other.obj_const = self.obj_const
        other.sos1 = [list(g) for g in self.sos1]
        other.groups = {k: list(v) for k, v in self.groups.items()}
        other.branch_priority = dict(self.branch_priority)
        return other

    # -- array form ---------------------------------------------------
    def freeze(self) -> FrozenModel:
        if self._frozen is not None:
            return self._frozen
        n, m = self.n, self.m
        c = np.array([v.obj for v in self.variables], dtype=float)
        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        is_bin = np.array([v.kind == BINARY for v in self.variables], dtype=bool)
        indptr = np.zeros(m + 1, dtype=np.int64)
        for i, r in enumerate(self.constraints):
            indptr[i + 1] = indptr[i] + len(r.cols)
        indices = np.fromiter((j for r in self.constraints for j in r.cols),
                              dtype=np.int64, count=int(indptr[-1]))
        data = np.fromiter((a for r in self.constraints for a in r.coefs),
                           dtype=float, count=int(indptr[-1]))
        A = sp.csr_matrix((data, indices, indptr), shape=(m, n))
        A.sort_indices()
        rhs = np.array([r.rhs for r in self.constraints], dtype=float)
        senses = [r.sense for r in self.constraints]
        row_lo = np.where([s in (GE, EQ) for s in senses], rhs, -INF) if m else np.zeros(0)
        row_hi = np.where([s in (LE, EQ) for s in senses], rhs, INF) if m else np.zeros(0)
        self._frozen = FrozenModel(
            names=[v.name for v in self.variables], c=c, lb=lb, ub=ub, A=A,
            row_lo=np.asarray(row_lo, dtype=float), row_hi=np.asarray(row_hi, dtype=float),
            row_names=[r.name for r in self.constraints], is_binary=is_bin,
            obj_const=self.obj_const)
        return self._frozen

    def stats(self) -> ModelStats:
        n01 = sum(1 for v in self.variables if v.kind == BINARY)
        nz = sum(len(r.cols) for r in self.constraints)
        return ModelStats(m=self.m, n01=n01, nc=self.n - n01, nz=nz)

    def fingerprint(self) -> str:
        """SHA-256 over a canonical serialization; equal models give equal digests."""
        h = hashlib.sha256()
        for v in self.variables:
            h.update(f"{v.name}|{v.kind}|{v.lb!r}|{v.ub!r}|{v.obj!r}\n".encode())
        for r in self.constraints:
            h.update(f"{r.name}|{r.sense}|{r.rhs!r}|".encode())
            h.update(",".join(f"{j}:{a!r}" for j, a in zip(r.cols, r.coefs)).encode())
            h.update(b"\n")
        return h.hexdigest()

    # -- evaluation ---------------------------------------------------
    def objective_value(self, x: Sequence[float]) -> float:
        return self.obj_const + float(sum(v.obj * x[j] for j, v in enumerate(self.variables)
                                          if v.obj != 0.0))

    def check_feasibility(self, x: Sequence[float], tol: float = 1e-6,
                          int_tol: float = 1e-6) -> list[str]:
        """Independent re-check of a point. Returns human-readable violations."""
        out = []
        for j, v in enumerate(self.variables):
            xj = x[j]
            if xj < v.lb - tol or xj > v.ub + tol:
                out.append(f"bound {v.name}={xj} not in [{v.lb}, {v.ub}]")
            if v.kind == BINARY and abs(xj - round(xj)) > int_tol:
                out.append(f"integrality {v.name}={xj}")
        for r in self.constraints:
            act = sum(a * x[j] for j, a in zip(r.cols, r.coefs))
            scale = max(1.0, abs(r.rhs))
            if r.sense == LE and act > r.rhs + tol * scale:
                out.append(f"row {r.name}: {act} > {r.rhs}")
            elif r.sense == GE and act < r.rhs - tol * scale:
                out.append(f"row {r.name}: {act} < {r.rhs}")
            elif r.sense == EQ and abs(act - r.rhs) > tol * scale:
                out.append(f"row {r.name}: {act} != {r.rhs}")
        return out


@dataclass
class MilpSolution:
    status: str
    objective: float | None
    values: dict[str, float] = field(default_factory=dict)
    best_bound: float = -INF
    nodes: int = 0
    iterations: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)

    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap_limit"
    TIME_LIMIT = "time_limit"
    NODE_LIMIT = "node_limit"

    @property
    def gap(self) -> float:
        """Relative gap in percent, ``100 (z_up - z_lo) / z_up``."""
        if self.objective is None or not np.isfinite(self.best_bound):
            return INF
        if self.objective == 0.0:
            return 0.0 if self.best_bound >= 0.0 else INF
        return 100.0 * (self.objective - self.best_bound) / abs(self.objective)

    @property
    def has_solution(self) -> bool:
        return self.objective is not None

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "best_bound": self.best_bound if np.isfinite(self.best_bound) else None,
            "gap": self.gap if np.isfinite(self.gap) else None,
            "nodes": self.nodes,
            "iterations": self.iterations,
            "values": self.values,
        }
