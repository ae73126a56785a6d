"""Small conic-program layer over cvxpy with a two-backend solve.

Programs are built from named variable blocks, named constraint groups and
objective terms. Log-barrier rewards are kept symbolic until solve time so
they can be realized with exponential cones or, when those are disabled, a
piecewise-linear underestimate.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum

import cvxpy as cp
import numpy as np

log = logging.getLogger(__name__)

PRIMARY = "CLARABEL"
FALLBACK = "SCS"
PWL_SEGMENTS = 16


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INACCURATE = "Inaccurate"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class SolveError(RuntimeError):
    """Raised by stage code when a program has no usable solution."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class SolverOptions:
    tol: float = 1e-8
    fallback_tol: float = 1e-5
    fallback_max_iters: int = 200_000
    exp_cone: bool = True
    primary: str = PRIMARY
    fallback: str | None = FALLBACK
    verbose: bool = False


@dataclass
class Solution:
    values: dict
    status: Status
    objective_value: float
    solve_time: float
    backend: str = ""
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.INACCURATE)


@dataclass
class _Barrier:
    s: cp.Expression
    weight: float
    upper: float | None
    lower: float | None


class ConicProgram:
    def __init__(self):
        self.variables: dict[str, cp.Variable] = {}
        self.groups: dict[str, list] = {}
        self.terms: list = []
        self.barriers: list[_Barrier] = []

    def var(self, name: str, n: int) -> cp.Variable:
        if name in self.variables:
            raise ValueError(f"duplicate variable block {name!r}")
        v = cp.Variable(n, name=name)
        self.variables[name] = v
        return v

    def add(self, group: str, constraints) -> None:
        if not isinstance(constraints, (list, tuple)):
            constraints = [constraints]
        self.groups.setdefault(group, []).extend(constraints)

    def minimize(self, term) -> None:
        self.terms.append(term)

    def add_log_barrier(self, s, weight: float, upper=None, lower=None) -> None:
        """Append ``-weight * sum(log(s))`` for an affine vector expression ``s``."""
        if weight < 0:
            raise ValueError("barrier weight must be nonnegative")
        if weight == 0 or s.size == 0:
            return
        self.barriers.append(_Barrier(s, float(weight), upper, lower))

    def _barrier_parts(self, exp_cone: bool):
        costs, cons = [], []
        for b in self.barriers:
            t = cp.Variable(b.s.size)
            s = cp.reshape(b.s, (b.s.size,), order="C")
            if exp_cone:
                # exp(-t) <= s  <=>  t >= -log(s)
                cons.append(cp.ExpCone(-t, np.ones(b.s.size), s))
            else:
                hi = b.upper if b.upper is not None else 1.0
                lo = b.lower if b.lower is not None else 1e-3 * hi
                for p in np.geomspace(lo, hi, PWL_SEGMENTS):
                    cons.append(t >= -np.log(p) - (s - p) / p)
                cons.append(s >= lo)
            costs.append(b.weight * cp.sum(t))
        return costs, cons

    def problem(self, exp_cone: bool = True) -> cp.Problem:
        costs, extra = self._barrier_parts(exp_cone)
        obj = cp.sum(self.terms + costs) if (self.terms or costs) else cp.Constant(0.0)
        cons = [c for g in self.groups.values() for c in g] + extra
        return cp.Problem(cp.Minimize(obj), cons)

    def residuals(self) -> dict:
        out = {}
        for name, cons in self.groups.items():
            worst = 0.0
            for c in cons:
                with np.errstate(divide="ignore", invalid="ignore"):
                    v = c.violation()
                if v is None:
                    worst = np.inf
                    break
                v = np.max(np.abs(v)) if np.size(v) else 0.0
                worst = max(worst, float(v))
            out[name] = worst
        return out

    def dump(self, path, exp_cone: bool = True) -> None:
        write_conic_text(self.problem(exp_cone), path)


def barrier_terms(prog: ConicProgram, pairs, upper=None) -> None:
    """Add ``-sum_k w_k log(b_k - a_k)`` for each ``(a, b, w)`` pair.

    ``a`` and ``b`` are (m, d) or (d,) affine expressions and ``w`` has length d.
    """
    for a, b, w in pairs:
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise ValueError("barrier weights must be nonnegative")
        diff = b - a
        for k, wk in enumerate(w):
            if wk == 0:
                continue
            s = diff[k] if diff.ndim == 1 else diff[:, k]
            prog.add_log_barrier(s, wk, upper=upper)


def _settings(backend: str, tol: float, opts: SolverOptions) -> dict:
    if backend == "CLARABEL":
        return dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol,
                    tol_infeas_abs=tol, tol_infeas_rel=tol, max_iter=500)
    if backend == "SCS":
        return dict(eps_abs=tol, eps_rel=tol, max_iters=opts.fallback_max_iters)
    return {}


def _run(prob: cp.Problem, backend: str, tol: float, opts: SolverOptions):
    try:
        prob.solve(solver=backend, verbose=opts.verbose, **_settings(backend, tol, opts))
    except cp.SolverError as exc:
        log.debug("%s failed: %s", backend, exc)
        return "error"
    return prob.status


def solve(prog: ConicProgram, opts: SolverOptions | None = None) -> Solution:
    opts = opts or SolverOptions()
    prob = prog.problem(opts.exp_cone)
    t0 = time.perf_counter()
    backend = opts.primary
    st = _run(prob, backend, opts.tol, opts)
    if st == cp.OPTIMAL:
        status = Status.OPTIMAL
    else:
        status = None
        if opts.fallback:
            log.info("%s returned %s; retrying with %s", backend, st, opts.fallback)
            backend = opts.fallback
            st = _run(prob, backend, opts.fallback_tol, opts)
        if st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            status = Status.INACCURATE
        elif st in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            status = Status.UNBOUNDED
        else:
            status = Status.INFEASIBLE
    elapsed = time.perf_counter() - t0
    if status in (Status.OPTIMAL, Status.INACCURATE):
        values = {k: np.array(v.value, dtype=float) for k, v in prog.variables.items()}
        obj = float(prob.value)
        res = prog.residuals()
    else:
        values, obj, res = {}, np.inf if status is Status.INFEASIBLE else -np.inf, {}
    return Solution(values, status, obj, elapsed, backend, res)


def diagnose(prog: ConicProgram, opts: SolverOptions | None = None) -> dict:
    """Attribute infeasibility to constraint groups.

    A group is reported ``True`` when dropping it alone makes the rest
    feasible. Objective terms are ignored here.
    """
    opts = opts or SolverOptions()
    out = {}
    names = list(prog.groups)
    for name in names:
        cons = [c for g, cs in prog.groups.items() if g != name for c in cs]
        prob = cp.Problem(cp.Minimize(0), cons)
        st = _run(prob, opts.primary, 1e-7, opts)
        out[name] = st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
    return out


def write_conic_text(prob: cp.Problem, path) -> None:
    """Write the canonical cone program in a plain sparse text layout."""
    data, _, _ = prob.get_problem_data(cp.CLARABEL)
    A = data["A"].tocoo()
    c = np.asarray(data["c"]).ravel()
    b = np.asarray(data["b"]).ravel()
    dims = data["dims"]
    lines = ["VER", "1", "", "OBJSENSE", "MIN", "",
             "VAR", f"{A.shape[1]} 1", f"F {A.shape[1]}", "",
             "CON", f"{A.shape[0]} 4",
             f"L= {dims.zero}", f"L+ {dims.nonneg}",
             f"Q {' '.join(map(str, dims.soc))}", f"EXP {dims.exp}", ""]
    lines += ["OBJACOORD", str(int(np.count_nonzero(c)))]
    lines += [f"{j} {v:.17g}" for j, v in enumerate(c) if v != 0]
    if "P" in data and data["P"] is not None and data["P"].nnz:
        P = data["P"].tocoo()
        lines += ["", "OBJQCOORD", str(P.nnz)]
        lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(P.row, P.col, P.data)]
    # cone rows are b - A x in K
    lines += ["", "ACOORD", str(A.nnz)]
    lines += [f"{i} {j} {-v:.17g}" for i, j, v in zip(A.row, A.col, A.data)]
    lines += ["", "BCOORD", str(int(np.count_nonzero(b)))]
    lines += [f"{i} {v:.17g}" for i, v in enumerate(b) if v != 0]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
