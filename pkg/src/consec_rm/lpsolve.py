"""A small linear-programming layer: model builder, reference simplex, HiGHS backend.

Models are always maximization problems over bounded variables with ``<=``
and ``=`` rows. The reference solver is a dense two-phase tableau simplex
with a lexicographic anti-cycling ratio test; it is fine up to a couple of
thousand rows and columns. Past that, use :class:`HighsSolver` (or ``"auto"``), which hands the
same model to scipy's HiGHS interface.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .core import ConsecError

log = logging.getLogger(__name__)

INF = math.inf
FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
MAX_ITER = 10**6


class DuplicateName(ConsecError):
    pass


class BadBounds(ConsecError):
    pass


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class Var:
    index: int
    name: str


Terms = Mapping[Var, float] | Iterable[tuple[Var, float]]


@dataclass
class Row:
    coefs: dict[int, float]
    relation: str
    rhs: float
    name: str


class LpModel:
    """Maximize ``sum c_k x_k`` subject to linear rows and variable bounds."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.rows: list[Row] = []
        self.objective: dict[int, float] = {}
        self._by_name: dict[str, Var] = {}

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_constraints(self) -> int:
        return len(self.rows)

    def add_var(self, name: str, lower: float = 0.0, upper: float = INF) -> Var:
        if name in self._by_name:
            raise DuplicateName(name)
        if math.isnan(lower) or math.isnan(upper) or lower > upper or lower == INF:
            raise BadBounds(f"{name}: [{lower}, {upper}]")
        var = Var(len(self.names), name)
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self._by_name[name] = var
        return var

    def var(self, name: str) -> Var:
        return self._by_name[name]

    def _collect(self, terms: Terms) -> dict[int, float]:
        items = terms.items() if isinstance(terms, Mapping) else terms
        out: dict[int, float] = {}
        for var, coef in items:
            if not isinstance(var, Var) or var.index >= len(self.names) or self.names[var.index] != var.name:
                raise KeyError(f"term references an undeclared variable: {var!r}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient {coef} on {var.name}")
            if coef != 0.0:
                out[var.index] = out.get(var.index, 0.0) + coef
        return {k: c for k, c in out.items() if c != 0.0}

    def add_constraint(self, terms: Terms, relation: str, rhs: float, name: str | None = None) -> int:
        if relation not in ("<=", "="):
            raise ValueError(f"relation must be '<=' or '=', got {relation!r}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ValueError(f"non-finite right-hand side {rhs}")
        self.rows.append(Row(self._collect(terms), relation, rhs, name or f"c{len(self.rows)}"))
        return len(self.rows) - 1

    def set_objective(self, terms: Terms) -> None:
        self.objective = self._collect(terms)

    def objective_value(self, values: np.ndarray) -> float:
        return float(sum(c * values[k] for k, c in self.objective.items()))

    def max_violation(self, values: np.ndarray) -> float:
        """Largest absolute bound or row violation of ``values``."""
        worst = 0.0
        for k in range(self.num_vars):
            worst = max(worst, self.lower[k] - values[k], values[k] - self.upper[k])
        for row in self.rows:
            act = sum(c * values[k] for k, c in row.coefs.items())
            gap = act - row.rhs
            worst = max(worst, abs(gap) if row.relation == "=" else gap)
        return worst


@dataclass
class LpSolution:
    status: LpStatus
    objective: float = math.nan
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    duality_gap: float = math.nan
    solver: str = ""

    def __getitem__(self, var: Var) -> float:
        return float(self.values[var.index])

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class Solver:
    name = "abstract"

    def solve(self, model: LpModel) -> LpSolution:
        raise NotImplementedError


# -- reference simplex --------------------------------------------------------


class _Infeasible(Exception):
    pass


def _presolve(model: LpModel):
    """Fix variables and drop rows that bounds alone decide.

    Returns ``(lower, upper, fixed, rows)`` where ``fixed`` maps variable
    index to value and ``rows`` are the surviving rows with fixed columns
    substituted out.
    """
    lower = list(model.lower)
    upper = list(model.upper)
    fixed: dict[int, float] = {k: lower[k] for k in range(model.num_vars) if lower[k] == upper[k]}
    rows = [(dict(r.coefs), r.relation, r.rhs) for r in model.rows]
    changed = True
    while changed:
        changed = False
        kept = []
        for coefs, rel, rhs in rows:
            for k in [k for k in coefs if k in fixed]:
                rhs -= coefs.pop(k) * fixed[k]
            if not coefs:
                bad = rhs < -FEAS_TOL if rel == "<=" else abs(rhs) > FEAS_TOL
                if bad:
                    raise _Infeasible()
                changed = True
                continue
            if len(coefs) == 1:
                ((k, a),) = coefs.items()
                bound = rhs / a
                if rel == "=":
                    if bound < lower[k] - FEAS_TOL or bound > upper[k] + FEAS_TOL:
                        raise _Infeasible()
                    fixed[k] = min(max(bound, lower[k]), upper[k])
                    lower[k] = upper[k] = fixed[k]
                elif a > 0:
                    upper[k] = min(upper[k], bound)
                else:
                    lower[k] = max(lower[k], bound)
                if lower[k] > upper[k] + FEAS_TOL:
                    raise _Infeasible()
                if upper[k] - lower[k] <= 0.0 and k not in fixed:
                    fixed[k] = lower[k]
                    upper[k] = lower[k]
                changed = True
                continue
            if rel == "<=" and rhs == 0.0 and all(
                a > 0 and lower[k] == 0.0 for k, a in coefs.items()
            ):
                # forcing row: nonnegative terms summing to at most zero
                for k in coefs:
                    fixed[k] = 0.0
                    upper[k] = 0.0
                changed = True
                continue
            kept.append((coefs, rel, rhs))
        rows = kept
    # finite upper bounds already implied by a surviving packing row cost a tableau row each
    for coefs, rel, rhs in rows:
        if rel == "<=" and rhs >= 0 and all(a > 0 and lower[k] == 0.0 for k, a in coefs.items()):
            for k, a in coefs.items():
                if k not in fixed and rhs / a <= upper[k]:
                    upper[k] = INF
    return lower, upper, fixed, rows


class SimplexSolver(Solver):
    """Dense two-phase primal simplex.

    Pricing is Dantzig's most-negative reduced cost. The leaving row comes
    from the lexicographic ratio test against the starting identity basis,
    which rules out cycling on degenerate vertices.
    """

    name = "simplex"

    def __init__(self, max_iter: int = MAX_ITER, tol: float = FEAS_TOL):
        self.max_iter = max_iter
        self.tol = tol

    def solve(self, model: LpModel) -> LpSolution:
        try:
            lower, upper, fixed, rows = _presolve(model)
        except _Infeasible:
            return LpSolution(LpStatus.INFEASIBLE, solver=self.name)

        # column map: x_k = offset_k + sign_k * (col_pos - col_neg)
        free = [k for k in range(model.num_vars) if k not in fixed]
        cols: dict[int, list[tuple[int, float]]] = {}
        offset = np.zeros(model.num_vars)
        for k, v in fixed.items():
            offset[k] = v
        ncol = 0
        extra_rows = []
        for k in free:
            lo, hi = lower[k], upper[k]
            if lo > -INF:
                offset[k] = lo
                cols[k] = [(ncol, 1.0)]
                if hi < INF:
                    extra_rows.append(({ncol: 1.0}, "<=", hi - lo))
                ncol += 1
            elif hi < INF:
                offset[k] = hi
                cols[k] = [(ncol, -1.0)]
                ncol += 1
            else:
                cols[k] = [(ncol, 1.0), (ncol + 1, -1.0)]
                ncol += 2
        std_rows = []
        for coefs, rel, rhs in rows:
            row: dict[int, float] = {}
            for k, a in coefs.items():
                rhs -= a * offset[k]
                for c, s in cols[k]:
                    row[c] = row.get(c, 0.0) + a * s
            std_rows.append((row, rel, rhs))
        std_rows.extend(extra_rows)
        cost = np.zeros(ncol)
        for k, c in model.objective.items():
            for col, s in cols.get(k, []):
                cost[col] += c * s

        status, xs, iters, gap = self._two_phase(std_rows, cost, ncol)
        if status is not LpStatus.OPTIMAL:
            return LpSolution(status, iterations=iters, solver=self.name)
        values = offset.copy()
        for k, lst in cols.items():
            values[k] += sum(s * xs[c] for c, s in lst)
        obj = model.objective_value(values)
        return LpSolution(LpStatus.OPTIMAL, obj, values, iters, gap, self.name)

    def _two_phase(self, std_rows, cost, ncol):
        m = len(std_rows)
        n_slack = sum(1 for _, rel, _ in std_rows if rel == "<=")
        # columns: structural | slack | artificial
        need_art = {i for i, (_, rel, rhs) in enumerate(std_rows) if rel == "=" or rhs < 0}
        n_art = len(need_art)
        width = ncol + n_slack + n_art
        A = np.zeros((m, width))
        b = np.zeros(m)
        basis = np.zeros(m, dtype=np.int64)
        s_col = ncol
        a_col = ncol + n_slack
        for i, (row, rel, rhs) in enumerate(std_rows):
            for c, a in row.items():
                A[i, c] = a
            if rel == "<=":
                A[i, s_col] = 1.0
                slack = s_col
                s_col += 1
            b[i] = rhs
            if rhs < 0:
                A[i] *= -1.0
                b[i] = -rhs
            if i in need_art:
                A[i, a_col] = 1.0
                basis[i] = a_col
                a_col += 1
            else:
                basis[i] = slack
        A_orig = A.copy()
        b_orig = b.copy()
        # the starting basis is an identity; its columns drive the lexicographic ratio test
        lex = basis.copy()

        tab = np.zeros((m + 1, width + 1))
        tab[:m, :width] = A
        tab[:m, width] = b
        iters = 0
        first_art = ncol + n_slack

        if n_art:
            tab[m, first_art:width] = 1.0
            for i in range(m):
                if basis[i] >= first_art:
                    tab[m] -= tab[i]
            st, it = self._iterate(tab, basis, width, width, lex, self.max_iter)
            iters += it
            if st is LpStatus.ITERATION_LIMIT:
                return st, None, iters, math.nan
            if -tab[m, width] > self.tol * max(1.0, float(np.abs(b).max(initial=0.0))):
                return LpStatus.INFEASIBLE, None, iters, math.nan
            # drive artificials out of the basis; rows that cannot pivot are redundant
            keep = np.ones(m, dtype=bool)
            for i in range(m):
                if basis[i] >= first_art:
                    cand = np.nonzero(np.abs(tab[i, :first_art]) > PIVOT_TOL)[0]
                    if cand.size:
                        self._pivot(tab, basis, i, int(cand[0]))
                    else:
                        keep[i] = False
            tab = np.vstack([tab[:m][keep], tab[m:]])
            A_orig = A_orig[keep]
            b_orig = b_orig[keep]
            basis = basis[keep]
            lex = lex[keep]
            m = len(basis)

        # phase 2: minimize -cost; artificial columns stay in the tableau for the
        # ratio test but may no longer enter
        c2 = np.zeros(width)
        c2[:ncol] = -cost
        tab[m, :width] = c2
        tab[m, width] = 0.0
        for i in range(m):
            if c2[basis[i]] != 0.0:
                tab[m] -= c2[basis[i]] * tab[i]
        st, it = self._iterate(tab, basis, width, first_art, lex, self.max_iter - iters)
        iters += it
        if st is not LpStatus.OPTIMAL:
            return st, None, iters, math.nan
        x = np.zeros(width)
        x[basis] = tab[:m, width]
        x = np.maximum(x, 0.0)[:first_art]

        gap = math.nan
        if m:
            c2 = c2[:first_art]
            B = A_orig[:, basis]
            y, *_ = np.linalg.lstsq(B.T, c2[basis], rcond=None)
            primal = float(c2 @ x)
            dual = float(b_orig @ y)
            gap = abs(primal - dual) / max(1.0, abs(primal))
            if gap > 1e-6:
                log.warning("simplex: duality gap %.3g exceeds 1e-6", gap)
        else:
            gap = 0.0
        return LpStatus.OPTIMAL, x[:ncol], iters, gap

    def _iterate(self, tab, basis, width, n_enter, lex, budget):
        """Pivot until optimal; only columns below ``n_enter`` may enter."""
        m = tab.shape[0] - 1
        it = 0
        while True:
            d = tab[m, :n_enter]
            enter = np.nonzero(d < -self.tol)[0]
            if enter.size == 0:
                return LpStatus.OPTIMAL, it
            if it >= budget:
                return LpStatus.ITERATION_LIMIT, it
            j = int(enter[np.argmin(d[enter])])
            col = tab[:m, j]
            pos = np.nonzero(col > PIVOT_TOL)[0]
            if pos.size == 0:
                return LpStatus.UNBOUNDED, it
            i = self._leaving(tab, col, pos, width, lex)
            self._pivot(tab, basis, i, j)
            it += 1

    @staticmethod
    def _leaving(tab, col, pos, width, lex):
        """Lexicographic minimum ratio row; it never revisits a basis, so no cycling."""
        ratios = tab[pos, width] / col[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + 1e-12 * max(1.0, abs(rmin))]
        for c in lex:
            if ties.size == 1:
                break
            vals = tab[ties, c] / col[ties]
            ties = ties[vals <= vals.min() + 1e-12]
        return int(ties[0])

    @staticmethod
    def _pivot(tab, basis, i, j):
        tab[i] /= tab[i, j]
        col = tab[:, j].copy()
        col[i] = 0.0
        tab -= np.outer(col, tab[i])
        basis[i] = j


# -- HiGHS backend ------------------------------------------------------------


class HighsSolver(Solver):
    """scipy's HiGHS interface with tightened feasibility tolerances."""

    name = "highs"

    def __init__(self, tol: float = 1e-9):
        self.tol = tol

    def solve(self, model: LpModel) -> LpSolution:
        from scipy import sparse
        from scipy.optimize import linprog

        n = model.num_vars
        if n == 0:
            bad = any((r.rhs < -FEAS_TOL if r.relation == "<=" else abs(r.rhs) > FEAS_TOL) for r in model.rows)
            st = LpStatus.INFEASIBLE if bad else LpStatus.OPTIMAL
            return LpSolution(st, 0.0 if not bad else math.nan, np.zeros(0), 0, 0.0, self.name)
        c = np.zeros(n)
        for k, v in model.objective.items():
            c[k] = -v

        def build(rel):
            data, ri, ci, rhs = [], [], [], []
            for row in model.rows:
                if row.relation != rel:
                    continue
                r = len(rhs)
                for k, a in row.coefs.items():
                    data.append(a)
                    ri.append(r)
                    ci.append(k)
                rhs.append(row.rhs)
            if not rhs:
                return None, None
            return sparse.csr_matrix((data, (ri, ci)), shape=(len(rhs), n)), np.array(rhs)

        A_ub, b_ub = build("<=")
        A_eq, b_eq = build("=")
        bounds = [(lo, None if hi == INF else hi) for lo, hi in zip(model.lower, model.upper)]
        res = linprog(
            c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
            options={"primal_feasibility_tolerance": self.tol,
                     "dual_feasibility_tolerance": self.tol},
        )
        status = {0: LpStatus.OPTIMAL, 1: LpStatus.ITERATION_LIMIT,
                  2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}.get(res.status)
        if status is None:
            raise ConsecError(f"HiGHS failed: {res.message}")
        if status is not LpStatus.OPTIMAL:
            return LpSolution(status, iterations=int(getattr(res, "nit", 0)), solver=self.name)
        values = np.asarray(res.x, dtype=float)
        return LpSolution(LpStatus.OPTIMAL, model.objective_value(values), values,
                          int(res.nit), math.nan, self.name)


class AutoSolver(Solver):
    """Reference simplex up to ``max_vars`` columns, HiGHS beyond.

    The dense tableau needs one to two seconds around 1500 columns and grows
    quickly after that.
    """

    name = "auto"

    def __init__(self, max_vars: int = 1000):
        self.max_vars = max_vars

    def solve(self, model: LpModel) -> LpSolution:
        inner = SimplexSolver() if model.num_vars <= self.max_vars else HighsSolver()
        return inner.solve(model)


def get_solver(solver: str | Solver | None) -> Solver:
    if isinstance(solver, Solver):
        return solver
    return {None: SimplexSolver, "simplex": SimplexSolver, "highs": HighsSolver,
            "auto": AutoSolver}[solver]()


def solve(model: LpModel, solver: str | Solver | None = None) -> LpSolution:
    """Solve with the reference simplex unless another backend is named."""
    return get_solver(solver).solve(model)


# -- CPLEX LP text export -----------------------------------------------------


def _lp_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


def _lp_expr(coefs: dict[int, float], names: list[str]) -> str:
    if not coefs:
        return "0"
    parts = []
    for k, a in coefs.items():
        sign = "-" if a < 0 else "+"
        parts.append(f"{sign} {abs(a):.17g} {_lp_name(names[k])}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def to_lp_text(model: LpModel) -> str:
    """Render the model in CPLEX LP format (readable by HiGHS, GLPK, CBC)."""
    lines = [f"\\ {model.name}", "Maximize", f" obj: {_lp_expr(model.objective, model.names)}",
             "Subject To"]
    for row in model.rows:
        rel = "<=" if row.relation == "<=" else "="
        lines.append(f" {_lp_name(row.name)}: {_lp_expr(row.coefs, model.names)} {rel} {row.rhs:.17g}")
    lines.append("Bounds")
    for k, name in enumerate(model.names):
        lo, hi = model.lower[k], model.upper[k]
        lo_s = "-inf" if lo == -INF else f"{lo:.17g}"
        hi_s = "+inf" if hi == INF else f"{hi:.17g}"
        lines.append(f" {lo_s} <= {_lp_name(name)} <= {hi_s}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(model: LpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_lp_text(model))
