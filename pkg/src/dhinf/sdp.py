"""Conic-program facade isolating all LMI solving.

Every matrix-inequality condition assembled elsewhere in the package goes
through :class:`ConicProgram`. Strict inequalities are represented with a
uniform margin: ``M > 0`` becomes ``M >= eps*I`` and ``M < 0`` becomes
``M <= -eps*I``. The backend is cvxpy with an interior-point SDP solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

__all__ = [
    "ConicProgram",
    "ConicSolution",
    "SolverFailure",
    "InfeasibleProblem",
    "check_feasible",
    "default_solver",
    "STRICT_MARGIN",
]

#: margin substituted for strict LMIs, uniform across all assembled conditions
STRICT_MARGIN = 1e-7

_SOLVER_ORDER = ("CLARABEL", "CVXOPT", "SCS")


class SolverFailure(RuntimeError):
    """Backend did not converge or errored."""


class InfeasibleProblem(RuntimeError):
    """Problem certified infeasible by the backend."""


def default_solver():
    installed = cp.installed_solvers()
    for s in _SOLVER_ORDER:
        if s in installed:
            return s
    raise SolverFailure("no SDP-capable solver installed")


@dataclass
class ConicSolution:
    status: str  # optimal | infeasible | numerical-failure
    values: dict
    objective: float | None
    max_violation: float


@dataclass
class _LMIRecord:
    tag: str
    size: int
    sense: str  # ">=" or "<="


class ConicProgram:
    """Semidefinite feasibility/minimization problem builder.

    Variables are created through :meth:`sym`, :meth:`mat` and
    :meth:`scalar` and referenced by name. PSD/NSD constraints accept any
    affine cvxpy expression. Convex quadratic objective terms (used by the
    ADMM proximal step) are added with :meth:`add_quadratic`; the backend
    reformulates them via an epigraph second-order cone internally.
    """

    def __init__(self, eps: float = STRICT_MARGIN):
        self.eps = float(eps)
        self.variables: dict[str, cp.Variable] = {}
        self.constraints: list = []
        self._psd_exprs: list = []  # (expr, sense, tag) for violation checks
        self._lmi_log: list[_LMIRecord] = []
        self._objective = None
        self._quad_terms: list = []

    # -- variables ---------------------------------------------------------
    def _register(self, name, var):
        if name in self.variables:
            raise ValueError(f"duplicate variable name {name!r}")
        self.variables[name] = var
        return var

    def sym(self, name, n):
        return self._register(name, cp.Variable((n, n), symmetric=True, name=name))

    def mat(self, name, shape):
        return self._register(name, cp.Variable(shape, name=name))

    def scalar(self, name, nonneg=False):
        return self._register(name, cp.Variable(nonneg=nonneg, name=name))

    # -- constraints -------------------------------------------------------
    @staticmethod
    def _as_matrix(expr):
        if np.isscalar(expr) or (hasattr(expr, "shape") and expr.shape == ()):
            return cp.reshape(expr, (1, 1), order="F")
        return expr

    def psd(self, expr, strict=True, tag="psd"):
        """Add ``expr >= eps*I`` (strict) or ``expr >= 0``."""
        expr = self._as_matrix(expr)
        n = expr.shape[0]
        shift = self.eps if strict else 0.0
        self.constraints.append(expr >> shift * np.eye(n))
        self._psd_exprs.append((expr, 1.0, shift, tag))
        self._lmi_log.append(_LMIRecord(tag, n, ">="))

    def nsd(self, expr, strict=True, tag="nsd"):
        """Add ``expr <= -eps*I`` (strict) or ``expr <= 0``."""
        expr = self._as_matrix(expr)
        n = expr.shape[0]
        shift = self.eps if strict else 0.0
        self.constraints.append(expr << -shift * np.eye(n))
        self._psd_exprs.append((expr, -1.0, shift, tag))
        self._lmi_log.append(_LMIRecord(tag, n, "<="))

    def eq(self, lhs, rhs):
        self.constraints.append(lhs == rhs)

    # -- objective ---------------------------------------------------------
    def minimize(self, expr):
        self._objective = expr

    def add_quadratic(self, expr):
        """Add a convex quadratic term (e.g. ``cp.sum_squares``) to the objective."""
        self._quad_terms.append(expr)

    # -- bookkeeping -------------------------------------------------------
    @property
    def lmi_log(self):
        """(tag, size, sense) triples of all added matrix inequalities."""
        return [(r.tag, r.size, r.sense) for r in self._lmi_log]

    def variable_count(self):
        return sum(int(np.prod(v.shape)) if v.shape else 1 for v in self.variables.values())

    def scalar_variable_count(self):
        """Free scalars, counting symmetric matrices by their upper triangle."""
        total = 0
        for v in self.variables.values():
            if not v.shape:
                total += 1
            elif v.is_symmetric():
                n = v.shape[0]
                total += n * (n + 1) // 2
            else:
                total += int(np.prod(v.shape))
        return total

    # -- solve -------------------------------------------------------------
    def _cvx_problem(self):
        obj = self._objective if self._objective is not None else 0.0
        for q in self._quad_terms:
            obj = obj + q
        return cp.Problem(cp.Minimize(obj), self.constraints)

    def solve(self, tol=1e-8, solver=None, warm=None) -> ConicSolution:
        solver = solver or default_solver()
        prob = self._cvx_problem()
        kwargs = {}
        if solver == "CLARABEL":
            kwargs = {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol}
        elif solver == "SCS":
            kwargs = {"eps": tol}
        try:
            prob.solve(solver=solver, **kwargs)
        except cp.error.SolverError:
            return ConicSolution("numerical-failure", {}, None, np.inf)
        if prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            values = {n: (np.asarray(v.value) if v.shape else float(v.value))
                      for n, v in self.variables.items()}
            viol = self._max_violation()
            return ConicSolution("optimal", values, float(prob.value), viol)
        if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return ConicSolution("infeasible", {}, None, np.inf)
        return ConicSolution("numerical-failure", {}, None, np.inf)

    def _max_violation(self):
        worst = 0.0
        for expr, sign, shift, _tag in self._psd_exprs:
            val = np.asarray(expr.value, dtype=float)
            if val.size == 0:
                continue
            val = 0.5 * (val + val.T)
            w = np.linalg.eigvalsh(sign * val)
            worst = max(worst, max(0.0, shift - w.min()))
        return worst

    def evaluate_at(self, point):
        """Evaluate all PSD/NSD constraint expressions at a variable assignment.

        Returns a list of (tag, symmetric matrix, sense) with sense +1 for
        ``>=`` constraints and -1 for ``<=``.
        """
        old = {n: v.value for n, v in self.variables.items()}
        try:
            for n, v in self.variables.items():
                if n not in point:
                    raise ValueError(f"missing value for variable {n!r}")
                v.value = point[n]
            out = []
            for expr, sign, _shift, tag in self._psd_exprs:
                val = np.asarray(expr.value, dtype=float)
                out.append((tag, 0.5 * (val + val.T), sign))
            return out
        finally:
            for n, v in self.variables.items():
                v.value = old[n]

    def dump(self, path, solver="SCS"):
        """Write the canonicalized sparse conic data (A, b, c, cones) as JSON.

        Debugging aid: this is the standard sparse form handed to first-order
        conic solvers.
        """
        data, _, _ = self._cvx_problem().get_problem_data(solver)
        a = data["A"].tocoo()
        payload = {
            "c": np.asarray(data["c"]).ravel().tolist(),
            "b": np.asarray(data["b"]).ravel().tolist(),
            "A": {
                "shape": list(a.shape),
                "row": a.row.tolist(),
                "col": a.col.tolist(),
                "data": a.data.tolist(),
            },
            "dims": str(data.get("dims")),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)


def check_feasible(program: ConicProgram, point: dict, tol: float):
    """Check all matrix inequalities of ``program`` at a given point.

    A ``>= shift*I`` constraint is satisfied when ``lambda_min >= -tol``
    of the shifted expression; the worst violation over all constraints is
    returned alongside the verdict.
    """
    worst = 0.0
    for tag, mat, sign in program.evaluate_at(point):
        if mat.size == 0:
            continue
        w = np.linalg.eigvalsh(sign * mat)
        worst = max(worst, max(0.0, -w.min()))
    return worst <= tol, worst


def check_matrices(matrices, tol: float):
    """Feasibility of bare (matrix, sense) pairs; sense +1 means PSD."""
    worst = 0.0
    for mat, sign in matrices:
        m = np.asarray(mat, dtype=float)
        if m.size == 0:
            continue
        m = 0.5 * (m + m.T)
        w = np.linalg.eigvalsh(sign * m)
        worst = max(worst, max(0.0, -w.min()))
    return worst <= tol, worst
