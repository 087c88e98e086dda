"""Reference LP solutions from scipy's HiGHS, independent of the bundled simplex."""

import numpy as np
from scipy.optimize import linprog


def reference(model):
    A = model.A.toarray()
    le, ge, eq = model.sense == "L", model.sense == "G", model.sense == "E"
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([model.rhs[le], -model.rhs[ge]])
    bounds = [(None if lo == -np.inf else lo, None if hi == np.inf else hi) for lo, hi in zip(model.lo, model.hi)]
    res = linprog(
        model.c, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
        A_eq=A[eq] if eq.any() else None, b_eq=model.rhs[eq] if eq.any() else None,
        bounds=bounds, method="highs",
    )
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "other")
    return status, (res.fun + model.c0 if res.status == 0 else None)
