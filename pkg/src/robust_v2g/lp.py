"""Sparse LP container, an incremental builder and free-format MPS I/O."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

LE, GE, EQ = "L", "G", "E"
_SENSES = (LE, GE, EQ)


@dataclass(frozen=True)
class LPModel:
    """``min c @ x + c0`` subject to ``A @ x (sense) rhs`` and ``lo <= x <= hi``.

    ``var_index``/``con_index`` map block names to integer arrays of column or
    row positions.  Entries of -1 mark block cells that are not materialized.
    """

    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    c0: float = 0.0
    var_names: tuple = ()
    con_names: tuple = ()
    var_index: dict = field(default_factory=dict)
    con_index: dict = field(default_factory=dict)
    name: str = "lp"

    def __post_init__(self):
        m, n = self.A.shape
        if self.c.shape != (n,) or self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("column data does not match the constraint matrix")
        if self.rhs.shape != (m,) or self.sense.shape != (m,):
            raise ValueError("row data does not match the constraint matrix")
        if not set(np.unique(self.sense)) <= set(_SENSES):
            raise ValueError("unknown constraint sense")
        for arr in (self.c, self.rhs, self.A.data):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")
        if np.any(self.lo > self.hi) or np.any(self.lo == np.inf) or np.any(self.hi == -np.inf):
            raise ValueError("inconsistent variable bounds")

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_cons(self) -> int:
        return self.A.shape[0]

    def with_objective(self, c, c0: float = 0.0) -> "LPModel":
        return replace(self, c=np.asarray(c, dtype=float), c0=float(c0))

    def objective(self, x) -> float:
        return float(self.c @ x + self.c0)

    def row_activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def violation(self, x) -> float:
        """Largest absolute violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x)
        viol = np.zeros(self.n_cons)
        le = self.sense == LE
        ge = self.sense == GE
        eq = self.sense == EQ
        viol[le] = np.maximum(act[le] - self.rhs[le], 0)
        viol[ge] = np.maximum(self.rhs[ge] - act[ge], 0)
        viol[eq] = np.abs(act[eq] - self.rhs[eq])
        bound = np.maximum(np.maximum(self.lo - x, x - self.hi), 0)
        return float(max(viol.max(initial=0.0), bound.max(initial=0.0)))


class LPBuilder:
    """Accumulate variables and rows by name, then freeze into an ``LPModel``."""

    def __init__(self, name: str = "lp"):
        self.name = name
        self._c: list[float] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._vnames: list[str] = []
        self._cnames: list[str] = []
        self._sense: list[str] = []
        self._rhs: list[float] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self.c0 = 0.0
        self.var_index: dict[str, np.ndarray] = {}
        self.con_index: dict[str, np.ndarray] = {}
        self._families: dict[str, list[int]] = {}

    def add_var(self, name: str, lo: float = 0.0, hi: float = np.inf, cost: float = 0.0) -> int:
        self._c.append(float(cost))
        self._lo.append(float(lo))
        self._hi.append(float(hi))
        self._vnames.append(name)
        return len(self._c) - 1

    def add_block(self, block: str, shape, lo=0.0, hi=np.inf, cost=0.0, mask=None) -> np.ndarray:
        """Add an array of variables named ``block[i,j,...]``.

        Args:
            block: block name, also used as the ``var_index`` key.
            shape: int or tuple.
            lo, hi, cost: scalars or arrays broadcastable to ``shape``.
            mask: optional boolean array; cells where it is False are not
                created and get index -1.
        """
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        lo = np.broadcast_to(np.asarray(lo, float), shape)
        hi = np.broadcast_to(np.asarray(hi, float), shape)
        cost = np.broadcast_to(np.asarray(cost, float), shape)
        idx = np.full(shape, -1, dtype=np.int64)
        for cell in np.ndindex(*shape):
            if mask is not None and not mask[cell]:
                continue
            label = ",".join(str(i) for i in cell)
            idx[cell] = self.add_var(f"{block}[{label}]", lo[cell], hi[cell], cost[cell])
        self.var_index[block] = idx
        return idx

    def add_row(self, name: str, cols, vals, sense: str, rhs: float, family: str | None = None) -> int:
        if sense not in _SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        r = len(self._rhs)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        if np.any(cols < 0):
            raise ValueError(f"row {name} references an unmaterialized variable")
        self._rows.extend([r] * len(cols))
        self._cols.extend(cols.tolist())
        self._vals.extend(vals.tolist())
        self._cnames.append(name)
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        if family is not None:
            self._families.setdefault(family, []).append(r)
        return r

    def build(self) -> LPModel:
        n, m = len(self._c), len(self._rhs)
        A = sp.coo_matrix((self._vals, (self._rows, self._cols)), shape=(m, n)).tocsr()
        A.sum_duplicates()
        con_index = dict(self.con_index)
        for fam, rows in self._families.items():
            con_index.setdefault(fam, np.asarray(rows, dtype=np.int64))
        return LPModel(
            c=np.asarray(self._c, dtype=float),
            A=A,
            sense=np.asarray(self._sense, dtype="<U1"),
            rhs=np.asarray(self._rhs, dtype=float),
            lo=np.asarray(self._lo, dtype=float),
            hi=np.asarray(self._hi, dtype=float),
            c0=float(self.c0),
            var_names=tuple(self._vnames),
            con_names=tuple(self._cnames),
            var_index=dict(self.var_index),
            con_index=con_index,
            name=self.name,
        )


def _num(v) -> str:
    return repr(float(v))


def _mps_name(s: str) -> str:
    # free MPS splits on whitespace
    return s.replace(" ", "_")


def write_mps(model: LPModel, path) -> Path:
    """Write ``model`` in free-format MPS.

    The objective constant is stored as the RHS entry of the objective row
    with flipped sign, which is the convention most solvers read back.
    """
    path = Path(path)
    vnames = [_mps_name(v) for v in (model.var_names or [f"x{j}" for j in range(model.n_vars)])]
    cnames = [_mps_name(r) for r in (model.con_names or [f"r{i}" for i in range(model.n_cons)])]
    A = model.A.tocsc()
    out = [f"NAME {_mps_name(model.name)}", "ROWS", " N obj"]
    out += [f" {s} {n}" for s, n in zip(model.sense, cnames)]
    out.append("COLUMNS")
    for j in range(model.n_vars):
        if model.c[j] != 0:
            out.append(f" {vnames[j]} obj {_num(model.c[j])}")
        for p in range(A.indptr[j], A.indptr[j + 1]):
            out.append(f" {vnames[j]} {cnames[A.indices[p]]} {_num(A.data[p])}")
    out.append("RHS")
    if model.c0 != 0:
        out.append(f" rhs obj {_num(-model.c0)}")
    for i in np.flatnonzero(model.rhs):
        out.append(f" rhs {cnames[i]} {_num(model.rhs[i])}")
    out.append("BOUNDS")
    for j in range(model.n_vars):
        lo, hi = model.lo[j], model.hi[j]
        name = vnames[j]
        if lo == hi:
            out.append(f" FX bnd {name} {_num(lo)}")
            continue
        if lo == -np.inf and hi == np.inf:
            out.append(f" FR bnd {name}")
            continue
        if lo == -np.inf:
            out.append(f" MI bnd {name}")
        elif lo != 0:
            out.append(f" LO bnd {name} {_num(lo)}")
        if hi != np.inf:
            out.append(f" UP bnd {name} {_num(hi)}")
    out.append("ENDATA")
    path.write_text("\n".join(out) + "\n")
    return path


def read_mps(path) -> LPModel:
    """Read a free-format MPS file written by ``write_mps`` (or compatible)."""
    section = None
    obj_row = None
    row_pos: dict[str, int] = {}
    senses: list[str] = []
    cnames: list[str] = []
    col_pos: dict[str, int] = {}
    vnames: list[str] = []
    cost: dict[int, float] = {}
    rows, cols, vals = [], [], []
    rhs: dict[int, float] = {}
    c0 = 0.0
    lo: dict[int, float] = {}
    hi: dict[int, float] = {}
    name = "lp"
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        if not raw[0].isspace():
            head = line.split()
            section = head[0].upper()
            if section == "NAME" and len(head) > 1:
                name = head[1]
            if section == "ENDATA":
                break
            continue
        tok = line.split()
        try:
            if section == "ROWS":
                s, r = tok[0].upper(), tok[1]
                if s == "N":
                    obj_row = obj_row or r
                    continue
                row_pos[r] = len(senses)
                senses.append(s)
                cnames.append(r)
            elif section == "COLUMNS":
                if "MARKER" in tok[1:]:
                    raise ValueError("integer markers are not supported")
                cname = tok[0]
                if cname not in col_pos:
                    col_pos[cname] = len(vnames)
                    vnames.append(cname)
                j = col_pos[cname]
                for r, v in zip(tok[1::2], tok[2::2]):
                    if r == obj_row:
                        cost[j] = float(v)
                    else:
                        rows.append(row_pos[r])
                        cols.append(j)
                        vals.append(float(v))
            elif section == "RHS":
                pairs = tok[1:] if len(tok) % 2 == 1 else tok
                for r, v in zip(pairs[0::2], pairs[1::2]):
                    if r == obj_row:
                        c0 = -float(v)
                    else:
                        rhs[row_pos[r]] = float(v)
            elif section == "BOUNDS":
                kind, cname = tok[0].upper(), tok[2]
                j = col_pos[cname]
                val = float(tok[3]) if len(tok) > 3 else None
                if kind == "UP":
                    hi[j] = val
                elif kind == "LO":
                    lo[j] = val
                elif kind == "FX":
                    lo[j] = hi[j] = val
                elif kind == "FR":
                    lo[j], hi[j] = -np.inf, np.inf
                elif kind == "MI":
                    lo[j] = -np.inf
                elif kind == "PL":
                    hi[j] = np.inf
                else:
                    raise ValueError(f"unsupported bound type {kind}")
            elif section == "RANGES":
                raise ValueError("RANGES section is not supported")
        except (IndexError, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: cannot parse MPS line {raw!r} ({exc})") from exc
    n, m = len(vnames), len(senses)
    c = np.zeros(n)
    for j, v in cost.items():
        c[j] = v
    b = np.zeros(m)
    for i, v in rhs.items():
        b[i] = v
    lo_arr = np.zeros(n)
    hi_arr = np.full(n, np.inf)
    for j, v in lo.items():
        lo_arr[j] = v
    for j, v in hi.items():
        hi_arr[j] = v
    A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsr()
    return LPModel(
        c=c, A=A, sense=np.asarray(senses, dtype="<U1"), rhs=b, lo=lo_arr, hi=hi_arr, c0=c0,
        var_names=tuple(vnames), con_names=tuple(cnames), name=name,
    )
