"""Three-view cardinality structures and the constraint systems they induce.

A structure over ``p`` coordinates has an overall budget on the whole
index set plus two *views*: lists of groups that are pairwise disjoint
within each view.  Groups from different views may overlap, so every
coordinate sits in at most three constraint rows.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class StructureError(ValueError):
    """Raised when a structure fails validation.

    ``violations`` holds the individual messages produced by
    :func:`validate_structure`.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Group:
    """A set of coordinate indices sharing one cardinality budget."""

    indices: tuple[int, ...]
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "budget", int(self.budget))

    def __len__(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict:
        return {"indices": list(self.indices), "budget": self.budget}


def _as_groups(groups: Iterable) -> tuple[Group, ...]:
    out = []
    for g in groups:
        if isinstance(g, Group):
            out.append(g)
        elif isinstance(g, dict):
            out.append(Group(g["indices"], g["budget"]))
        else:
            indices, budget = g
            out.append(Group(indices, budget))
    return tuple(out)


@dataclass(frozen=True)
class TvcsStructure:
    """Overall budget plus two views of disjoint groups.

    Parameters
    ----------
    dimension : int
        Number of coordinates ``p``.
    overall_budget : int, optional
        Budget on the full index set.  Defaults to ``p`` (inactive).
    view1, view2 : sequence of Group
        Groups may also be given as ``(indices, budget)`` pairs or dicts.

    Construction only normalizes types; call :func:`validate_structure`
    to check the invariants.
    """

    dimension: int
    overall_budget: int | None = None
    view1: tuple[Group, ...] = field(default_factory=tuple)
    view2: tuple[Group, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "dimension", int(self.dimension))
        ob = self.dimension if self.overall_budget is None else int(self.overall_budget)
        object.__setattr__(self, "overall_budget", ob)
        object.__setattr__(self, "view1", _as_groups(self.view1))
        object.__setattr__(self, "view2", _as_groups(self.view2))

    @property
    def p(self) -> int:
        return self.dimension

    @property
    def n_groups(self) -> int:
        """Number of constraint rows, counting the overall row."""
        return 1 + len(self.view1) + len(self.view2)

    @classmethod
    def matrix_view(cls, n_rows: int, n_cols: int, row_budgets, col_budgets,
                    overall: int | None = None) -> "TvcsStructure":
        """Structure on a row-major ``n_rows x n_cols`` matrix.

        Rows become view1 groups and columns become view2 groups, so
        coordinate ``k`` is cell ``(k // n_cols, k % n_cols)``.  Scalar
        budgets are broadcast.
        """
        rb = np.broadcast_to(np.asarray(row_budgets, dtype=np.int64), (n_rows,))
        cb = np.broadcast_to(np.asarray(col_budgets, dtype=np.int64), (n_cols,))
        idx = np.arange(n_rows * n_cols).reshape(n_rows, n_cols)
        view1 = [Group(idx[r], rb[r]) for r in range(n_rows)]
        view2 = [Group(idx[:, c], cb[c]) for c in range(n_cols)]
        return cls(n_rows * n_cols, overall, view1, view2)

    def with_budgets(self, overall: int, view1: Sequence[int], view2: Sequence[int]) -> "TvcsStructure":
        """Same groups, new budgets."""
        v1 = [Group(g.indices, b) for g, b in zip(self.view1, view1, strict=True)]
        v2 = [Group(g.indices, b) for g, b in zip(self.view2, view2, strict=True)]
        return TvcsStructure(self.dimension, overall, v1, v2)

    def doubled(self) -> "TvcsStructure":
        """Every budget doubled, capped at the group size (``p`` for the overall row)."""
        return self.with_budgets(
            min(2 * self.overall_budget, self.dimension),
            [min(2 * g.budget, len(g)) for g in self.view1],
            [min(2 * g.budget, len(g)) for g in self.view2],
        )

    def restricted(self, keep_view1: bool = True, keep_view2: bool = True,
                   keep_overall: bool = True) -> "TvcsStructure":
        """Degenerate structure with some constraints dropped."""
        return TvcsStructure(
            self.dimension,
            self.overall_budget if keep_overall else self.dimension,
            self.view1 if keep_view1 else (),
            self.view2 if keep_view2 else (),
        )

    def to_dict(self) -> dict:
        return {
            "p": self.dimension,
            "overall": self.overall_budget,
            "view1": [g.to_dict() for g in self.view1],
            "view2": [g.to_dict() for g in self.view2],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TvcsStructure":
        if "p" not in d:
            raise StructureError(["missing field 'p'"])
        try:
            return cls(d["p"], d.get("overall"), d.get("view1", ()), d.get("view2", ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise StructureError([f"malformed structure document: {exc}"]) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TvcsStructure":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "TvcsStructure":
        return cls.from_json(Path(path).read_text())


def validate_structure(structure: TvcsStructure) -> list[str]:
    """List every invariant violation; an empty list means the structure is valid.

    Examples
    --------
    >>> s = TvcsStructure(4, view1=[([0, 1], 1), ([1, 2], 1)])
    >>> validate_structure(s)
    ['view1 groups 0 and 1 overlap at index 1']
    """
    out = []
    p = structure.dimension
    if p < 1:
        out.append(f"dimension must be positive, got {p}")
    if structure.overall_budget < 0:
        out.append(f"overall budget must be non-negative, got {structure.overall_budget}")
    for name, view in (("view1", structure.view1), ("view2", structure.view2)):
        owner: dict[int, int] = {}
        reported: set[tuple[int, int]] = set()
        for gi, g in enumerate(view):
            if len(g.indices) == 0:
                out.append(f"{name} group {gi} is empty")
            if g.budget < 0:
                out.append(f"{name} group {gi} has negative budget {g.budget}")
            if any(b <= a for a, b in zip(g.indices, g.indices[1:])):
                out.append(f"{name} group {gi} indices are not strictly increasing")
            for i in g.indices:
                if i < 0 or i >= p:
                    out.append(f"index {i} out of range")
                    continue
                first = owner.setdefault(i, gi)
                if first != gi and (first, gi) not in reported:
                    reported.add((first, gi))
                    out.append(f"{name} groups {first} and {gi} overlap at index {i}")
    return out


def ensure_valid(structure: TvcsStructure) -> None:
    violations = validate_structure(structure)
    if violations:
        raise StructureError(violations)


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Row bounds ``s`` and, per coordinate, its view1/view2 row.

    ``view1_of[i]`` (resp. ``view2_of[i]``) is the row of ``A`` holding
    coordinate ``i`` in that view, or -1.  Row 0 is the overall row.
    The dense/sparse matrix is materialized on demand via :attr:`A`.
    """

    s: np.ndarray
    view1_of: np.ndarray
    view2_of: np.ndarray

    @property
    def p(self) -> int:
        return self.view1_of.size

    @property
    def n_rows(self) -> int:
        return self.s.size

    @property
    def A(self) -> sp.csr_matrix:
        p = self.p
        cols = [np.arange(p)]
        rows = [np.zeros(p, dtype=np.int64)]
        for of in (self.view1_of, self.view2_of):
            m = of >= 0
            cols.append(np.flatnonzero(m))
            rows.append(of[m])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        return sp.csr_matrix((np.ones(r.size, dtype=np.int64), (r, c)), shape=(self.n_rows, p))

    def row_counts(self, x) -> np.ndarray:
        """``A @ x`` computed from the index arrays."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(self.n_rows)
        out[0] = x.sum()
        for of in (self.view1_of, self.view2_of):
            m = of >= 0
            out += np.bincount(of[m], weights=x[m], minlength=self.n_rows)
        return out

    def column_sums(self, y) -> np.ndarray:
        """``A.T @ y`` computed from the index arrays."""
        y = np.asarray(y, dtype=float)
        out = np.full(self.p, y[0])
        for of in (self.view1_of, self.view2_of):
            m = of >= 0
            out[m] += y[of[m]]
        return out


def build_constraint_system(structure: TvcsStructure) -> ConstraintSystem:
    """Materialize bounds and row membership; rows are ordered overall, view1, view2."""
    ensure_valid(structure)
    p = structure.dimension
    s = [structure.overall_budget]
    view1_of = np.full(p, -1, dtype=np.int64)
    view2_of = np.full(p, -1, dtype=np.int64)
    row = 1
    for view, of in ((structure.view1, view1_of), (structure.view2, view2_of)):
        for g in view:
            of[list(g.indices)] = row
            s.append(g.budget)
            row += 1
    s = np.asarray(s, dtype=np.int64)
    for a in (s, view1_of, view2_of):
        a.setflags(write=False)
    return ConstraintSystem(s, view1_of, view2_of)


def is_feasible_support(system: ConstraintSystem, x) -> bool:
    """True iff the binary vector ``x`` satisfies ``A x <= s``."""
    x = np.asarray(x)
    if x.shape != (system.p,):
        raise ValueError(f"support has shape {x.shape}, expected ({system.p},)")
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("support must be a 0/1 vector")
    return bool(np.all(system.row_counts(x) <= system.s))


def _colex_ranks(combos: np.ndarray, binom: np.ndarray) -> np.ndarray:
    # rank of each sorted combination in colexicographic order
    k = combos.shape[1]
    r = np.zeros(combos.shape[0], dtype=np.int64)
    for j in range(k):
        r += binom[combos[:, j], j + 1]
    return r


def _combos(n: int, k: int, binom: np.ndarray) -> np.ndarray:
    c = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64).reshape(-1, k)
    out = np.empty_like(c)
    out[_colex_ranks(c, binom)] = c
    return out


def check_totally_unimodular(M, size_cap: int) -> bool:
    """Exhaustive TU test on all square submatrices up to ``size_cap``.

    Determinants are built in exact integer arithmetic by cofactor
    expansion along the first chosen row, reusing all determinants of
    the previous order, so each order costs one gather per column
    position.  Returns at the first order with a determinant outside
    {-1, 0, 1}.

    Raises
    ------
    ValueError
        If ``M`` has an entry outside {-1, 0, 1}.
    """
    M = np.asarray(M.toarray() if sp.issparse(M) else M)
    if M.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if not np.all(np.isin(M, (-1, 0, 1))):
        raise ValueError("entries must be in {-1, 0, 1}")
    if size_cap < 1:
        raise ValueError("size_cap must be positive")
    M = M.astype(np.int64)
    m, n = M.shape
    kmax = min(m, n, size_cap)
    top = max(m, n) + 1
    binom = np.array([[comb(a, b) for b in range(kmax + 2)] for a in range(top)], dtype=np.int64)

    prev = M  # order-1 determinants, indexed by (row combo rank, col combo rank)
    for k in range(2, kmax + 1):
        R = _combos(m, k, binom)
        C = _combos(n, k, binom)
        sub_r = _colex_ranks(R[:, 1:], binom)
        det = np.zeros((R.shape[0], C.shape[0]), dtype=np.int64)
        for j in range(k):
            rest = np.delete(C, j, axis=1)
            sub_c = _colex_ranks(rest, binom)
            term = M[R[:, 0][:, None], C[:, j][None, :]] * prev[sub_r[:, None], sub_c[None, :]]
            det += term if j % 2 == 0 else -term
        if np.any(np.abs(det) > 1):
            return False
        prev = det
    return True
