"""Explicit finite Markov chains: SCCs, invariant distributions, absorption.

Probabilities are either all ``Fraction`` (exact mode) or floats.  Exact
solves run sparse Gaussian elimination over rationals; once a system has more
unknowns than ``exact_cap`` the float path (sparse LU with partial pivoting
plus a refinement step) takes over.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_EXACT_CAP = 2000
FLOAT_RESIDUAL = 1e-12


@dataclass
class FiniteChain:
    nodes: list
    rows: list[list[tuple[int, object]]]
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {v: k for k, v in enumerate(self.nodes)}
        if len(self.index) != len(self.nodes):
            raise ValueError("duplicate chain nodes")
        if len(self.rows) != len(self.nodes):
            raise ValueError("one transition row per node is required")
        for k, row in enumerate(self.rows):
            if not row:
                raise ValueError(f"node {self.nodes[k]!r} has no outgoing transition")

    @classmethod
    def from_mapping(cls, trans: Mapping[Hashable, Iterable[tuple[Hashable, object]]], nodes: Sequence | None = None):
        """Build from ``{node: [(target, prob), ...]}``; repeated targets are summed."""
        order = list(nodes) if nodes is not None else list(trans)
        seen = set(order)
        for v in list(trans):
            for t, _ in trans[v]:
                if t not in seen:
                    seen.add(t)
                    order.append(t)
        idx = {v: k for k, v in enumerate(order)}
        rows = []
        for v in order:
            acc: dict[int, object] = {}
            for t, p in trans.get(v, ()):
                acc[idx[t]] = acc.get(idx[t], 0) + p
            rows.append([(j, p) for j, p in acc.items() if p != 0])
        return cls(order, rows)

    @property
    def exact(self) -> bool:
        return all(isinstance(p, (Fraction, int)) for row in self.rows for _, p in row)

    def __len__(self):
        return len(self.nodes)

    def successors(self, k: int) -> list[int]:
        return [j for j, _ in self.rows[k]]

    def row_sum(self, k: int):
        return sum(p for _, p in self.rows[k])


@dataclass
class SccDecomposition:
    components: list[tuple[int, ...]]
    is_bottom: list[bool]
    component_of: list[int]

    def bottoms(self) -> list[tuple[int, ...]]:
        return [c for c, b in zip(self.components, self.is_bottom) if b]


def tarjan(n: int, succ) -> list[list[int]]:
    """Iterative Tarjan; components come out in reverse topological order."""
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, iter(succ(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                out.append(sorted(comp))
    return out


def scc_decomposition(chain: FiniteChain) -> SccDecomposition:
    comps = tarjan(len(chain), chain.successors)
    comp_of = [0] * len(chain)
    for c, members in enumerate(comps):
        for v in members:
            comp_of[v] = c
    bottom = []
    for c, members in enumerate(comps):
        bottom.append(all(comp_of[w] == c for v in members for w in chain.successors(v)))
    return SccDecomposition([tuple(m) for m in comps], bottom, comp_of)


# --- linear algebra ------------------------------------------------------------

def solve_exact(rows: list[dict[int, Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Solve a square sparse rational system by Gaussian elimination.

    Rows are eliminated in order, so systems whose unknowns are numbered along
    a band (as truncated counter chains are) keep their fill-in small.
    """
    n = len(rows)
    a = [dict(r) for r in rows]
    b = list(rhs)
    # column -> rows (below the diagonal) that still reference it
    users: list[set[int]] = [set() for _ in range(n)]
    for r, row in enumerate(a):
        for c in row:
            users[c].add(r)
    for k in range(n):
        piv_row = None
        if a[k].get(k, 0) != 0:
            piv_row = k
        else:
            for r in sorted(users[k]):
                if r > k and a[r].get(k, 0) != 0:
                    piv_row = r
                    break
        if piv_row is None:
            raise np.linalg.LinAlgError("singular rational system")
        if piv_row != k:
            a[k], a[piv_row] = a[piv_row], a[k]
            b[k], b[piv_row] = b[piv_row], b[k]
            for r in (k, piv_row):
                for c in a[r]:
                    users[c].add(r)
        pivot = a[k][k]
        prow = a[k]
        for r in sorted(users[k]):
            if r <= k:
                continue
            f = a[r].get(k, 0)
            if f == 0:
                continue
            f = f / pivot
            row = a[r]
            for c, v in prow.items():
                nv = row.get(c, 0) - f * v
                if nv == 0:
                    row.pop(c, None)
                else:
                    if c not in row:
                        users[c].add(r)
                    row[c] = nv
            b[r] -= f * b[k]
    x = [Fraction(0)] * n
    for k in range(n - 1, -1, -1):
        s = b[k]
        for c, v in a[k].items():
            if c != k:
                s -= v * x[c]
        x[k] = s / a[k][k]
    return x


def solve_float(rows: list[dict[int, float]], rhs: Sequence[float]) -> np.ndarray:
    n = len(rows)
    if n == 0:
        return np.zeros(0)
    data, ri, ci = [], [], []
    for r, row in enumerate(rows):
        for c, v in row.items():
            ri.append(r)
            ci.append(c)
            data.append(float(v))
    m = sp.csc_matrix((data, (ri, ci)), shape=(n, n))
    b = np.asarray([float(v) for v in rhs])
    if n <= 400:
        dense = m.toarray()
        x = np.linalg.solve(dense, b)
        x += np.linalg.solve(dense, b - dense @ x)
    else:
        lu = spla.splu(m)
        x = lu.solve(b)
        x += lu.solve(b - m @ x)
    return x


# --- chain queries -------------------------------------------------------------

def _backward_reach(chain: FiniteChain, seeds: Iterable[int]) -> set[int]:
    pred: list[list[int]] = [[] for _ in range(len(chain))]
    for v, row in enumerate(chain.rows):
        for w, _ in row:
            pred[w].append(v)
    seen = set(seeds)
    q = deque(seen)
    while q:
        w = q.popleft()
        for v in pred[w]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return seen


def absorption_values(chain: FiniteChain, values: Mapping[int, object], exact: bool | None = None,
                      exact_cap: int = DEFAULT_EXACT_CAP) -> list:
    """Least solution of x = P x with x fixed on the absorbing nodes ``values``.

    Nodes that cannot reach a node of positive value get 0; the remaining
    system is non-singular.  Returns a list indexed like ``chain.nodes``.
    """
    n = len(chain)
    if exact is None:
        exact = chain.exact and all(isinstance(v, (Fraction, int)) for v in values.values())
    zero = Fraction(0) if exact else 0.0
    x: list = [zero] * n
    positive = [k for k, v in values.items() if v > 0]
    live = _backward_reach(chain, positive)
    unknown = [k for k in range(n) if k in live and k not in values]
    for k, v in values.items():
        x[k] = Fraction(v) if exact else float(v)
    if not unknown:
        return x
    pos = {k: j for j, k in enumerate(unknown)}
    use_exact = exact and len(unknown) <= exact_cap
    rows, rhs = [], []
    for k in unknown:
        row = {pos[k]: Fraction(1) if use_exact else 1.0}
        b = Fraction(0) if use_exact else 0.0
        for w, p in chain.rows[k]:
            p = p if use_exact else float(p)
            if w in values:
                b += p * (values[w] if use_exact else float(values[w]))
            elif w in pos:
                row[pos[w]] = row.get(pos[w], 0) - p
        rows.append(row)
        rhs.append(b)
    sol = solve_exact(rows, rhs) if use_exact else solve_float(rows, rhs)
    for k, v in zip(unknown, sol):
        x[k] = v if use_exact else min(1.0, max(0.0, float(v))) if _is_probability(values) else float(v)
    return x


def _is_probability(values: Mapping) -> bool:
    return all(0 <= v <= 1 for v in values.values())


def reach_probability(chain: FiniteChain, targets: Iterable, start, exact_cap: int = DEFAULT_EXACT_CAP):
    """Probability of ever reaching ``targets`` (node identifiers) from ``start``."""
    tset = {chain.index[t] for t in targets}
    s = chain.index[start]
    if s in tset:
        return Fraction(1) if chain.exact else 1.0
    one = Fraction(1) if chain.exact else 1.0
    vals = absorption_values(chain, {k: one for k in tset}, exact_cap=exact_cap)
    return vals[s]


def reach_probabilities(chain: FiniteChain, targets: Iterable, exact_cap: int = DEFAULT_EXACT_CAP) -> list:
    tset = {chain.index[t] for t in targets}
    one = Fraction(1) if chain.exact else 1.0
    return absorption_values(chain, {k: one for k in tset}, exact_cap=exact_cap)


def stationary_distribution(chain: FiniteChain, component: Sequence[int], exact_cap: int = DEFAULT_EXACT_CAP) -> dict:
    """Invariant distribution of an irreducible closed component (node indices)."""
    comp = list(component)
    inside = set(comp)
    for v in comp:
        for w in chain.successors(v):
            if w not in inside:
                raise ValueError("component is not closed")
    reach = {comp[0]}
    q = deque(reach)
    while q:
        v = q.popleft()
        for w in chain.successors(v):
            if w not in reach:
                reach.add(w)
                q.append(w)
    back = _backward_reach(_restrict(chain, comp), [comp.index(comp[0])])
    if len(reach) != len(comp) or len(back) != len(comp):
        raise ValueError("component is not irreducible")
    n = len(comp)
    pos = {v: j for j, v in enumerate(comp)}
    exact = chain.exact and n <= exact_cap
    one = Fraction(1) if exact else 1.0
    # unknowns mu_j; equations: for columns 1..n-1 mu (I - P)[:, c] = 0, plus sum = 1
    cols: list[dict[int, object]] = [dict() for _ in range(n)]
    for v in comp:
        j = pos[v]
        for w, p in chain.rows[v]:
            p = p if exact else float(p)
            c = pos[w]
            cols[c][j] = cols[c].get(j, 0) - p
        cols[j][j] = cols[j].get(j, 0) + one
    rows = [cols[c] for c in range(1, n)] + [{j: one for j in range(n)}]
    rhs = [0 * one] * (n - 1) + [one]
    sol = solve_exact(rows, rhs) if exact else solve_float(rows, rhs)
    mu = {comp[j]: sol[j] for j in range(n)}
    if not exact:
        vec = np.array([mu[v] for v in comp])
        res = np.zeros(n)
        for v in comp:
            for w, p in chain.rows[v]:
                res[pos[w]] += mu[v] * float(p)
        if np.max(np.abs(res - vec)) > FLOAT_RESIDUAL * max(1, n):
            raise ArithmeticError("stationary residual exceeds tolerance")
    return mu


def _restrict(chain: FiniteChain, comp: Sequence[int]) -> FiniteChain:
    pos = {v: j for j, v in enumerate(comp)}
    rows = [[(pos[w], p) for w, p in chain.rows[v] if w in pos] or [(pos[v], 1)] for v in comp]
    return FiniteChain(list(range(len(comp))), rows)
