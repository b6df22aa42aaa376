"""Multi-index set algebra, full-tensor pseudospectral projections, and the
adaptive sparse pseudospectral surrogate builder.

Multi-indices live in N dimensions but are stored sparsely as tuples of
``(dim, degree)`` pairs with positive degrees, sorted by dimension.  This keeps
index sets for N ~ 1000 cheap.  All quadrature is Gauss-Legendre on
Xi = [-1/2, 1/2], for which a projection of order k recovers Legendre
coefficients up to degree k, so the polynomial degree set of an admissible
index collection equals the collection itself and every accepted multi-index
contributes exactly one basis polynomial.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csc_matrix

from thermtomo.polybasis import gauss_legendre_rule, legendre_table, legendre_table_deriv

SparseIndex = tuple  # tuple[(dim, degree), ...], degrees > 0, sorted by dim

MAX_SET_SIZE = 100_000_000

FORMAT_VERSION = "thermtomo-surrogate-1"

__all__ = [
    "MultiIndexSet",
    "Surrogate",
    "SurrogateGroup",
    "CachedForward",
    "ForwardEvaluationError",
    "sparsify",
    "densify",
    "total_degree",
    "full_tensor_set",
    "total_order_set",
    "total_order_cardinality",
    "is_admissible",
    "backward_neighborhood",
    "admissible_forward_neighbors",
    "tensor_projection",
    "difference_projection",
    "epsilon_norm",
    "adaptive_spam",
    "build_from_index_set",
    "surrogate_eval",
    "surrogate_jacobian",
    "surrogate_truncate",
    "save_surrogate",
    "load_surrogate",
]


# ---------------------------------------------------------------------------
# multi-index helpers
# ---------------------------------------------------------------------------

def sparsify(dense: Sequence[int]) -> SparseIndex:
    """Canonical sparse key for a dense multi-index."""
    key = []
    for dim, deg in enumerate(dense):
        if deg < 0:
            raise ValueError("multi-index entries must be nonnegative")
        if deg > 0:
            key.append((dim, int(deg)))
    return tuple(key)


def densify(key: SparseIndex, dim: int) -> tuple:
    """Dense tuple of length ``dim`` for a sparse key."""
    out = [0] * dim
    for d, g in key:
        out[d] = g
    return tuple(out)


def total_degree(key: SparseIndex) -> int:
    return sum(g for _, g in key)


def _lex_key(key: SparseIndex) -> tuple:
    """Comparable proxy: tuple order of this equals dense lexicographic order."""
    return tuple((-d, g) for d, g in key)


def _as_key(mi) -> SparseIndex:
    """Accept a dense sequence of ints or an already-sparse key."""
    if isinstance(mi, tuple) and all(
        isinstance(e, tuple) and len(e) == 2 for e in mi
    ):
        return mi
    return sparsify(mi)


class MultiIndexSet:
    """Ordered collection of distinct multi-indices in a fixed dimension."""

    def __init__(self, dim: int, indices: Iterable = ()):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = dim
        self._order: list[SparseIndex] = []
        self._members: set[SparseIndex] = set()
        for mi in indices:
            self.add(mi)

    def add(self, mi) -> bool:
        key = _as_key(mi)
        if key and key[-1][0] >= self.dim:
            raise ValueError(f"multi-index {key} exceeds dimension {self.dim}")
        if key in self._members:
            return False
        self._members.add(key)
        self._order.append(key)
        return True

    def __contains__(self, mi) -> bool:
        return _as_key(mi) in self._members

    def __iter__(self):
        return iter(self._order)

    def __len__(self) -> int:
        return len(self._order)

    def keys(self) -> list[SparseIndex]:
        return list(self._order)

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self._order), self.dim), dtype=np.int64)
        for row, key in enumerate(self._order):
            for d, g in key:
                out[row, d] = g
        return out

    def is_admissible(self) -> bool:
        """Downward closedness: k in set and k_n > 0 implies k - e_n in set."""
        for key in self._members:
            for pos in range(len(key)):
                d, g = key[pos]
                if g > 1:
                    down = key[:pos] + ((d, g - 1),) + key[pos + 1 :]
                else:
                    down = key[:pos] + key[pos + 1 :]
                if down not in self._members:
                    return False
        return True


def is_admissible(index_set: MultiIndexSet) -> bool:
    return index_set.is_admissible()


def full_tensor_set(k, dim: int | None = None) -> MultiIndexSet:
    """All i with 0 <= i_n <= k_n; cardinality prod(k_n + 1)."""
    k = tuple(int(v) for v in k)
    if dim is None:
        dim = len(k)
    if len(k) != dim:
        raise ValueError("order vector length must equal dimension")
    card = math.prod(v + 1 for v in k)
    if card > MAX_SET_SIZE:
        raise ValueError(f"full tensor set would have {card} indices (limit {MAX_SET_SIZE})")
    out = MultiIndexSet(dim)
    for dense in itertools.product(*(range(v + 1) for v in k)):
        out.add(dense)
    return out


def total_order_cardinality(order: int, dim: int) -> int:
    """binom(dim + order, order), the size of the total order set."""
    if order < 0 or dim < 1:
        raise ValueError("need order >= 0 and dim >= 1")
    return math.comb(dim + order, order)


def total_order_set(order: int, dim: int) -> MultiIndexSet:
    """All i with sum(i) <= order, enumerated by total degree then lexicographically."""
    card = total_order_cardinality(order, dim)
    if card > MAX_SET_SIZE:
        raise ValueError(f"total order set would have {card} indices (limit {MAX_SET_SIZE})")
    keys = [()]
    for t in range(1, order + 1):
        for nnz in range(1, t + 1):
            for dims in itertools.combinations(range(dim), nnz):
                # compositions of t into nnz positive parts
                for cuts in itertools.combinations(range(1, t), nnz - 1):
                    parts = []
                    prev = 0
                    for c in cuts + (t,):
                        parts.append(c - prev)
                        prev = c
                    keys.append(tuple(zip(dims, parts)))
    keys.sort(key=lambda k: (total_degree(k), _lex_key(k)))
    out = MultiIndexSet(dim)
    for key in keys:
        out._members.add(key)
        out._order.append(key)
    return out


def backward_neighborhood(k) -> list[SparseIndex]:
    """All i <= k with sup-distance exactly 1: every nonempty subset of the
    support of k decremented by one. Cardinality 2**s - 1 for s nonzeros."""
    key = _as_key(k)
    out = []
    s = len(key)
    for mask in range(1, 1 << s):
        down = []
        for pos in range(s):
            d, g = key[pos]
            if mask & (1 << pos):
                if g > 1:
                    down.append((d, g - 1))
            else:
                down.append((d, g))
        out.append(tuple(down))
    return out


def admissible_forward_neighbors(
    k, index_set: MultiIndexSet, max_degree: int | None = None
) -> list[SparseIndex]:
    """Neighbors k + e_j whose addition keeps the set Smolyak admissible,
    optionally filtered by a cap on univariate degrees."""
    key = _as_key(k)
    if key not in index_set:
        raise ValueError("critical index must belong to the index set")
    out = []
    for j in range(index_set.dim):
        cand = _increment(key, j)
        deg_j = dict(cand).get(j, 0)
        if max_degree is not None and deg_j > max_degree:
            continue
        if cand in index_set:
            continue
        if all(b in index_set for b in backward_neighborhood(cand)):
            out.append(cand)
    return out


def _increment(key: SparseIndex, j: int) -> SparseIndex:
    out = []
    placed = False
    for d, g in key:
        if d == j:
            out.append((d, g + 1))
            placed = True
        else:
            if d > j and not placed:
                out.append((j, 1))
                placed = True
            out.append((d, g))
    if not placed:
        out.append((j, 1))
    return tuple(out)


# ---------------------------------------------------------------------------
# cached forward evaluations
# ---------------------------------------------------------------------------

class ForwardEvaluationError(RuntimeError):
    """Forward solver failed at a quadrature node."""

    def __init__(self, theta, cause):
        self.theta = np.asarray(theta)
        super().__init__(f"forward evaluation failed at node {self.theta!r}: {cause}")


def _node_key(theta: np.ndarray) -> tuple:
    """Sparse, exact cache key: (dim, value) for the nonzero coordinates."""
    nz = np.nonzero(theta)[0]
    return tuple((int(d), float(theta[d])) for d in nz)


class CachedForward:
    """Memoizing wrapper around a forward map theta -> R^M.

    Quadrature nodes are reproducible bitwise from the rule constructor, so
    exact coordinate tuples are safe cache keys.  An optional process pool can
    evaluate missing nodes in parallel; results are stored in request order so
    accumulation downstream stays deterministic.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int, out_dim: int):
        self._fn = fn
        self.dim = dim
        self.out_dim = out_dim
        self._values: dict[tuple, np.ndarray] = {}
        self.eval_count = 0

    def _theta(self, key: tuple) -> np.ndarray:
        theta = np.zeros(self.dim)
        for d, v in key:
            theta[d] = v
        return theta

    def ensure(self, keys: Iterable[tuple], pool=None) -> None:
        missing, seen = [], set()
        for key in keys:
            if key not in self._values and key not in seen:
                missing.append(key)
                seen.add(key)
        if not missing:
            return
        thetas = [self._theta(k) for k in missing]
        if pool is None:
            results = []
            for theta in thetas:
                try:
                    results.append(np.asarray(self._fn(theta), dtype=float))
                except Exception as exc:
                    raise ForwardEvaluationError(theta, exc) from exc
        else:
            try:
                results = [np.asarray(r, dtype=float) for r in pool.map(self._fn, thetas)]
            except Exception as exc:
                raise ForwardEvaluationError(thetas[0], exc) from exc
        for key, res in zip(missing, results):
            if res.shape != (self.out_dim,):
                raise ValueError(
                    f"forward map returned shape {res.shape}, expected ({self.out_dim},)"
                )
            self._values[key] = res
            self.eval_count += 1

    def value(self, key: tuple) -> np.ndarray:
        return self._values[key]

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        key = _node_key(theta)
        self.ensure([key])
        return self._values[key]


def _tensor_nodes(key: SparseIndex) -> list[tuple]:
    """Cache keys of all tensorized Gauss-Legendre nodes for projection order k."""
    if not key:
        return [()]
    dims = [d for d, _ in key]
    rules = [gauss_legendre_rule(g) for _, g in key]
    nodes = []
    for combo in itertools.product(*(r.nodes for r in rules)):
        nodes.append(tuple((d, float(v)) for d, v in zip(dims, combo) if v != 0.0))
    return nodes


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def tensor_projection(
    forward,
    k,
    dim: int | None = None,
    out_dim: int | None = None,
    component_rows: np.ndarray | None = None,
) -> dict:
    """Full tensor pseudospectral projection of order k.

    Returns the coefficient table {i: c_i in R^G} over the induced full tensor
    set (with Gauss-Legendre, degrees up to k per dimension). ``forward`` may
    be a raw callable or a :class:`CachedForward`; results are cached keyed by
    node coordinates.  ``component_rows`` restricts the output to a subset of
    measurement components.
    """
    key = _as_key(k)
    if not isinstance(forward, CachedForward):
        if dim is None or out_dim is None:
            raise ValueError("dim and out_dim are required for a raw forward callable")
        forward = CachedForward(forward, dim, out_dim)
    card = math.prod(g + 1 for _, g in key)
    if card > MAX_SET_SIZE:
        raise ValueError(f"tensor grid would have {card} nodes (limit {MAX_SET_SIZE})")
    node_keys = _tensor_nodes(key)
    forward.ensure(node_keys)
    values = np.stack([forward.value(nk) for nk in node_keys])  # (n_nodes, M)
    if component_rows is not None:
        values = values[:, component_rows]
    if not key:
        return {(): values[0].copy()}

    dims = [d for d, _ in key]
    degs = [g for _, g in key]
    sizes = [g + 1 for g in degs]
    # factor matrices W[i, j] = l_i(x_j) * w_j per active dimension
    factors = []
    for g in degs:
        rule = gauss_legendre_rule(g)
        table = legendre_table(g, rule.nodes)  # (g+1, g+1)
        factors.append(table * rule.weights)
    tensor = values.reshape(sizes + [values.shape[1]])
    for axis, w in enumerate(factors):
        tensor = np.moveaxis(np.tensordot(w, tensor, axes=(1, axis)), 0, axis)
    table = {}
    for combo in itertools.product(*(range(s) for s in sizes)):
        coeff_key = tuple((d, c) for d, c in zip(dims, combo) if c > 0)
        table[coeff_key] = np.ascontiguousarray(tensor[combo])
    return table


def difference_projection(k, projections: Mapping[SparseIndex, dict]) -> dict:
    """Signed combination P_k + sum_{i in B(k)} (-1)^{|k-i|_1} P_i.

    ``projections`` must hold the stored tensor projection tables for k and
    its whole backward neighborhood (guaranteed when the enclosing index set
    is admissible); a missing entry is a contract violation.
    """
    key = _as_key(k)
    try:
        accum = {i: c.copy() for i, c in projections[key].items()}
    except KeyError as exc:
        raise KeyError(f"tensor projection for {key} has not been computed") from exc
    for back in backward_neighborhood(key):
        sign = (-1.0) ** (total_degree(key) - total_degree(back))
        try:
            table = projections[back]
        except KeyError as exc:
            raise KeyError(
                f"tensor projection for backward neighbor {back} of {key} missing"
            ) from exc
        for i, coeff in table.items():
            if i in accum:
                accum[i] = accum[i] + sign * coeff
            else:
                accum[i] = sign * coeff
    return accum


def epsilon_norm(table: Mapping[SparseIndex, np.ndarray]) -> float:
    """Frobenius norm of a coefficient table."""
    total = 0.0
    for coeff in table.values():
        total += float(np.sum(np.square(coeff)))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# surrogate container
# ---------------------------------------------------------------------------

@dataclass
class SurrogateGroup:
    """Degrees, coefficients and refinement norms for one measurement group.

    The degree matrix is stored as (row, dim, degree) triplets sorted by row
    then dim; ``alpha`` has one column per polynomial and one row per
    measurement component of the group.  ``eps`` holds the difference
    projection norm of the multi-index that introduced each polynomial.
    """

    measurement_rows: np.ndarray  # (G,) indices into the full measurement vector
    entry_row: np.ndarray  # (nnz,)
    entry_dim: np.ndarray  # (nnz,)
    entry_deg: np.ndarray  # (nnz,)
    alpha: np.ndarray  # (G, P)
    eps: np.ndarray  # (P,)
    _grad_cache: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def poly_count(self) -> int:
        return self.alpha.shape[1]

    def index_keys(self) -> list[SparseIndex]:
        keys = [[] for _ in range(self.poly_count)]
        for r, d, g in zip(self.entry_row, self.entry_dim, self.entry_deg):
            keys[r].append((int(d), int(g)))
        return [tuple(k) for k in keys]

    def max_degree(self) -> int:
        return int(self.entry_deg.max()) if self.entry_deg.size else 0

    def _row_ptr(self) -> np.ndarray:
        return np.searchsorted(self.entry_row, np.arange(self.poly_count + 1))

    def features(self, ladder: np.ndarray) -> np.ndarray:
        """L_i(theta) for every stored polynomial, from a univariate ladder
        ``ladder[d, n] = l_d(theta_n)``."""
        feats = np.ones(self.poly_count)
        if self.entry_row.size:
            np.multiply.at(feats, self.entry_row, ladder[self.entry_deg, self.entry_dim])
        return feats

    def feature_grad(self, ladder: np.ndarray, dladder: np.ndarray):
        """Sparse feature gradient values, aligned with the entry triplets.

        Entry e contributes d l_{deg_e}/dx (theta_{dim_e}) times the product of
        the remaining univariate factors of its row, computed with per-row
        prefix/suffix products (no division, so zero factors are safe).
        """
        nnz = self.entry_row.size
        if nnz == 0:
            return np.zeros(0)
        fac = ladder[self.entry_deg, self.entry_dim]
        ptr = self._row_ptr()
        offset = np.arange(nnz) - ptr[self.entry_row]
        max_len = int(np.max(np.diff(ptr)))
        pre = np.ones(nnz)
        suf = np.ones(nnz)
        for o in range(1, max_len):
            sel = np.nonzero(offset == o)[0]
            pre[sel] = pre[sel - 1] * fac[sel - 1]
        lengths = np.diff(ptr)
        rev_offset = lengths[self.entry_row] - 1 - offset
        for o in range(1, max_len):
            sel = np.nonzero(rev_offset == o)[0]
            suf[sel] = suf[sel + 1] * fac[sel + 1]
        return pre * suf * dladder[self.entry_deg, self.entry_dim]

    def _gradient_matrix(self, dvals: np.ndarray, dim: int) -> csc_matrix:
        """Sparse (poly_count x dim) matrix of feature gradients; the sparsity
        structure is fixed, so the CSC skeleton is built once and reused."""
        if self._grad_cache is None:
            order = np.lexsort((self.entry_row, self.entry_dim))
            indices = self.entry_row[order].astype(np.int32)
            counts = np.bincount(self.entry_dim, minlength=dim)
            indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            self._grad_cache = (order, indices, indptr)
        order, indices, indptr = self._grad_cache
        return csc_matrix(
            (dvals[order], indices, indptr), shape=(self.poly_count, dim)
        )


@dataclass
class Surrogate:
    """Evaluable sparse pseudospectral surrogate of a map Xi^N -> R^M."""

    dim: int
    out_dim: int
    grouping: str  # "common" | "per-component" | "per-group"
    groups: list[SurrogateGroup]
    provenance: dict = field(default_factory=dict)

    @property
    def poly_counts(self) -> list[int]:
        return [g.poly_count for g in self.groups]

    def _max_degree(self) -> int:
        return max(g.max_degree() for g in self.groups)

    def _check_theta(self, theta, strict: bool) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"parameter vector must have shape ({self.dim},)")
        if strict and np.any((theta < -0.5) | (theta > 0.5)):
            raise ValueError("parameter vector outside Xi^N in strict mode")
        return theta

    def eval(self, theta, strict: bool = False) -> np.ndarray:
        theta = self._check_theta(theta, strict)
        ladder = legendre_table(self._max_degree(), theta)  # (D+1, N)
        out = np.empty(self.out_dim)
        for grp in self.groups:
            out[grp.measurement_rows] = grp.alpha @ grp.features(ladder)
        return out

    def eval_many(self, thetas: np.ndarray, strict: bool = False) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        out = np.empty((thetas.shape[0], self.out_dim))
        for q in range(thetas.shape[0]):
            out[q] = self.eval(thetas[q], strict=strict)
        return out

    def jacobian(self, theta, strict: bool = False) -> np.ndarray:
        theta = self._check_theta(theta, strict)
        ladder, dladder = legendre_table_deriv(self._max_degree(), theta)
        jac = np.zeros((self.out_dim, self.dim))
        for grp in self.groups:
            if grp.entry_row.size:
                dvals = grp.feature_grad(ladder, dladder)
                sparse_grad = grp._gradient_matrix(dvals, self.dim)
                jac[grp.measurement_rows, :] = (sparse_grad.T @ grp.alpha.T).T
        return jac


def surrogate_eval(surrogate: Surrogate, theta, strict: bool = False) -> np.ndarray:
    return surrogate.eval(theta, strict=strict)


def surrogate_jacobian(surrogate: Surrogate, theta, strict: bool = False) -> np.ndarray:
    return surrogate.jacobian(theta, strict=strict)


def surrogate_truncate(surrogate: Surrogate, n: int) -> Surrogate:
    """Keep, per group, the n polynomials with the largest coefficient-vector
    norms (absolute values for single-component groups); ties are broken by
    lexicographic degree order.  Original storage order is preserved."""
    new_groups = []
    for grp in surrogate.groups:
        if not 1 <= n <= grp.poly_count:
            raise ValueError(f"retained count must be in [1, {grp.poly_count}]")
        norms = np.linalg.norm(grp.alpha, axis=0)
        keys = grp.index_keys()
        ranked = sorted(range(grp.poly_count), key=lambda p: (-norms[p], _lex_key(keys[p])))
        keep = np.zeros(grp.poly_count, dtype=bool)
        keep[ranked[:n]] = True
        new_groups.append(_subset_group(grp, keep))
    prov = dict(surrogate.provenance)
    prov["truncated_to"] = n
    return Surrogate(surrogate.dim, surrogate.out_dim, surrogate.grouping, new_groups, prov)


def _subset_group(grp: SurrogateGroup, keep: np.ndarray) -> SurrogateGroup:
    new_pos = np.cumsum(keep) - 1
    mask = keep[grp.entry_row]
    return SurrogateGroup(
        measurement_rows=grp.measurement_rows.copy(),
        entry_row=new_pos[grp.entry_row[mask]].astype(np.int64),
        entry_dim=grp.entry_dim[mask].copy(),
        entry_deg=grp.entry_deg[mask].copy(),
        alpha=np.ascontiguousarray(grp.alpha[:, keep]),
        eps=grp.eps[keep].copy(),
    )


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _group_rows(grouping: str, out_dim: int, groups) -> list[np.ndarray]:
    if grouping == "common":
        return [np.arange(out_dim)]
    if grouping == "per-component":
        return [np.array([m]) for m in range(out_dim)]
    if grouping == "per-group":
        if not groups:
            raise ValueError("per-group grouping requires explicit group index lists")
        rows = [np.asarray(g, dtype=np.int64) for g in groups]
        flat = np.concatenate(rows)
        if len(np.unique(flat)) != out_dim or flat.min() < 0 or flat.max() >= out_dim:
            raise ValueError("group index lists must partition range(out_dim)")
        return rows
    raise ValueError(f"unknown grouping {grouping!r}")


def _finalize_group(rows, order, accum, eps):
    """Freeze one group's accumulated coefficient table into array storage."""
    entry_row, entry_dim, entry_deg = [], [], []
    alpha = np.empty((len(rows), len(order)))
    eps_arr = np.empty(len(order))
    for p, key in enumerate(order):
        for d, g in key:
            entry_row.append(p)
            entry_dim.append(d)
            entry_deg.append(g)
        alpha[:, p] = accum[key]
        eps_arr[p] = eps[key]
    return SurrogateGroup(
        measurement_rows=np.asarray(rows, dtype=np.int64),
        entry_row=np.asarray(entry_row, dtype=np.int64),
        entry_dim=np.asarray(entry_dim, dtype=np.int64),
        entry_deg=np.asarray(entry_deg, dtype=np.int64),
        alpha=alpha,
        eps=eps_arr,
    )


def _project_batch(forward, batch, rows, projections, accum, eps, order, pool):
    """Project every index in the batch, form difference projections, and
    accumulate into the output table.  Deterministic batch order."""
    batch = sorted(batch, key=lambda k: (total_degree(k), _lex_key(k)))
    needed = []
    for key in batch:
        needed.extend(_tensor_nodes(key))
    forward.ensure(needed, pool=pool)
    for key in batch:
        projections[key] = tensor_projection(forward, key, component_rows=rows)
        diff = difference_projection(key, projections)
        eps[key] = epsilon_norm(diff)
        for i, coeff in diff.items():
            if i in accum:
                accum[i] = accum[i] + coeff
            else:
                accum[i] = coeff.copy()
        order.append(key)


def adaptive_spam(
    forward,
    dim: int,
    out_dim: int,
    budget: int,
    max_degree: int | None = None,
    grouping: str = "common",
    groups=None,
    pool=None,
    provenance: dict | None = None,
) -> Surrogate:
    """Adaptive sparse pseudospectral approximation.

    Starting from the zero index, repeatedly projects the current frontier,
    scores each new index by the Frobenius norm of its difference projection,
    and expands the admissible forward neighbors of the largest not yet
    selected norm, until the polynomial count reaches ``budget`` (overshoot
    within one frontier batch is possible) or no selectable index remains.
    Ties in the norm are broken by total degree, then lexicographic order.

    With per-component or per-group grouping the loop runs independently per
    measurement group over the group's rows, sharing the node-keyed forward
    cache across groups.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not isinstance(forward, CachedForward):
        forward = CachedForward(forward, dim, out_dim)
    group_rows = _group_rows(grouping, out_dim, groups)

    built = []
    for rows in group_rows:
        projections: dict[SparseIndex, dict] = {}
        accum: dict[SparseIndex, np.ndarray] = {}
        eps: dict[SparseIndex, float] = {}
        order: list[SparseIndex] = []
        members = MultiIndexSet(dim)
        heap: list[tuple] = []
        frontier: list[SparseIndex] = [()]
        while True:
            _project_batch(forward, frontier, rows, projections, accum, eps, order, pool)
            for key in frontier:
                members.add(key)
                heapq.heappush(heap, (-eps[key], total_degree(key), _lex_key(key), key))
            # admissibility is preserved at every merge: each new index must
            # have its full backward neighborhood present
            for key in frontier:
                if any(b not in members for b in backward_neighborhood(key)):
                    raise AssertionError(f"admissibility violated at {key}")
            if len(order) >= budget:
                break
            if not heap:
                break
            critical = heapq.heappop(heap)[3]
            frontier = admissible_forward_neighbors(critical, members, max_degree)
        assert len(accum) == len(order), "Gauss-Legendre bookkeeping broken"
        built.append(_finalize_group(rows, order, accum, eps))

    prov = {
        "quadrature": "gauss-legendre",
        "budget": budget,
        "max_degree": max_degree,
        "algorithm": "adaptive",
        "forward_evaluations": forward.eval_count,
    }
    prov.update(provenance or {})
    return Surrogate(dim, out_dim, grouping, built, prov)


def build_from_index_set(
    forward,
    dim: int,
    out_dim: int,
    index_set: MultiIndexSet,
    grouping: str = "common",
    groups=None,
    pool=None,
    provenance: dict | None = None,
) -> Surrogate:
    """Non-adaptive build over a prescribed admissible index set (e.g. a total
    order set), accumulating the same difference projections as the adaptive
    loop but without selection."""
    if not index_set.is_admissible():
        raise ValueError("index set must be Smolyak admissible")
    if not isinstance(forward, CachedForward):
        forward = CachedForward(forward, dim, out_dim)
    group_rows = _group_rows(grouping, out_dim, groups)
    keys = sorted(index_set.keys(), key=lambda k: (total_degree(k), _lex_key(k)))
    built = []
    for rows in group_rows:
        projections, accum, eps, order = {}, {}, {}, []
        _project_batch(forward, keys, rows, projections, accum, eps, order, pool)
        built.append(_finalize_group(rows, order, accum, eps))
    prov = {
        "quadrature": "gauss-legendre",
        "budget": len(index_set),
        "max_degree": None,
        "algorithm": "prescribed",
        "forward_evaluations": forward.eval_count,
    }
    prov.update(provenance or {})
    return Surrogate(dim, out_dim, grouping, built, prov)


# ---------------------------------------------------------------------------
# container file
# ---------------------------------------------------------------------------

def save_surrogate(surrogate: Surrogate, path) -> None:
    """Versioned binary container; save -> load -> eval is bit-exact."""
    header = {
        "format": FORMAT_VERSION,
        "dim": surrogate.dim,
        "out_dim": surrogate.out_dim,
        "grouping": surrogate.grouping,
        "group_count": len(surrogate.groups),
        "provenance": surrogate.provenance,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for gi, grp in enumerate(surrogate.groups):
        arrays[f"g{gi}_rows"] = grp.measurement_rows
        arrays[f"g{gi}_entry_row"] = grp.entry_row
        arrays[f"g{gi}_entry_dim"] = grp.entry_dim
        arrays[f"g{gi}_entry_deg"] = grp.entry_deg
        arrays[f"g{gi}_alpha"] = grp.alpha
        arrays[f"g{gi}_eps"] = grp.eps
    np.savez(path, **arrays)


def load_surrogate(path) -> Surrogate:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported surrogate container: {header.get('format')!r}")
        groups = []
        for gi in range(header["group_count"]):
            groups.append(
                SurrogateGroup(
                    measurement_rows=data[f"g{gi}_rows"],
                    entry_row=data[f"g{gi}_entry_row"],
                    entry_dim=data[f"g{gi}_entry_dim"],
                    entry_deg=data[f"g{gi}_entry_deg"],
                    alpha=data[f"g{gi}_alpha"],
                    eps=data[f"g{gi}_eps"],
                )
            )
    return Surrogate(
        dim=header["dim"],
        out_dim=header["out_dim"],
        grouping=header["grouping"],
        groups=groups,
        provenance=header["provenance"],
    )
