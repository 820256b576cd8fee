"""Storage allocations: construction, validation, and routing matrices.

An allocation assigns each of k objects a list of d pairwise-disjoint
service choices over n nodes.  A choice is a single node (replica) or a set
of r nodes that jointly recover the object (XOR).  Builders cover the
single-choice, clustering, cyclic, symmetric block-design, and cyclic-XOR
families; ``to_matrices`` emits the binary routing matrix M (nodes x demand
portions) and aggregation matrix T (objects x portions) consumed by the
solver.

Objects and nodes are 0-based; all cyclic index arithmetic is modulo n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np

KINDS = ("single_choice", "clustering", "cyclic", "block_design", "cyclic_xor", "custom")


class UnsupportedDesignError(Exception):
    """Requested design family or parameters are not constructible here."""


@dataclass(frozen=True)
class Allocation:
    """A regular balanced d-choice storage allocation.

    ``recovery_sets[i]`` lists object i's d choices in a fixed order; each
    choice is a tuple of node ids (length 1 for replicas, a single primary
    plus length-r sets for XOR designs).
    """

    n: int
    k: int
    d: int
    r: int
    kind: str
    recovery_sets: tuple[tuple[tuple[int, ...], ...], ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if min(self.n, self.k, self.d, self.r) < 1:
            raise ValueError("n, k, d, r must be positive")

    def choice_nodes(self, i: int) -> frozenset[int]:
        """Union of all nodes in object i's recovery sets."""
        return frozenset(v for s in self.recovery_sets[i] for v in s)


@dataclass(frozen=True)
class AllocationMatrices:
    """Routing matrices of an allocation.

    Columns are demand portions in object-major, choice-minor order.  Each
    column of T has a single 1 (the owning object); a column of M has one 1
    per node serving that portion, so replica columns have weight 1 and
    r-XOR recovery columns weight r.
    """

    M: np.ndarray
    T: np.ndarray
    column_owner: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def k(self) -> int:
        return self.T.shape[0]

    @property
    def num_portions(self) -> int:
        return self.M.shape[1]


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_single_choice(n: int, m: int) -> Allocation:
    """k = n*m objects, node j hosting objects j*m .. j*m + m - 1, d = 1."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    sets = tuple(((i // m,),) for i in range(n * m))
    return Allocation(n=n, k=n * m, d=1, r=1, kind="single_choice", recovery_sets=sets)


def build_clustering(n: int, d: int) -> Allocation:
    """Partition n nodes into n/d clusters; cluster j stores objects j*d..j*d+d-1.

    Every object is replicated on all d nodes of its cluster.  Requires d | n;
    k = n.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if n % d != 0:
        raise ValueError(f"d={d} must divide n={n}")
    sets = []
    for i in range(n):
        base = (i // d) * d
        sets.append(tuple((base + j,) for j in range(d)))
    return Allocation(n=n, k=n, d=d, r=1, kind="clustering", recovery_sets=tuple(sets))


def build_cyclic(n: int, d: int) -> Allocation:
    """Object i replicated on nodes i, i+1, ..., i+d-1 (mod n); k = n."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if d > n:
        raise ValueError(f"d={d} must be <= n={n}")
    sets = tuple(tuple(((i + j) % n,) for j in range(d)) for i in range(n))
    return Allocation(n=n, k=n, d=d, r=1, kind="cyclic", recovery_sets=sets)


def _is_prime_power(q: int) -> bool:
    if q < 2:
        return False
    p = 2
    while p * p <= q:
        if q % p == 0:
            while q % p == 0:
                q //= p
            return q == 1
        p += 1
    return True  # q itself prime


def perfect_difference_set(d: int) -> tuple[int, ...]:
    """First-lexicographic perfect difference set of size d modulo d*d - d + 1.

    A set D with every nonzero residue arising exactly once as a difference
    of two elements.  Any such set can be translated to contain {0, 1}, so
    the search fixes those and backtracks over the remaining elements with a
    used-difference table.  Sizes with d - 1 a prime power always admit one.
    """
    v = d * d - d + 1
    used = [False] * v
    chosen = [0, 1]
    used[1] = used[v - 1] = True

    def try_add(x: int) -> bool:
        diffs = []
        for y in chosen:
            a = (x - y) % v
            if used[a] or used[v - a]:
                for b in diffs:
                    used[b] = used[v - b] = False
                return False
            used[a] = used[v - a] = True
            diffs.append(a)
        chosen.append(x)
        return True

    def remove_last():
        x = chosen.pop()
        for y in chosen:
            a = (x - y) % v
            used[a] = used[v - a] = False

    def search(start: int) -> bool:
        if len(chosen) == d:
            return True
        for x in range(start, v):
            if try_add(x):
                if search(x + 1):
                    return True
                remove_last()
        return False

    if d == 2:
        return (0, 1)
    if not search(3):
        raise UnsupportedDesignError(f"no perfect difference set found for d={d}")
    return tuple(chosen)


def build_block_design(d: int) -> Allocation:
    """Symmetric block design with every object pair sharing exactly one node.

    Exists (and is built here via a cyclic perfect difference set) when d - 1
    is a prime power; n = k = d*d - d + 1, node j hosts objects D + j mod n.
    Other orders are rejected.
    """
    if d < 3:
        raise UnsupportedDesignError("block designs are built for d >= 3")
    if not _is_prime_power(d - 1):
        raise UnsupportedDesignError(f"d-1={d - 1} is not a prime power")
    base = perfect_difference_set(d)
    v = d * d - d + 1
    sets = []
    for i in range(v):
        hosts = sorted((i - x) % v for x in base)
        sets.append(tuple((h,) for h in hosts))
    return Allocation(n=v, k=v, d=d, r=1, kind="block_design", recovery_sets=tuple(sets))


def build_cyclic_xor(n: int, d: int, r: int) -> Allocation:
    """Cyclic XOR design: primary {i} plus d-1 consecutive disjoint r-sets.

    Object i's recovery sets are {i+1..i+r}, {i+r+1..i+2r}, ..., all mod n.
    The matching content layout (one XOR copy per recovery set, stored on the
    set's last node together with exact copies on the others) is validated at
    build time; it exists exactly when n >= 1 + r(d-1), which also makes the
    choices pairwise disjoint.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if r < 2:
        raise ValueError("r must be >= 2 for XOR designs")
    if n < 1 + r * (d - 1):
        raise ValueError(f"need n >= 1 + r(d-1) = {1 + r * (d - 1)}, got n={n}")
    sets = []
    for i in range(n):
        choices = [(i,)]
        for j in range(d - 1):
            choices.append(tuple((i + 1 + j * r + t) % n for t in range(r)))
        sets.append(tuple(choices))
    alloc = Allocation(n=n, k=n, d=d, r=r, kind="cyclic_xor", recovery_sets=tuple(sets))
    for i, obj_sets in enumerate(alloc.recovery_sets):
        seen: set[int] = set()
        for s in obj_sets:
            if seen & set(s):
                raise UnsupportedDesignError(
                    f"object {i}: recovery sets are not disjoint (n too small)"
                )
            seen |= set(s)
    return alloc


def cyclic_xor_contents(alloc: Allocation) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """Per-node XOR copies implied by the cyclic XOR layout.

    Node v stores, for each recovery set it terminates, one XOR copy whose
    members are the served object plus the primaries of the set's other
    nodes.  Returned as a tuple per node of object-id tuples (the exact
    primary copy o_v is implicit).
    """
    if alloc.kind != "cyclic_xor":
        raise UnsupportedDesignError("contents are defined for cyclic_xor allocations")
    n, r = alloc.n, alloc.r
    per_node: list[list[tuple[int, ...]]] = [[] for _ in range(n)]
    for i, obj_sets in enumerate(alloc.recovery_sets):
        for s in obj_sets[1:]:
            last = s[-1]
            members = (i,) + tuple(v % n for v in s[:-1])
            per_node[last].append(tuple(sorted(members)))
    return tuple(tuple(c) for c in per_node)


# ---------------------------------------------------------------------------
# Validation and structure queries
# ---------------------------------------------------------------------------


def validate_regular_balanced(alloc: Allocation) -> list[str]:
    """Return a list of violations of the regular balanced d-choice property.

    Checks: d recovery sets per object, pairwise disjoint, node ids in range,
    legal set sizes (1 for replicas; 1 or r for XOR), no duplicate object per
    node, and equal per-node participation counts.  An empty list means the
    allocation is valid.
    """
    out: list[str] = []
    node_count = [0] * alloc.n
    per_node_objects: list[set[int]] = [set() for _ in range(alloc.n)]
    for i, obj_sets in enumerate(alloc.recovery_sets):
        if len(obj_sets) != alloc.d:
            out.append(f"object {i}: has {len(obj_sets)} recovery sets, expected {alloc.d}")
        seen: set[int] = set()
        for s in obj_sets:
            if alloc.r == 1 and len(s) != 1:
                out.append(f"object {i}: replica choice {s} is not a single node")
            if alloc.r > 1 and len(s) not in (1, alloc.r):
                out.append(f"object {i}: choice {s} has size {len(s)}, expected 1 or {alloc.r}")
            for v in s:
                if not 0 <= v < alloc.n:
                    out.append(f"object {i}: node {v} out of range [0, {alloc.n})")
                    continue
                node_count[v] += 1
                if i in per_node_objects[v]:
                    out.append(f"node {v}: object {i} appears in more than one of its choices")
                per_node_objects[v].add(i)
            if seen & set(s):
                out.append(f"object {i}: recovery sets overlap at {sorted(seen & set(s))}")
            seen |= set(s)
    if len(set(node_count)) > 1:
        lo, hi = min(node_count), max(node_count)
        bad = [v for v, c in enumerate(node_count) if c in (lo, hi)][:4]
        out.append(
            f"unbalanced: per-node participation ranges {lo}..{hi} (e.g. nodes {bad})"
        )
    return out


def overlap_sum(alloc: Allocation) -> int:
    """Sum over ordered object pairs of |C_i intersect C_j| (replicas only).

    For every regular balanced d-choice replica allocation this equals
    (d-1) * d * k.
    """
    if alloc.r != 1:
        raise UnsupportedDesignError("overlap_sum is defined for replica allocations")
    unions = [alloc.choice_nodes(i) for i in range(alloc.k)]
    hosted: list[list[int]] = [[] for _ in range(alloc.n)]
    for i, u in enumerate(unions):
        for v in u:
            hosted[v].append(i)
    total = 0
    for objs in hosted:
        total += len(objs) * (len(objs) - 1)
    return total


def node_expansion(alloc: Allocation, objects: Iterable[int]) -> int:
    """Size of the union of choice nodes over the given object set."""
    objs = set(objects)
    if any(not 0 <= i < alloc.k for i in objs):
        raise ValueError("object id out of range")
    nodes: set[int] = set()
    for i in objs:
        nodes |= alloc.choice_nodes(i)
    return len(nodes)


def is_r_gap(alloc: Allocation, r: int) -> bool:
    """True iff objects at circular index distance > r have disjoint choices."""
    if alloc.r != 1:
        raise UnsupportedDesignError("r-gap is defined for replica allocations")
    if r < 0:
        raise ValueError("r must be non-negative")
    unions = [alloc.choice_nodes(i) for i in range(alloc.k)]
    k = alloc.k
    for i, j in combinations(range(k), 2):
        dist = min(j - i, k - (j - i))
        if dist > r and unions[i] & unions[j]:
            return False
    return True


def r_gap_radius(alloc: Allocation) -> int:
    """Smallest r for which the allocation is an r-gap design."""
    if alloc.r != 1:
        raise UnsupportedDesignError("r-gap is defined for replica allocations")
    unions = [alloc.choice_nodes(i) for i in range(alloc.k)]
    k = alloc.k
    radius = 0
    for i, j in combinations(range(k), 2):
        if unions[i] & unions[j]:
            radius = max(radius, min(j - i, k - (j - i)))
    return radius


def hall_check(
    alloc: Allocation,
    exhaustive_limit: int = 12,
    samples: int = 2000,
    seed: int = 0,
) -> tuple[bool, Optional[tuple[int, ...]]]:
    """Check node_expansion(S) >= |S| for object subsets (batch-code property).

    Exhaustive for k <= exhaustive_limit, otherwise over ``samples`` random
    subsets.  Returns (ok, witness) with a violating subset if one is found.
    """
    k = alloc.k
    unions = [alloc.choice_nodes(i) for i in range(k)]

    def expansion(objs) -> int:
        nodes: set[int] = set()
        for i in objs:
            nodes |= unions[i]
        return len(nodes)

    if k <= exhaustive_limit:
        for size in range(1, k + 1):
            for objs in combinations(range(k), size):
                if expansion(objs) < len(objs):
                    return False, objs
        return True, None
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    for _ in range(samples):
        size = int(rng.integers(1, k + 1))
        objs = tuple(sorted(rng.choice(k, size=size, replace=False).tolist()))
        if expansion(objs) < len(objs):
            return False, objs
    return True, None


def pairwise_overlap_histogram(alloc: Allocation) -> dict[int, int]:
    """Histogram {overlap size: number of unordered object pairs}."""
    if alloc.r != 1:
        raise UnsupportedDesignError("overlaps are defined for replica allocations")
    unions = [alloc.choice_nodes(i) for i in range(alloc.k)]
    hist: dict[int, int] = {}
    for i, j in combinations(range(alloc.k), 2):
        c = len(unions[i] & unions[j])
        hist[c] = hist.get(c, 0) + 1
    return hist


def designs_isomorphic(
    blocks_a: Sequence[Sequence[int]], blocks_b: Sequence[Sequence[int]]
) -> bool:
    """Whether two block systems coincide up to relabeling points and blocks.

    Backtracking over the point permutation with degree pruning; intended
    for small systems (tens of points).
    """
    if len(blocks_a) != len(blocks_b):
        return False
    pts_a = sorted({p for b in blocks_a for p in b})
    pts_b = sorted({p for b in blocks_b for p in b})
    if len(pts_a) != len(pts_b):
        return False
    target = sorted(tuple(sorted(b)) for b in blocks_b)

    def degree(blocks, p):
        return sum(p in b for b in blocks)

    deg_a = {p: degree(blocks_a, p) for p in pts_a}
    deg_b = {p: degree(blocks_b, p) for p in pts_b}
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def compatible() -> bool:
        # every fully-mapped block of A must appear in B
        remaining = list(target)
        for b in blocks_a:
            if all(p in mapping for p in b):
                img = tuple(sorted(mapping[p] for p in b))
                if img in remaining:
                    remaining.remove(img)
                else:
                    return False
        return True

    def assign(idx: int) -> bool:
        if idx == len(pts_a):
            return compatible()
        p = pts_a[idx]
        for q in pts_b:
            if q in used or deg_a[p] != deg_b[q]:
                continue
            mapping[p] = q
            used.add(q)
            if compatible() and assign(idx + 1):
                return True
            del mapping[p]
            used.remove(q)
        return False

    return assign(0)


# ---------------------------------------------------------------------------
# Matrices and serialization
# ---------------------------------------------------------------------------


def to_matrices(alloc: Allocation) -> AllocationMatrices:
    """Binary routing matrices in object-major, choice-minor column order."""
    cols = sum(len(obj_sets) for obj_sets in alloc.recovery_sets)
    M = np.zeros((alloc.n, cols), dtype=np.int8)
    T = np.zeros((alloc.k, cols), dtype=np.int8)
    owner = []
    c = 0
    for i, obj_sets in enumerate(alloc.recovery_sets):
        for j, s in enumerate(obj_sets):
            for v in s:
                M[v, c] = 1
            T[i, c] = 1
            owner.append((i, j))
            c += 1
    return AllocationMatrices(M=M, T=T, column_owner=tuple(owner))


def allocation_to_dict(alloc: Allocation) -> dict:
    return {
        "n": alloc.n,
        "k": alloc.k,
        "d": alloc.d,
        "r": alloc.r,
        "kind": alloc.kind,
        "recovery_sets": [[list(s) for s in obj] for obj in alloc.recovery_sets],
    }


def allocation_from_dict(data: dict) -> Allocation:
    try:
        sets = tuple(
            tuple(tuple(int(v) for v in s) for s in obj) for obj in data["recovery_sets"]
        )
        alloc = Allocation(
            n=int(data["n"]),
            k=int(data["k"]),
            d=int(data["d"]),
            r=int(data["r"]),
            kind=str(data["kind"]),
            recovery_sets=sets,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed allocation data: {exc}") from exc
    if len(alloc.recovery_sets) != alloc.k:
        raise ValueError(
            f"recovery_sets has {len(alloc.recovery_sets)} objects, expected k={alloc.k}"
        )
    for i, obj_sets in enumerate(alloc.recovery_sets):
        for s in obj_sets:
            for v in s:
                if not 0 <= v < alloc.n:
                    raise ValueError(f"object {i}: node {v} out of range [0, {alloc.n})")
    return alloc


def save_allocation(alloc: Allocation, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(allocation_to_dict(alloc), fh, indent=2)
        fh.write("\n")


def load_allocation(path: str) -> Allocation:
    with open(path) as fh:
        return allocation_from_dict(json.load(fh))


def matrix_csv(matrices: AllocationMatrices, which: str = "M") -> str:
    """CSV text of M or T with a header row naming each column's owner."""
    if which not in ("M", "T"):
        raise ValueError("which must be 'M' or 'T'")
    mat = matrices.M if which == "M" else matrices.T
    header = ",".join(f"o{i}c{j}" for i, j in matrices.column_owner)
    lines = [header]
    for row in mat:
        lines.append(",".join(str(int(x)) for x in row))
    return "\n".join(lines) + "\n"
