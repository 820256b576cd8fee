"""Shared helpers for the test suite."""

import numpy as np

from storagebalance.allocation import Allocation


def random_regular_allocation(n: int, d: int, rng: np.random.Generator) -> Allocation:
    """Random regular balanced replica design from disjoint permutation layers."""
    while True:
        perms = [rng.permutation(n)]
        ok = True
        for _ in range(1, d):
            for _ in range(60):
                p = rng.permutation(n)
                if all(p[i] not in {q[i] for q in perms} for i in range(n)):
                    perms.append(p)
                    break
            else:
                ok = False
                break
        if ok:
            sets = tuple(tuple((int(p[i]),) for p in perms) for i in range(n))
            return Allocation(n=n, k=n, d=d, r=1, kind="custom", recovery_sets=sets)
