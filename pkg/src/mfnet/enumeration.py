"""Stars-and-bars enumeration of integer count vectors (empirical measures)."""

from __future__ import annotations

from functools import lru_cache
from math import comb


def n_compositions(total: int, parts: int) -> int:
    return comb(total + parts - 1, parts - 1)


@lru_cache(maxsize=4096)
def compositions(total: int, parts: int) -> tuple[tuple[int, ...], ...]:
    """All nonnegative integer vectors of length `parts` summing to `total`.

    Colexicographic order: the last coordinate varies slowest in reverse,
    i.e. vectors are sorted by reading coordinates right to left.
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if parts == 1:
        return ((total,),)
    out = []
    for last in range(total + 1):
        for rest in compositions(total - last, parts - 1):
            out.append(rest + (last,))
    return tuple(out)
