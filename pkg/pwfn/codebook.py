"""
Additive powers-of-two codebooks.

Centers are kept as signed integer multiples of 2**-b (the fixed-point
ledger) and only turned into floats at the boundary, so dedup is exact.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Tuple

import numpy as np

from pwfn.errors import CodebookError

logger = logging.getLogger(__name__)

DEFAULT_PRECISION_B = 8
DEFAULT_TOP_J = 0
DEFAULT_MAX_CENTERS = 2 ** 20


@dataclass(frozen=True)
class BaseSetConfig:
    precision_b: int = DEFAULT_PRECISION_B
    top_j: int = DEFAULT_TOP_J

    def __post_init__(self):
        if self.precision_b < 0 or self.top_j < 0:
            raise CodebookError(f'precision_b and top_j must be non-negative, '
                                f'got b={self.precision_b}, j={self.top_j}')
        if self.top_j > self.precision_b:
            raise CodebookError(f'top_j ({self.top_j}) must not exceed precision_b ({self.precision_b})')

    def to_units(self, value):
        """Exact fixed-point integer of `value`, or None if it is off the 2**-b grid"""
        scaled = float(np.ldexp(float(value), self.precision_b))
        if not np.isfinite(scaled) or not scaled.is_integer():
            return None
        return int(scaled)

    def to_value(self, units):
        return float(np.ldexp(float(units), -self.precision_b))

    @property
    def lattice_span(self):
        """Largest reachable magnitude in units: every positive element summed"""
        return 2 ** (self.precision_b - self.top_j + 1) - 1


def base_units(cfg):
    """Signed fixed-point elements of R, ascending, zero included"""
    positive = [2 ** (cfg.precision_b - k) for k in range(cfg.top_j, cfg.precision_b + 1)]
    return sorted([-p for p in positive] + [0] + positive)


def generate_base_set(cfg):
    return np.array([cfg.to_value(u) for u in base_units(cfg)])


def projected_size(cfg, omega):
    """Upper bound on |c^omega|: the number of subsets of size <= omega"""
    n_nonzero = 2 * (cfg.precision_b - cfg.top_j + 1)
    return sum(comb(n_nonzero, k) for k in range(0, min(omega, n_nonzero) + 1))


@dataclass(frozen=True)
class Codebook:
    order_omega: int
    centers_units: Tuple[int, ...]
    base: BaseSetConfig

    @property
    def centers(self):
        return np.array([self.base.to_value(u) for u in self.centers_units])

    @property
    def size(self):
        return len(self.centers_units)

    def __contains__(self, value):
        units = self.base.to_units(value)
        return units is not None and units in set(self.centers_units)

    def lattice_index(self, value):
        """Position of `value` on the dense 2**-b lattice; stable across orders"""
        units = self.base.to_units(value)
        if units is None or abs(units) > self.base.lattice_span:
            raise CodebookError(f'{value!r} is not on the codebook lattice')
        return units + self.base.lattice_span

    def value_at(self, lattice_index):
        return self.base.to_value(int(lattice_index) - self.base.lattice_span)

    def to_dict(self):
        return {
            'order_omega': self.order_omega,
            'precision_b': self.base.precision_b,
            'top_j': self.base.top_j,
            'centers_units': list(self.centers_units),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            order_omega=int(data['order_omega']),
            centers_units=tuple(int(u) for u in data['centers_units']),
            base=BaseSetConfig(int(data['precision_b']), int(data['top_j'])),
        )


def generate_additive_set(base, omega, max_centers=DEFAULT_MAX_CENTERS):
    """All sums of at most `omega` distinct elements of R, deduplicated"""
    if omega < 1:
        raise CodebookError(f'order omega must be >= 1, got {omega}')
    projected = projected_size(base, omega)
    if projected > max_centers:
        raise CodebookError(f'order {omega} at precision {base.precision_b} projects '
                            f'{projected} centers, above the cap of {max_centers}')
    elements = [u for u in base_units(base) if u != 0]
    depth = min(omega, len(elements))
    # sums_by_count[k]: sums of exactly k distinct elements seen so far
    sums_by_count = [{0}] + [set() for _ in range(depth)]
    for element in elements:
        for k in range(depth, 0, -1):
            sums_by_count[k].update(s + element for s in sums_by_count[k - 1])
    centers = sorted(set().union(*sums_by_count))
    logger.debug(f'Codebook order {omega} at b={base.precision_b}, j={base.top_j}: {len(centers)} centers')
    return Codebook(order_omega=omega, centers_units=tuple(centers), base=base)


def _preference_key(units):
    # smaller magnitude first, then positive before negative
    return (abs(units), units < 0)


@lru_cache(maxsize=None)
def _preferred_elements(base):
    return tuple(sorted((u for u in base_units(base) if u != 0), key=_preference_key))


@lru_cache(maxsize=None)
def _reachable(base, start, count, remaining):
    """Can exactly `count` distinct elements from position `start` on sum to `remaining`"""
    elements = _preferred_elements(base)
    n = len(elements)
    if count == 0:
        return remaining == 0
    if n - start < count:
        return False
    # magnitudes ascend along the preference order, so the tail is the largest
    if abs(remaining) > sum(abs(e) for e in elements[n - count:]):
        return False
    return any(_reachable(base, i + 1, count - 1, remaining - elements[i]) for i in range(start, n))


def is_representable(value, base, omega):
    """(True, witness) when `value` is a sum of <= omega distinct elements of R

    The witness has the fewest terms; among those, the first in
    smaller-magnitude-then-positive order. Zero is the empty sum.
    """
    target = base.to_units(value)
    if target is None:
        return False, ()
    elements = _preferred_elements(base)
    n = len(elements)
    for count in range(0, min(omega, n) + 1):
        if not _reachable(base, 0, count, target):
            continue
        witness, start, remaining = [], 0, target
        for left in range(count, 0, -1):
            for i in range(start, n):
                if _reachable(base, i + 1, left - 1, remaining - elements[i]):
                    witness.append(elements[i])
                    remaining -= elements[i]
                    start = i + 1
                    break
        return True, tuple(base.to_value(u) for u in witness)
    return False, ()
