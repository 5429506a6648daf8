"""
Fix-round engine.

Each round fixes free weights onto the most popular codebook center, measured
in sigmas (|mu - c| / sigma), taking the longest distance-ordered prefix whose
mean distance stays under delta. When nothing qualifies the codebook order and
delta escalate together. Rounds continue until ceil(N * p_t) weights are fixed.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from pwfn.bayes_weights import SIGMA_FLOOR
from pwfn.codebook import DEFAULT_MAX_CENTERS, generate_additive_set
from pwfn.errors import ClusteringError, CodebookError, ConfigError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (0.3, 0.5, 0.65, 0.775, 0.875, 0.95, 0.98, 0.99, 1.0)
DEFAULT_DELTA = 1.0


def default_schedule(rounds_T):
    """The nine-round curve, resampled when a different round count is asked for"""
    if rounds_T < 1:
        raise ConfigError(f'rounds_T must be >= 1, got {rounds_T}')
    if rounds_T == len(DEFAULT_SCHEDULE):
        return DEFAULT_SCHEDULE
    known = np.arange(1, len(DEFAULT_SCHEDULE) + 1) / len(DEFAULT_SCHEDULE)
    wanted = np.arange(1, rounds_T + 1) / rounds_T
    fractions = np.interp(wanted, known, DEFAULT_SCHEDULE)
    fractions[-1] = 1.0
    return tuple(float(p) for p in fractions)


@dataclass(frozen=True)
class FixingSchedule:
    fractions: Tuple[float, ...] = DEFAULT_SCHEDULE
    epochs_per_round: int = 3

    def __post_init__(self):
        fractions = tuple(float(p) for p in self.fractions)
        object.__setattr__(self, 'fractions', fractions)
        if not fractions:
            raise ConfigError('Fixing schedule is empty')
        if any(not 0.0 < p <= 1.0 for p in fractions):
            raise ConfigError(f'Schedule fractions must lie in (0, 1], got {list(fractions)}')
        if any(b <= a for a, b in zip(fractions, fractions[1:])):
            raise ConfigError(f'Schedule fractions must be strictly increasing, got {list(fractions)}')
        if fractions[-1] != 1.0:
            raise ConfigError(f'Schedule must end at 1.0, got {fractions[-1]}')
        if self.epochs_per_round < 0:
            raise ConfigError(f'epochs_per_round must be >= 0, got {self.epochs_per_round}')

    @property
    def rounds_T(self):
        return len(self.fractions)

    def target(self, round_t, n_weights):
        """Fixed-weight count required once round `round_t` (1-based) completes"""
        p = self.fractions[round_t - 1]
        return min(n_weights, math.ceil(round(n_weights * p, 9)))


@dataclass(frozen=True)
class Partition:
    fixed_ids: frozenset
    free_ids: frozenset
    round_t: int = 0

    @classmethod
    def from_store(cls, store, round_t=0):
        fixed = np.flatnonzero(store.fixed)
        free = np.flatnonzero(~store.fixed)
        return cls(frozenset(fixed.tolist()), frozenset(free.tolist()), round_t)


@dataclass
class AssignmentRecord:
    round_t: int
    pass_index: int
    omega: int
    delta: float
    center: float
    cluster_index: int
    member_ids: Tuple[int, ...]
    member_mus: Tuple[float, ...]
    sigma: float

    @property
    def member_count(self):
        return len(self.member_ids)

    def to_dict(self):
        return {
            'round': self.round_t,
            'pass': self.pass_index,
            'omega': self.omega,
            'delta': self.delta,
            'center': self.center,
            'cluster_index': self.cluster_index,
            'member_ids': list(self.member_ids),
            'member_mus': list(self.member_mus),
            'sigma': self.sigma,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            round_t=int(data['round']),
            pass_index=int(data['pass']),
            omega=int(data['omega']),
            delta=float(data['delta']),
            center=float(data['center']),
            cluster_index=int(data['cluster_index']),
            member_ids=tuple(int(i) for i in data['member_ids']),
            member_mus=tuple(float(m) for m in data['member_mus']),
            sigma=float(data['sigma']),
        )


@dataclass
class RoundState:
    omega: int = 0
    delta: float = DEFAULT_DELTA / 2
    assignments_this_round: List[AssignmentRecord] = field(default_factory=list)

    def escalate(self):
        self.omega += 1
        self.delta *= 2.0


# --- Distances and votes ---

def d_prob(weight, center):
    """How many sigmas `center` lies from the weight's mean"""
    if not weight.sigma > 0:
        raise NumericalError(f'd_prob needs sigma > 0, got {weight.sigma}')
    return abs(weight.mu - center) / weight.sigma


def d_prob_matrix(mus, sigmas, centers):
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas <= 0):
        raise NumericalError('d_prob needs every sigma > 0')
    return np.abs(np.asarray(mus)[:, None] - np.asarray(centers)[None, :]) / sigmas[:, None]


def preference_order(centers):
    """Center positions ordered smaller magnitude first, positive before negative"""
    centers = np.asarray(centers)
    return np.lexsort((centers < 0, np.abs(centers)))


def nearest_centers(mus, sigmas, centers):
    """Index of the center with the smallest d_prob for each weight"""
    order = preference_order(centers)
    distances = d_prob_matrix(mus, sigmas, np.asarray(centers)[order])
    return order[np.argmin(distances, axis=1)]


def vote_popular_center(mus, sigmas, centers):
    """(k*, counts): the center nearest to the most free weights"""
    mus = np.asarray(mus, dtype=np.float64)
    if mus.size == 0:
        raise ClusteringError('No free weights left to vote')
    centers = np.asarray(centers)
    if centers.size == 0:
        raise ClusteringError('Codebook is empty')
    counts = np.bincount(nearest_centers(mus, sigmas, centers), minlength=centers.size)
    order = preference_order(centers)
    k_star = int(order[np.argmax(counts[order])])
    return k_star, counts


def order_by_distance(ids, mus, sigmas, center):
    """Free weights sorted by d_prob to `center`, ties by ascending index"""
    ids = np.asarray(ids)
    distances = d_prob_matrix(mus, sigmas, [center])[:, 0]
    order = np.lexsort((ids, distances))
    return ids[order], distances[order]


def prefix_select(distances, delta):
    """Length of the longest prefix whose mean distance is <= delta"""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size == 0:
        return 0
    means = np.cumsum(distances) / np.arange(1, distances.size + 1)
    within = np.flatnonzero(means <= delta)
    return int(within[-1]) + 1 if within.size else 0


def std_of_members(mus):
    """Population standard deviation, floored to keep sigma positive"""
    mus = np.asarray(mus, dtype=np.float64)
    if mus.size == 0:
        raise ClusteringError('std_of_members needs at least one member')
    return max(float(np.std(mus)), SIGMA_FLOOR)


@lru_cache(maxsize=64)
def _codebook_for(base, omega, max_centers):
    try:
        return generate_additive_set(base, omega, max_centers)
    except CodebookError as e:
        raise ClusteringError(f'Escalation to order {omega} aborted: {e}') from e


# --- Rounds ---

def fix_round(store, partition, schedule, base, delta0=DEFAULT_DELTA, max_centers=DEFAULT_MAX_CENTERS):
    """Run round partition.round_t + 1; mutates `store`, returns (Partition, RoundState)"""
    round_t = partition.round_t + 1
    if round_t > schedule.rounds_T:
        raise ConfigError(f'Round {round_t} is past the last round {schedule.rounds_T}')
    n_weights = store.n_weights
    target = schedule.target(round_t, n_weights)
    state = RoundState(omega=0, delta=delta0 / 2)
    logger.info(f'Round {round_t}: fixing up to {target} of {n_weights} weights '
                f'({int(store.fixed.sum())} already fixed)')

    escalate = True
    codebook = None
    pass_index = 0
    while int(store.fixed.sum()) < target:
        if escalate:
            state.escalate()
            codebook = _codebook_for(base, state.omega, max_centers)
            logger.debug(f'Round {round_t}: order {state.omega}, delta {state.delta:g}, '
                         f'{codebook.size} centers')
        centers = codebook.centers
        free_ids = np.flatnonzero(~store.fixed)
        mus = store.mu[free_ids]
        sigmas = store.sigma[free_ids]

        k_star, _ = vote_popular_center(mus, sigmas, centers)
        center = float(centers[k_star])
        ordered_ids, distances = order_by_distance(free_ids, mus, sigmas, center)
        length = prefix_select(distances, state.delta)
        if length == 0:
            escalate = True
            continue
        escalate = False

        members = ordered_ids[:length]
        member_mus = store.mu[members].copy()
        sigma = std_of_members(member_mus)
        index = codebook.lattice_index(center)
        store.mu[members] = center
        store.sigma[members] = sigma
        store.fixed[members] = True
        store.cluster_index[members] = index

        pass_index += 1
        record = AssignmentRecord(
            round_t=round_t,
            pass_index=pass_index,
            omega=state.omega,
            delta=state.delta,
            center=center,
            cluster_index=int(index),
            member_ids=tuple(int(i) for i in members),
            member_mus=tuple(float(m) for m in member_mus),
            sigma=sigma,
        )
        state.assignments_this_round.append(record)
        logger.debug(f'Round {round_t} pass {pass_index}: {length} weights -> {center:g} '
                     f'(omega {state.omega}, delta {state.delta:g})')

    logger.info(f'Round {round_t} done: {int(store.fixed.sum())} fixed after {pass_index} passes, '
                f'final order {state.omega}')
    return Partition.from_store(store, round_t), state


def achieved_codebook(base, omega, max_centers=DEFAULT_MAX_CENTERS):
    """Codebook of the highest order a run reached"""
    return _codebook_for(base, omega, max_centers)
