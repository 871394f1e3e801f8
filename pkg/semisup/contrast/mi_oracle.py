"""
Exact numerical checks of the contrastive mutual-information bound on small
discrete joint distributions.

For a joint p(r, r') the critic is f(r, r') = k p(r'|r) / p(r'). The expected
contrastive loss over an anchor pair (r, r') drawn from the joint and n - 1
negatives drawn i.i.d. from p(r') is computed by exhaustive enumeration, and
the bound MI(R; R') >= log n - loss is checked to machine precision.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy.special import entr, rel_entr

from semisup.contrast.config import statsd
from semisup.contrast.exc import DomainError, EnumerationTooLarge, InvalidJoint
from semisup.contrast.numerics import Rng

SUM_TOLERANCE = 1e-12
ENUMERATION_LIMIT = 10**7


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats, 0 log 0 := 0."""
    return float(np.sum(entr(np.asarray(p, dtype=np.float64))))


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """
    A finite joint table p(r, r'), rows indexed by r and columns by r'.

    Outcomes with zero marginal probability are pruned on construction, so
    both marginals are strictly positive.
    """

    probs: np.ndarray

    def __post_init__(self):
        table = np.array(self.probs, dtype=np.float64)
        if table.ndim != 2 or table.size == 0:
            raise InvalidJoint("joint table must be a non-empty matrix")
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise InvalidJoint("joint table entries must be finite and >= 0")
        total = table.sum()
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InvalidJoint("joint table sums to {!r}, not 1".format(total))
        table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
        table.setflags(write=False)
        object.__setattr__(self, "probs", table)

    @property
    def m_r(self) -> int:
        return self.probs.shape[0]

    @property
    def m_s(self) -> int:
        return self.probs.shape[1]

    @property
    def p_r(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    @property
    def p_s(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def entropies(self) -> Tuple[float, float]:
        """(H(R), H(R')) in nats."""
        return entropy(self.p_r), entropy(self.p_s)

    def transpose(self) -> "DiscreteJoint":
        return DiscreteJoint(self.probs.T)

    @classmethod
    def independent(cls, p_r, p_s) -> "DiscreteJoint":
        return cls(np.outer(np.asarray(p_r, float), np.asarray(p_s, float)))

    @classmethod
    def diagonal_uniform(cls, m: int) -> "DiscreteJoint":
        return cls(np.eye(m) / m)

    @classmethod
    def random(cls, rng: Rng, m_r: int, m_s: int, concentration: float = 1.0) -> "DiscreteJoint":
        """A Dirichlet-distributed joint; renormalized so the sum is exact to rounding."""
        table = rng.generator.dirichlet(np.full(m_r * m_s, concentration))
        table = table / table.sum()
        return cls(table.reshape(m_r, m_s))


def mutual_information(j: DiscreteJoint) -> float:
    """MI(R; R') in nats."""
    return float(np.sum(rel_entr(j.probs, np.outer(j.p_r, j.p_s))))


def critic_matrix(j: DiscreteJoint, k: float = 1.0) -> np.ndarray:
    """f(r, r') = k p(r'|r) / p(r') for all outcome pairs."""
    if not k > 0:
        raise DomainError("k must be > 0, got {}".format(k))
    return k * j.probs / np.outer(j.p_r, j.p_s)


def critic_value(j: DiscreteJoint, r: int, r_prime: int, k: float = 1.0) -> float:
    if not (0 <= r < j.m_r and 0 <= r_prime < j.m_s):
        raise IndexError("outcome ({}, {}) outside {}x{}".format(r, r_prime, j.m_r, j.m_s))
    return float(k * (j.probs[r, r_prime] / j.p_r[r]) / j.p_s[r_prime])


def _negative_configurations(m_s: int, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(m_s), repeat=count)), dtype=np.int64)


def exact_infonce(j: DiscreteJoint, n: int, k: float = 1.0) -> float:
    """
    E[-log f(r, r') / (f(r, r') + sum_j f(r, r'_j))] with (r, r') ~ p and the n - 1
    negatives r'_j ~ p(r') i.i.d., by enumerating every anchor pair and every
    ordered negative configuration weighted by its exact probability.
    """
    if n < 2:
        raise DomainError("n must be >= 2, got {}".format(n))
    terms = j.m_s ** (n - 1)
    if terms > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(terms, ENUMERATION_LIMIT)

    f = critic_matrix(j, k)
    configs = _negative_configurations(j.m_s, n - 1)
    config_probs = np.prod(j.p_s[configs], axis=1)

    loss = 0.0
    for r in range(j.m_r):
        negatives = f[r][configs].sum(axis=1)
        for s in range(j.m_s):
            p = j.probs[r, s]
            if p == 0:
                continue
            positive = f[r, s]
            per_config = np.log1p(negatives / positive)
            loss += p * float(np.dot(config_probs, per_config))
    return loss


def monte_carlo_infonce(
    j: DiscreteJoint, n: int, samples: int, rng: Rng, k: float = 1.0
) -> Tuple[float, float]:
    """
    Sampling estimate of `exact_infonce`.

    :return: (mean, standard error)
    """
    if n < 2:
        raise DomainError("n must be >= 2, got {}".format(n))
    if samples < 2:
        raise DomainError("samples must be >= 2, got {}".format(samples))
    g = rng.generator
    f = critic_matrix(j, k)
    flat = g.choice(j.probs.size, size=samples, p=j.probs.ravel())
    r, s = np.divmod(flat, j.m_s)
    negatives = g.choice(j.m_s, size=(samples, n - 1), p=j.p_s)
    neg_sum = f[r[:, None], negatives].sum(axis=1)
    values = np.log1p(neg_sum / f[r, s])
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(samples))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    mi: float
    log_n: float
    gap: float
    passed: bool
    approx_constant: float


def verify_bound(j: DiscreteJoint, n: int, tol: float = 1e-9) -> BoundReport:
    """
    gap = exact_infonce + MI - log n; passes iff gap >= -tol.

    `approx_constant` is log(n - 1), the additive constant of the approximate
    derivation, reported for comparison only.
    """
    lhs = exact_infonce(j, n)
    mi = mutual_information(j)
    log_n = math.log(n)
    gap = lhs + mi - log_n
    return BoundReport(
        lhs=lhs,
        mi=mi,
        log_n=log_n,
        gap=gap,
        passed=bool(gap >= -tol),
        approx_constant=math.log(n - 1),
    )


@dataclass(frozen=True)
class BoundCase:
    seed: int
    m_r: int
    m_s: int
    n: int
    report: BoundReport

    CSV_HEADER = ("seed", "m_r", "m_s", "n", "mi_nats", "infonce", "log_n", "gap", "pass")

    def csv_row(self) -> Tuple:
        r = self.report
        return (
            self.seed,
            self.m_r,
            self.m_s,
            self.n,
            r.mi,
            r.lhs,
            r.log_n,
            r.gap,
            "true" if r.passed else "false",
        )


class BoundSweep:
    """
    A seeded sweep of the bound over random joints.

    Every case draws its own seed from the sweep seed and is reproducible from
    its index and that seed. Every fifth case is a product (independent)
    joint, where the bound is tight.
    """

    def __init__(
        self,
        joints: int = 200,
        max_outcomes: int = 5,
        max_n: int = 4,
        tol: float = 1e-9,
        seed: int = 0,
        logger: logging.Logger = None,
    ):
        if joints < 1:
            raise DomainError("joints must be >= 1")
        if max_outcomes < 1:
            raise DomainError("max_outcomes must be >= 1")
        if max_n < 2:
            raise DomainError("max_n must be >= 2")
        self.joints = joints
        self.max_outcomes = max_outcomes
        self.max_n = max_n
        self.tol = tol
        self.seed = seed
        self.logger = logger or logging.getLogger(__name__)

    def case_seeds(self) -> List[int]:
        children = np.random.SeedSequence(self.seed).spawn(self.joints)
        return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]

    @staticmethod
    def make_case(index: int, case_seed: int, max_outcomes: int, max_n: int):
        rng = Rng(case_seed)
        g = rng.generator
        m_r = int(g.integers(1, max_outcomes + 1))
        m_s = int(g.integers(1, max_outcomes + 1))
        n = int(g.integers(2, max_n + 1))
        if index % 5 == 4:
            joint = DiscreteJoint.independent(
                g.dirichlet(np.ones(m_r)), g.dirichlet(np.ones(m_s))
            )
            # Renormalize away the rounding of the outer product.
            joint = DiscreteJoint(joint.probs / joint.probs.sum())
        else:
            joint = DiscreteJoint.random(rng.derive("table"), m_r, m_s)
        return joint, n

    def run(self) -> Iterator[BoundCase]:
        for index, case_seed in enumerate(self.case_seeds()):
            joint, n = self.make_case(index, case_seed, self.max_outcomes, self.max_n)
            report = verify_bound(joint, n, self.tol)
            statsd.increment("oracle.bound.case")
            if not report.passed:
                statsd.increment("oracle.bound.failure")
                self.logger.error(
                    "Bound violated: seed={} m_r={} m_s={} n={} gap={!r}".format(
                        case_seed, joint.m_r, joint.m_s, n, report.gap
                    )
                )
            else:
                self.logger.debug(
                    "seed={} m_r={} m_s={} n={} gap={:.3e}".format(
                        case_seed, joint.m_r, joint.m_s, n, report.gap
                    )
                )
            yield BoundCase(case_seed, joint.m_r, joint.m_s, n, report)


def first_failure(cases: List[BoundCase]) -> Optional[BoundCase]:
    return next((c for c in cases if not c.report.passed), None)
