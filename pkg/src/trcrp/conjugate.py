"""Normal-InverseGamma conjugacy in log space.

Every (series, regime) cell of the model carries a Normal likelihood with a
Normal-InverseGamma prior on its (mean, variance).  Conjugacy means a cell
never stores its data: a (count, sum, sum of squares) triple is a sufficient
summary, posterior parameters are closed-form, and the posterior predictive
is a Student-T.  The lag-matching cohesion weight is a product of the same
Student-T predictives, one per lag offset, restricted to observed lag cells.

All densities are log densities; products elsewhere in the model are sums of
the values computed here.  The hot path (:func:`predictive_logpdf_raw`) is
deliberately flat scalar code: the samplers call it millions of times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "NigHyper",
    "NigStats",
    "StudentT",
    "posterior_params",
    "posterior_predictive",
    "predictive_logpdf",
    "predictive_logpdf_raw",
    "sample_predictive",
    "cohesion_logpdf",
    "marginal_loglik",
]

_LOG_PI = math.log(math.pi)

# lgamma is the dominant cost of a predictive evaluation; shape parameters
# repeat heavily (a0 + count/2 for small integer counts), so memoize.
_LGAMMA_CACHE: dict[float, float] = {}


def _lgamma(x: float) -> float:
    y = _LGAMMA_CACHE.get(x)
    if y is None:
        y = math.lgamma(x)
        if len(_LGAMMA_CACHE) < 1_000_000:
            _LGAMMA_CACHE[x] = y
    return y


@dataclass(frozen=True)
class NigHyper:
    """Normal-InverseGamma hyperparameters (location, scale multiplier, shape, rate)."""

    m: float
    V: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.V > 0 and self.a > 0 and self.b > 0):
            raise ValueError(f"V, a, b must be positive, got {self}")
        if not math.isfinite(self.m):
            raise ValueError(f"location must be finite, got {self.m}")

    def replace(self, **kwargs) -> "NigHyper":
        fields = {"m": self.m, "V": self.V, "a": self.a, "b": self.b}
        fields.update(kwargs)
        return NigHyper(**fields)


class NigStats:
    """Incrementally maintained sufficient statistics for one cell.

    ``ops`` counts incorporate/unincorporate calls since the last rebuild; the
    owning bookkeeping layer recomputes the cell from raw data once it exceeds
    a threshold, bounding floating-point drift from exact subtraction.
    """

    __slots__ = ("count", "sum", "sum_sq", "ops")

    def __init__(self, count: int = 0, sum: float = 0.0, sum_sq: float = 0.0):
        self.count = count
        self.sum = sum
        self.sum_sq = sum_sq
        self.ops = 0

    def incorporate(self, x: float) -> None:
        self.count += 1
        self.sum += x
        self.sum_sq += x * x
        self.ops += 1

    def unincorporate(self, x: float) -> None:
        if self.count < 1:
            raise ValueError("unincorporate on empty stats")
        self.count -= 1
        if self.count == 0:
            self.sum = 0.0
            self.sum_sq = 0.0
        else:
            self.sum -= x
            self.sum_sq -= x * x
        self.ops += 1

    def copy(self) -> "NigStats":
        return NigStats(self.count, self.sum, self.sum_sq)

    def reset(self) -> None:
        self.count = 0
        self.sum = 0.0
        self.sum_sq = 0.0
        self.ops = 0

    def __repr__(self):
        return f"NigStats(count={self.count}, sum={self.sum!r}, sum_sq={self.sum_sq!r})"

    def __eq__(self, other):
        return (
            isinstance(other, NigStats)
            and self.count == other.count
            and self.sum == other.sum
            and self.sum_sq == other.sum_sq
        )


@dataclass(frozen=True)
class StudentT:
    """Location-scale Student-T: ``dof`` degrees of freedom, squared scale."""

    dof: float
    loc: float
    scale_sq: float

    def logpdf(self, x: float) -> float:
        return t_logpdf(x, self.dof, self.loc, self.scale_sq)

    def sample(self, rng) -> float:
        return self.loc + math.sqrt(self.scale_sq) * rng.standard_t(self.dof)


def t_logpdf(x: float, dof: float, loc: float, scale_sq: float) -> float:
    """Log density of the location-scale Student-T at ``x``."""
    half = 0.5 * dof
    z = x - loc
    return (
        _lgamma(half + 0.5)
        - _lgamma(half)
        - 0.5 * math.log(dof * scale_sq)
        - 0.5 * _LOG_PI
        - (half + 0.5) * math.log1p(z * z / (dof * scale_sq))
    )


def posterior_params(hyper: NigHyper, stats: NigStats) -> NigHyper:
    """Condition ``hyper`` on the data summarized by ``stats``.

    With n observations of sum s and sum of squares q:
    V' = 1/(1/V + n), m' = V'(m/V + s), a' = a + n/2, and the rate update is
    computed in centered form, b' = b + (q - s^2/n)/2 + n(s/n - m)^2/(2(1+nV)),
    which is algebraically the textbook b + (m^2/V + q - m'^2/V')/2 but does
    not cancel catastrophically for tight data.
    """
    n = stats.count
    if n == 0:
        return hyper
    v_post = 1.0 / (1.0 / hyper.V + n)
    m_post = v_post * (hyper.m / hyper.V + stats.sum)
    a_post = hyper.a + 0.5 * n
    mean = stats.sum / n
    centered = stats.sum_sq - stats.sum * mean
    if centered < 0.0:
        centered = 0.0
    shift = mean - hyper.m
    b_post = hyper.b + 0.5 * centered + 0.5 * n * shift * shift / (1.0 + n * hyper.V)
    return NigHyper(m_post, v_post, a_post, b_post)


def posterior_predictive(hyper: NigHyper, stats: NigStats) -> StudentT:
    """Student-T posterior predictive of the next observation for this cell."""
    post = posterior_params(hyper, stats)
    return StudentT(2.0 * post.a, post.m, post.b * (1.0 + post.V) / post.a)


def predictive_logpdf(hyper: NigHyper, stats: NigStats, x: float) -> float:
    """Log posterior-predictive density at ``x`` for the given cell."""
    return predictive_logpdf_raw(
        hyper.m, hyper.V, hyper.a, hyper.b, stats.count, stats.sum, stats.sum_sq, x
    )


def predictive_logpdf_raw(
    m0: float,
    v0: float,
    a0: float,
    b0: float,
    count: int,
    total: float,
    total_sq: float,
    x: float,
) -> float:
    # posterior_params + t_logpdf fused; no intermediate objects on the hot path.
    if count == 0:
        m_post, v_post, a_post, b_post = m0, v0, a0, b0
    else:
        v_post = 1.0 / (1.0 / v0 + count)
        m_post = v_post * (m0 / v0 + total)
        a_post = a0 + 0.5 * count
        mean = total / count
        centered = total_sq - total * mean
        if centered < 0.0:
            centered = 0.0
        shift = mean - m0
        b_post = b0 + 0.5 * centered + 0.5 * count * shift * shift / (1.0 + count * v0)
    scale_sq = b_post * (1.0 + v_post) / a_post
    dof = 2.0 * a_post
    z = x - m_post
    lg = _LGAMMA_CACHE.get(a_post)
    if lg is None:
        lg = math.lgamma(a_post)
        _LGAMMA_CACHE[a_post] = lg
    lg_half = _LGAMMA_CACHE.get(a_post + 0.5)
    if lg_half is None:
        lg_half = math.lgamma(a_post + 0.5)
        _LGAMMA_CACHE[a_post + 0.5] = lg_half
    return (
        lg_half
        - lg
        - 0.5 * math.log(dof * scale_sq)
        - 0.5 * _LOG_PI
        - (a_post + 0.5) * math.log1p(z * z / (dof * scale_sq))
    )


def sample_predictive(hyper: NigHyper, stats: NigStats, rng) -> float:
    """Draw one value from the cell's Student-T posterior predictive."""
    return posterior_predictive(hyper, stats).sample(rng)


def cohesion_logpdf(values, observed, hypers, stats) -> float:
    """Lag-matching cohesion weight, in log space.

    ``values[i-1]`` is the query value at lag offset i (the value i steps
    back), ``observed[i-1]`` its observation flag, ``hypers[i-1]`` and
    ``stats[i-1]`` the cell for that offset.  Unobserved offsets contribute
    nothing; an empty window (p = 0) returns 0, reducing the model to a plain
    CRP mixture.
    """
    total = 0.0
    for i in range(len(values)):
        if observed[i]:
            h = hypers[i]
            s = stats[i]
            total += predictive_logpdf_raw(
                h.m, h.V, h.a, h.b, s.count, s.sum, s.sum_sq, values[i]
            )
    return total


def marginal_loglik(hyper: NigHyper, stats: NigStats) -> float:
    """Log marginal likelihood of the cell's data with parameters integrated out.

    Equals the sum of sequential one-step predictive log densities in any
    order (exchangeability), but costs O(1) given the sufficient statistics.
    """
    n = stats.count
    if n == 0:
        return 0.0
    post = posterior_params(hyper, stats)
    return (
        -0.5 * n * math.log(2.0 * math.pi)
        + 0.5 * (math.log(post.V) - math.log(hyper.V))
        + _lgamma(post.a)
        - _lgamma(hyper.a)
        + hyper.a * math.log(hyper.b)
        - post.a * math.log(post.b)
    )
