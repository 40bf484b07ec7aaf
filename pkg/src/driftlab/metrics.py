"""Information-theoretic safety measures over system distributions.

All quantities use natural logarithms (nats). The zero conventions are the
usual ones for discrete KL-type sums:

  - terms with p(z) = 0 contribute 0
  - a term with p(z) > 0 and q(z) = 0 makes the whole sum +infinity

Infinity is a distinguished, expected value here, not an error: losing support
on reference-supported outcomes is the central event these measures exist to
expose, so it must survive arithmetic, comparison, and serialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .core import ProbVector, SafetyReference, require_same_space
from .errors import ConfigError

_NEG_EPS = 1e-12  # float guard: clamp tiny negative rounding on provably >= 0 sums


def _clamp_nonneg(value: float) -> float:
    if -_NEG_EPS < value < 0.0:
        return 0.0
    return value


def kl_divergence(p: ProbVector, q: ProbVector) -> float:
    """KL(p || q) in nats; +inf when q misses support that p has."""
    require_same_space(p, q)
    pm, qm = p.mass, q.mass
    pos = pm > 0.0
    qp = qm[pos]
    if np.any(qp == 0.0):
        return math.inf
    pp = pm[pos]
    return _clamp_nonneg(float(np.sum(pp * np.log(pp / qp))))


def cross_entropy(p: ProbVector, q: ProbVector) -> float:
    """H(p, q) = -sum p(z) ln q(z); +inf when q misses support that p has."""
    require_same_space(p, q)
    pm, qm = p.mass, q.mass
    pos = pm > 0.0
    qp = qm[pos]
    if np.any(qp == 0.0):
        return math.inf
    return float(-np.sum(pm[pos] * np.log(qp)))


def shannon_entropy(p: ProbVector) -> float:
    """H(p) = -sum p(z) ln p(z), always finite on a finite space."""
    pm = p.mass
    pos = pm[pm > 0.0]
    return _clamp_nonneg(float(-np.sum(pos * np.log(pos))))


def _binary_term(a: float, b: float) -> float:
    if a == 0.0:
        return 0.0
    if b == 0.0:
        return math.inf
    return a * math.log(a / b)


def binarized_kl_lower_bound(p_safe: float, q_safe: float) -> float:
    """Two-outcome KL between (p_safe, 1-p_safe) and (q_safe, 1-q_safe).

    Collapsing outcomes into {safe, unsafe} can only lose discrimination, so
    this is a lower bound on the full divergence whenever p_safe and q_safe
    are the safe-set masses of the compared distributions. q_safe in {0, 1}
    with a mismatched p_safe yields +inf.
    """
    if not (0.0 <= p_safe <= 1.0) or not (0.0 <= q_safe <= 1.0):
        raise ValueError(
            f"safe masses must lie in [0, 1], got p={p_safe!r}, q={q_safe!r}"
        )
    return _clamp_nonneg(
        _binary_term(p_safe, q_safe) + _binary_term(1.0 - p_safe, 1.0 - q_safe)
    )


@dataclass(frozen=True)
class KLDecomposition:
    """Safe-set decomposition of KL(pi_star || pt).

    total = mass_term + in_safe_term + out_safe_term, where mass_term is the
    binarized divergence of the safe-mass split, and the other two terms are
    the conditional divergences inside and outside the safe set weighted by
    pi_star's mass on each side. Components can be individually +inf; the
    identity then holds in the extended reals (no inf - inf can arise because
    every component is nonnegative).
    """

    total: float
    mass_term: float
    in_safe_term: float
    out_safe_term: float


def _conditional_kl_block(
    pm: np.ndarray, qm: np.ndarray, block: np.ndarray, p_block: float, q_block: float
) -> float:
    """pi*(block) * KL(pi*|block || pt|block), with conditioning conventions.

    Zero pi* weight on the block makes the term 0 regardless of pt. Positive
    pi* weight with zero pt mass on the block leaves pt's conditional
    undefined; the term is +inf, which keeps the decomposition identity valid
    because the total divergence is +inf in exactly that situation.
    """
    if p_block == 0.0:
        return 0.0
    if q_block == 0.0:
        return math.inf
    pb = pm[block]
    qb = qm[block]
    pos = pb > 0.0
    qp = qb[pos]
    if np.any(qp == 0.0):
        return math.inf
    pp = pb[pos]
    ratio_log = np.log(pp / qp) + math.log(q_block / p_block)
    return _clamp_nonneg(float(np.sum(pp * ratio_log)))


def kl_safe_set_decomposition(ref: SafetyReference, pt: ProbVector) -> KLDecomposition:
    """Split KL(pi_star || pt) into mass, within-safe, and outside-safe terms."""
    require_same_space(ref.pi_star, pt)
    pm, qm = ref.pi_star.mass, pt.mass
    smask = ref.safe_mask
    p = float(pm[smask].sum())
    q = float(qm[smask].sum())
    pc = float(pm[~smask].sum())
    qc = float(qm[~smask].sum())
    mass_term = binarized_kl_lower_bound(p, min(1.0, q))
    in_term = _conditional_kl_block(pm, qm, smask, p, q)
    out_term = _conditional_kl_block(pm, qm, ~smask, pc, qc)
    total = kl_divergence(ref.pi_star, pt)
    return KLDecomposition(total, mass_term, in_term, out_term)


class CoverageResult(NamedTuple):
    visible_set: tuple[int, ...]
    covered_mass: float


def coverage(ref: SafetyReference, pt: ProbVector, tau: float) -> CoverageResult:
    """Outcomes the system still trains on, and pi_star's mass on them.

    The visible set is {z : pt(z) >= tau}; covered_mass is pi_star of that
    set. Shrinking coverage means reference-relevant regions have dropped
    below the sampling floor and will stop receiving maintenance signal.
    """
    require_same_space(ref.pi_star, pt)
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"coverage threshold must lie in (0, 1], got {tau!r}")
    visible = np.nonzero(pt.mass >= tau)[0]
    covered = float(ref.pi_star.mass[visible].sum()) if visible.size else 0.0
    return CoverageResult(tuple(int(i) for i in visible), covered)


class AbsenceProbability(NamedTuple):
    exact: float
    bound: float


def absence_probability(mass: float, n: int) -> AbsenceProbability:
    """Probability that n i.i.d. draws all miss a set of the given mass.

    exact = (1 - mass)^n, bound = exp(-n * mass); exact <= bound always.
    When n * mass is order one the exact value is substantial, which is the
    regime where rare regions silently vanish from the training signal.
    """
    if not (0.0 <= mass <= 1.0):
        raise ValueError(f"set mass must lie in [0, 1], got {mass!r}")
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise ValueError(f"sample count must be a positive integer, got {n!r}")
    exact = (1.0 - mass) ** int(n)
    bound = math.exp(-float(n) * mass)
    return AbsenceProbability(float(exact), float(bound))


def mutual_information_plugin(joint: np.ndarray) -> float:
    """Plug-in mutual information of a joint probability table, in nats."""
    arr = np.asarray(joint, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"joint table must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("joint table contains non-finite entries")
    if np.any(arr < 0.0):
        raise ValueError(f"joint table contains a negative entry ({float(arr.min())})")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"joint table sums to {total!r}, not 1 within 1e-9")
    rows = arr.sum(axis=1)
    cols = arr.sum(axis=0)
    pos = arr > 0.0
    prod = np.outer(rows, cols)[pos]
    return _clamp_nonneg(float(np.sum(arr[pos] * np.log(arr[pos] / prod))))


# ---------------------------------------------------------------------------
# Decay estimation from trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayEstimate:
    """Fitted no-gain parameters for a monitored set.

    Pairs (x, y) = (mass at round t, mass at round t+1) are taken only from
    rounds whose dataset missed the set's neighborhood entirely, then
    y = (1 - eta) * x + r is fitted by ordinary least squares with eta clamped
    to [0, 1] and r to [0, inf).
    """

    eta_hat: float
    r_hat: float
    n_pairs: int
    max_residual: float


def estimate_decay(trajectory, a_set: Iterable[int], rule=None) -> DecayEstimate:
    """Fit the conditional decay law for set A from a recorded trajectory.

    The trajectory must have monitored A (run(..., monitors={name: A})); only
    rounds where the consumed dataset had no sample in the dilated
    neighborhood of A qualify, which is what makes the fit measure decay
    rather than resampling noise. Raises ValueError with "insufficient
    absence events" when fewer than two rounds qualify.
    """
    target = tuple(int(i) for i in sorted(set(int(i) for i in a_set)))
    name = None
    for mon_name, indices in trajectory.monitors.items():
        if tuple(indices) == target:
            name = mon_name
            break
    if name is None:
        raise ValueError(
            f"trajectory does not monitor the set {target}; pass it via monitors= at run time"
        )
    xs: list[float] = []
    ys: list[float] = []
    records = trajectory.records
    for i in range(1, len(records)):
        if records[i].monitor_absent.get(name):
            xs.append(records[i - 1].monitor_mass[name])
            ys.append(records[i].monitor_mass[name])
    if len(xs) < 2:
        raise ValueError(
            f"insufficient absence events: {len(xs)} qualifying rounds, need at least 2"
        )
    x = np.asarray(xs)
    y = np.asarray(ys)
    x_mean = float(x.mean())
    y_mean = float(y.mean())
    sxx = float(np.sum((x - x_mean) ** 2))
    if sxx == 0.0:
        slope = 0.0
    else:
        slope = float(np.sum((x - x_mean) * (y - y_mean))) / sxx
    intercept = y_mean - slope * x_mean
    eta = min(1.0, max(0.0, 1.0 - slope))
    r = max(0.0, intercept)
    fitted = (1.0 - eta) * x + r
    max_residual = float(np.max(np.abs(y - fitted)))
    return DecayEstimate(eta, r, len(xs), max_residual)


# ---------------------------------------------------------------------------
# Probe registry
# ---------------------------------------------------------------------------

ProbeFn = Callable[[int, ProbVector, object, SafetyReference], float]


@dataclass(frozen=True)
class MetricProbe:
    """Named per-round measurement: (round, P_t, population, reference) -> real."""

    name: str
    evaluator: ProbeFn


def _probe_kl(t, pt, pop, ref):
    return kl_divergence(ref.pi_star, pt)


def _probe_safe_mass(t, pt, pop, ref):
    return float(pt.mass[ref.safe_mask].sum())


def _probe_internal_entropy(t, pt, pop, ref):
    return shannon_entropy(pt)


def _probe_cross_entropy(t, pt, pop, ref):
    return cross_entropy(ref.pi_star, pt)


def _probe_mass_term(t, pt, pop, ref):
    return kl_safe_set_decomposition(ref, pt).mass_term


def _probe_in_safe(t, pt, pop, ref):
    return kl_safe_set_decomposition(ref, pt).in_safe_term


def _probe_out_safe(t, pt, pop, ref):
    return kl_safe_set_decomposition(ref, pt).out_safe_term


_SIMPLE_PROBES: dict[str, ProbeFn] = {
    "kl_safety": _probe_kl,
    "safe_mass": _probe_safe_mass,
    "internal_entropy": _probe_internal_entropy,
    "cross_entropy": _probe_cross_entropy,
    "mass_term": _probe_mass_term,
    "in_safe_term": _probe_in_safe,
    "out_safe_term": _probe_out_safe,
}


def probe_names() -> tuple[str, ...]:
    return tuple(_SIMPLE_PROBES) + ("coverage",)


def resolve_probe(name: str, default_tau: float | None = None) -> MetricProbe:
    """Look up a probe by registry name.

    "coverage" takes the default threshold (1/(10N) at experiment level);
    "coverage@0.001" pins an explicit threshold in the name itself. Unknown
    names raise ConfigError listing the registry.
    """
    if name in _SIMPLE_PROBES:
        return MetricProbe(name, _SIMPLE_PROBES[name])
    if name == "coverage" or name.startswith("coverage@"):
        if name == "coverage":
            if default_tau is None:
                raise ConfigError(
                    "probe 'coverage' needs a default threshold; pass default_tau "
                    "or use an explicit 'coverage@<tau>' name"
                )
            tau = float(default_tau)
        else:
            try:
                tau = float(name.split("@", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"unparseable coverage threshold in {name!r}") from exc
        if not (0.0 < tau <= 1.0):
            raise ConfigError(f"coverage threshold must lie in (0, 1], got {tau}")

        def _probe_coverage(t, pt, pop, ref, _tau=tau):
            return coverage(ref, pt, _tau).covered_mass

        return MetricProbe(name, _probe_coverage)
    raise ConfigError(
        f"unknown probe {name!r}; registry: {', '.join(probe_names())} "
        "(coverage also accepts coverage@<tau>)"
    )


def resolve_probes(
    names: Iterable[str], default_tau: float | None = None
) -> tuple[MetricProbe, ...]:
    return tuple(resolve_probe(n, default_tau) for n in names)
