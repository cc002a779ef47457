"""Synthetic labeled corpora drawn from published per-class feature marginals.

Each session is built in two steps: a target feature vector is sampled from
the class profile, then a raw exchange timeline is laid out whose extracted
features reproduce that vector exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from .corpus import Corpus, Exchange, Label, Session
from .errors import InfeasibleTargetError
from .features import FeatureId as F
from .features import FeatureVector

# Lower bounds kept by the consistency repairs; see sample_feature_vector.
MIN_UTTERANCE_DURATION = 0.1
MIN_SPEECH_RATE = 3.0


class CorpusStyle(str, enum.Enum):
    LEGO = "LEGO"
    LG2014 = "LG2014"

    @property
    def prompt_duration(self) -> float:
        return 10.25 if self is CorpusStyle.LEGO else 13.29

    @property
    def default_priors(self) -> tuple[float, float]:
        # (novice, expert) from the corpus class counts.
        return (235 / 315, 80 / 315) if self is CorpusStyle.LEGO else (25 / 56, 31 / 56)


@dataclass(frozen=True)
class Continuous:
    """Truncated normal with the given mean and standard deviation.

    ``lower=None`` means untruncated. ``median`` is kept for reference only.
    """

    mu: float
    median: float
    sigma: float
    lower: float | None = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.lower is not None and self.mu <= self.lower:
            raise ValueError("mean must exceed the truncation bound")

    @property
    def loc(self) -> float:
        return _truncnorm_loc(self.mu, self.sigma, self.lower)

    def sample(self, rng: np.random.Generator) -> float:
        return _rejection_sample(self.loc, self.sigma, self.lower, rng)


def _rejection_sample(loc, sigma, lower, rng) -> float:
    if sigma == 0:
        return float(max(loc, lower)) if lower is not None else float(loc)
    while True:
        x = rng.normal(loc, sigma)
        if lower is None or x >= lower:
            return float(x)


@lru_cache(maxsize=None)
def _truncnorm_loc(mu: float, sigma: float, lower: float | None) -> float:
    """Location of N(loc, sigma) truncated at ``lower`` whose mean is ``mu``."""
    if lower is None or sigma == 0:
        return mu

    def gap(m):
        return stats.truncnorm.mean((lower - m) / sigma, np.inf, loc=m, scale=sigma) - mu

    return float(optimize.brentq(gap, lower - 40 * sigma, mu + 1e-9, xtol=1e-12))


@lru_cache(maxsize=None)
def _delay_scale(mu: float, positive_mu: float) -> float:
    """sigma of N(mu, sigma) whose mean over positive draws is ``positive_mu``."""

    def gap(s):
        z = mu / s
        return mu + s * stats.norm.pdf(z) / stats.norm.cdf(z) - positive_mu

    return float(optimize.brentq(gap, 1e-6, 1e3, xtol=1e-12))


@dataclass(frozen=True)
class ClassProfile:
    label: Label
    prior: float
    barge_in_count: Continuous  # reference only; the count is derived from rate x exchanges
    barge_in_rate: Continuous
    first_turn_delay: Continuous
    first_turn_positive_delay: Continuous
    mean_utterance_duration: Continuous
    call_duration: Continuous
    first_turn_duration: Continuous
    exchange_count: Continuous
    global_speech_rate: Continuous
    first_turn_speech_rate: Continuous
    help_request_count: tuple[float, ...] = (1.0,)
    first_turn_barge_in: float = 0.6
    first_turn_help: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "help_request_count", tuple(float(p) for p in self.help_request_count))
        probs = np.asarray(self.help_request_count)
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("help_request_count probabilities must be nonnegative and sum to 1")
        for p in (self.prior, self.first_turn_barge_in, self.first_turn_help):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.first_turn_help > 1.0 - probs[0] + 1e-12:
            raise ValueError("first_turn_help cannot exceed P(help_request_count >= 1)")

    @property
    def delay_sigma(self) -> float:
        """Delay spread that reproduces both the delay mean and the positive-delay mean."""
        d = self.first_turn_delay
        return _delay_scale(d.mu, self.first_turn_positive_delay.mu)

    def exchange_count_pmf(self) -> tuple[np.ndarray, np.ndarray]:
        return _count_pmf(self.exchange_count)

    @property
    def barge_in_first_q(self) -> float:
        return _barge_first_q(self.exchange_count, self.barge_in_rate, self.first_turn_barge_in)

    @property
    def help_first_q(self) -> float:
        return _help_first_q(self.exchange_count, self.help_request_count, self.first_turn_help)


def _count_pmf(spec: Continuous):
    return _count_pmf_cached(spec.mu, spec.sigma, spec.lower)


@lru_cache(maxsize=None)
def _count_pmf_cached(mu, sigma, lower):
    """P(max(1, round(X)) = k) for the truncated normal X."""
    spec = Continuous(mu, mu, sigma, lower)
    loc = spec.loc
    a = -np.inf if lower is None else (lower - loc) / sigma
    dist = stats.truncnorm(a, np.inf, loc=loc, scale=sigma)
    top = int(math.ceil(mu + 12 * sigma)) + 2
    ks = np.arange(1, top + 1)
    edges = np.concatenate(([-np.inf], ks[:-1] + 0.5, [np.inf]))
    pmf = np.diff(dist.cdf(edges))
    return ks, pmf / pmf.sum()


def _calibrate(p_forced: float, p_free: float, target: float) -> float:
    if p_free <= 0:
        return 0.0
    return float(np.clip((target - p_forced) / p_free, 0.0, 1.0))


@lru_cache(maxsize=None)
def _barge_first_q(n_spec: Continuous, rate_spec: Continuous, target: float) -> float:
    """Bernoulli parameter for the first-turn barge-in when 0 < count < n.

    A count of 0 forces no first-turn barge-in and a count of n forces one, so
    the free probability is set to keep the marginal at ``target``.
    """
    ks, pmf = _count_pmf(n_spec)
    m = 4000
    if rate_spec.sigma == 0:
        rates = np.full(1, rate_spec.mu)
    else:
        loc = rate_spec.loc
        a = -np.inf if rate_spec.lower is None else (rate_spec.lower - loc) / rate_spec.sigma
        qs = (np.arange(m) + 0.5) / m
        rates = stats.truncnorm.ppf(qs, a, np.inf, loc=loc, scale=rate_spec.sigma)
    x = rates[None, :] * ks[:, None] / 100.0
    n = ks[:, None].astype(float)
    # Stochastic rounding of x, then clipping to [0, n].
    p_zero = np.where(x < 1.0, 1.0 - x, 0.0)
    p_all = np.where(x >= n, 1.0, np.where(x > n - 1, x - (n - 1), 0.0))
    p_all_k = p_all.mean(axis=1)
    p_zero_k = p_zero.mean(axis=1)
    p_forced = float(pmf @ p_all_k)
    p_free = float(pmf @ (1.0 - p_all_k - p_zero_k))
    return _calibrate(p_forced, p_free, target)


@lru_cache(maxsize=None)
def _help_first_q(n_spec: Continuous, help_pmf: tuple[float, ...], target: float) -> float:
    ks, pmf = _count_pmf(n_spec)
    probs = np.asarray(help_pmf)
    h = np.arange(len(probs))
    p_forced = 0.0
    p_free = 0.0
    for k, pk in zip(ks, pmf):
        # Help counts above the exchange count are clipped to it.
        p_all = probs[h >= k].sum()
        p_mid = probs[(h > 0) & (h < k)].sum()
        p_forced += pk * p_all
        p_free += pk * p_mid
    return _calibrate(p_forced, p_free, target)


# Tail over {1, 2, 3} for novices: P(>=1) = 0.23 split so that the count has
# mean 0.27 and standard deviation 0.55.
NOVICE_HELP_TAIL = (0.881, 0.064, 0.055)


def help_pmf(p_any: float, tail: tuple[float, ...]) -> tuple[float, ...]:
    tail = np.asarray(tail, dtype=float)
    tail = tail / tail.sum()
    return (1.0 - p_any, *map(float, p_any * tail))


def default_profiles() -> tuple[ClassProfile, ClassProfile]:
    """Novice and expert profiles at the published per-class means, medians and deviations."""
    C = Continuous
    novice = ClassProfile(
        label=Label.NOVICE,
        prior=235 / 315,
        barge_in_count=C(5.06, 3.00, 6.79),
        barge_in_rate=C(16.2, 15.4, 9.9),
        first_turn_delay=C(1.52, 1.28, 3.00, None),
        first_turn_positive_delay=C(2.82, 2.18, 2.79),
        mean_utterance_duration=C(1.81, 1.44, 3.14),
        call_duration=C(123.0, 104.0, 95.0),
        first_turn_duration=C(1.81, 1.19, 2.02),
        exchange_count=C(28.0, 23.0, 23.4, 0.5),
        global_speech_rate=C(13.7, 14.2, 3.3),
        first_turn_speech_rate=C(14.3, 14.5, 4.1),
        help_request_count=help_pmf(0.23, NOVICE_HELP_TAIL),
        first_turn_barge_in=0.60,
        first_turn_help=0.17,
    )
    expert = ClassProfile(
        label=Label.EXPERT,
        prior=80 / 315,
        barge_in_count=C(2.75, 2.00, 3.15),
        barge_in_rate=C(10.3, 9.5, 6.9),
        first_turn_delay=C(1.32, 1.21, 2.81, None),
        first_turn_positive_delay=C(1.90, 1.49, 2.72),
        mean_utterance_duration=C(1.19, 1.20, 0.43),
        call_duration=C(102.0, 76.0, 78.0),
        first_turn_duration=C(1.72, 1.39, 1.66),
        exchange_count=C(23.8, 20.0, 13.8, 0.5),
        global_speech_rate=C(14.8, 14.9, 1.9),
        first_turn_speech_rate=C(14.8, 14.5, 2.8),
        help_request_count=(1.0,),
        first_turn_barge_in=0.60,
        first_turn_help=0.0,
    )
    return novice, expert


@dataclass(frozen=True)
class GeneratorConfig:
    """Either ``n_per_class`` or ``n_total`` (split by ``priors``) sets the size."""

    n_per_class: int | None = 80
    n_total: int | None = None
    priors: tuple[float, float] | None = None  # (novice, expert); style default when None
    seed: int = 1
    corpus_style: CorpusStyle = CorpusStyle.LEGO
    profiles: tuple[ClassProfile, ClassProfile] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "corpus_style", CorpusStyle(self.corpus_style))
        if self.n_total is not None:
            if self.n_total < 1:
                raise ValueError("n_total must be >= 1")
        elif self.n_per_class is None or self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")

    @property
    def prompt_duration(self) -> float:
        return self.corpus_style.prompt_duration

    def resolved_profiles(self) -> tuple[ClassProfile, ClassProfile]:
        return self.profiles if self.profiles is not None else default_profiles()

    def class_sizes(self) -> tuple[int, int]:
        if self.n_total is None:
            return self.n_per_class, self.n_per_class
        priors = self.priors or self.corpus_style.default_priors
        return tuple(allocate(self.n_total, priors))

    def to_dict(self) -> dict:
        novice, expert = self.class_sizes()
        return {
            "corpus_style": self.corpus_style.value,
            "seed": self.seed,
            "n_novice": novice,
            "n_expert": expert,
        }


def allocate(n: int, priors) -> list[int]:
    """Largest-remainder split of ``n`` items by ``priors``; ties go to the earlier class."""
    p = np.asarray(priors, dtype=float)
    if (p < 0).any() or p.sum() <= 0:
        raise ValueError("priors must be nonnegative with a positive sum")
    quota = n * p / p.sum()
    counts = np.floor(quota + 1e-9).astype(int)
    order = sorted(range(len(p)), key=lambda i: (-(quota[i] - counts[i]), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _stochastic_round(x: float, rng) -> int:
    base = math.floor(x)
    return int(base + (rng.random() < x - base))


def sample_feature_vector(
    profile: ClassProfile,
    rng: np.random.Generator,
    prompt_duration: float = 10.25,
    session_id: str = "",
) -> FeatureVector:
    """Draw one target vector; features are independent apart from consistency repairs.

    Repairs: integer counts agree with the rates they imply, first-turn flags
    agree with the counts, first-turn phone counts are whole, the non-first
    utterances keep a mean of at least 0.1 s and 3 phones/s, and the call is
    long enough to hold the utterances.
    """
    n = max(1, int(round(profile.exchange_count.sample(rng))))

    rate = profile.barge_in_rate.sample(rng)
    count = min(n, max(0, _stochastic_round(rate * n / 100.0, rng)))
    if count == 0:
        first_barge = False
    elif count == n:
        first_barge = True
    else:
        first_barge = bool(rng.random() < profile.barge_in_first_q)

    delay = float(rng.normal(profile.first_turn_delay.mu, profile.delay_sigma))

    d1 = profile.first_turn_duration.sample(rng)
    r1 = profile.first_turn_speech_rate.sample(rng)
    while r1 <= 0:
        r1 = profile.first_turn_speech_rate.sample(rng)
    # Whole phones: keep the rate and stretch the utterance to fit.
    d1 = max(1, round(r1 * d1)) / r1

    mean_dur = profile.mean_utterance_duration.sample(rng)
    g = profile.global_speech_rate.sample(rng)
    if n == 1:
        mean_dur, g = d1, r1
    else:
        if (n * mean_dur - d1) / (n - 1) < MIN_UTTERANCE_DURATION:
            mean_dur = (d1 + MIN_UTTERANCE_DURATION * (n - 1)) / n
        if (n * g - r1) / (n - 1) < MIN_SPEECH_RATE:
            g = (r1 + MIN_SPEECH_RATE * (n - 1)) / n
        if n == 2:
            rest_rate = 2 * g - r1
            rest = max(1, round(rest_rate * (2 * mean_dur - d1))) / rest_rate
            mean_dur = (d1 + rest) / 2

    probs = np.asarray(profile.help_request_count)
    helps = min(n, int(rng.choice(len(probs), p=probs))) if len(probs) > 1 else 0
    if helps == 0:
        first_help = False
    elif helps == n:
        first_help = True
    else:
        first_help = bool(rng.random() < profile.help_first_q)

    spec = profile.call_duration
    call = _rejection_sample(_call_loc(profile, prompt_duration), spec.sigma, spec.lower, rng)
    lead = max(0.0, prompt_duration + delay)
    first_end = lead + d1
    if n == 1:
        call = first_end
    else:
        call = max(call, _packed_minimum(prompt_duration, delay, d1, n * mean_dur - d1))

    values = {
        F.BARGE_IN_COUNT: float(count),
        F.BARGE_IN_RATE: 100.0 * count / n,
        F.FIRST_TURN_BARGE_IN: float(first_barge),
        F.FIRST_TURN_DELAY: delay,
        F.FIRST_TURN_POSITIVE_DELAY: delay if delay > 0 else None,
        F.MEAN_UTTERANCE_DURATION: mean_dur,
        F.CALL_DURATION: call,
        F.FIRST_TURN_DURATION: d1,
        F.EXCHANGE_COUNT: float(n),
        F.GLOBAL_SPEECH_RATE: g,
        F.FIRST_TURN_SPEECH_RATE: r1,
        F.HELP_REQUEST_COUNT: float(helps),
        F.FIRST_TURN_HELP: float(first_help),
    }
    return FeatureVector(values, session_id, profile.label)


def _packed_minimum(prompt, delay, d1, rest_total) -> float:
    """Shortest call that still fits all later utterances (allowing overlap)."""
    s1 = max(0.0, -(prompt + delay))
    return max(max(0.0, prompt + delay) + d1, s1 + rest_total)


@lru_cache(maxsize=None)
def _call_loc(profile: ClassProfile, prompt_duration: float) -> float:
    """Location for the call-duration draw so its mean survives the fit-the-utterances repair.

    Calls shorter than their utterances get lengthened, which would push the
    mean up; the location is shifted down until the repaired mean is on target.
    Estimated once per profile from a fixed-seed vectorized replica of the sampler.
    """
    spec = profile.call_duration
    if spec.sigma == 0:
        return spec.loc
    m = 50_000
    rng = np.random.default_rng(0)

    def tn(c: Continuous, u):
        a = -np.inf if c.lower is None else (c.lower - c.loc) / c.sigma
        if c.sigma == 0:
            return np.full(len(u), c.mu)
        return stats.truncnorm.ppf(u, a, np.inf, loc=c.loc, scale=c.sigma)

    n = np.maximum(1, np.round(tn(profile.exchange_count, rng.random(m))))
    delay = rng.normal(profile.first_turn_delay.mu, profile.delay_sigma, m)
    d1 = tn(profile.first_turn_duration, rng.random(m))
    r1 = np.maximum(tn(profile.first_turn_speech_rate, rng.random(m)), 1e-3)
    d1 = np.maximum(1, np.round(r1 * d1)) / r1
    dur = tn(profile.mean_utterance_duration, rng.random(m))
    multi = n > 1
    dur = np.where(multi, np.maximum(dur, (d1 + MIN_UTTERANCE_DURATION * (n - 1)) / n), d1)
    lead = np.maximum(0.0, prompt_duration + delay)
    s1 = np.maximum(0.0, -(prompt_duration + delay))
    need = np.maximum(lead + d1, s1 + n * dur - d1)
    u = rng.random(m)

    def gap(loc):
        a = (spec.lower - loc) / spec.sigma if spec.lower is not None else -np.inf
        x = stats.truncnorm.ppf(u, a, np.inf, loc=loc, scale=spec.sigma)
        call = np.where(multi, np.maximum(x, need), lead + d1)
        return call.mean() - spec.mu

    base = spec.loc
    if not multi.any() or gap(base) <= 0:
        return base
    lo = base - 10 * spec.sigma
    if gap(lo) > 0:
        return lo
    return float(optimize.brentq(gap, lo, base, xtol=1e-6))


def _check_target(v: FeatureVector):
    need = [f for f in F if f is not F.FIRST_TURN_POSITIVE_DELAY]
    missing = [f.value for f in need if v.values.get(f) is None]
    if missing:
        raise InfeasibleTargetError(f"target is missing {missing}")
    n = v[F.EXCHANGE_COUNT]
    if n != int(n) or n < 1:
        raise InfeasibleTargetError("exchange_count must be a positive integer")
    n = int(n)
    for cnt, first, name in (
        (v[F.BARGE_IN_COUNT], v[F.FIRST_TURN_BARGE_IN], "barge-in"),
        (v[F.HELP_REQUEST_COUNT], v[F.FIRST_TURN_HELP], "help"),
    ):
        if cnt != int(cnt) or not 0 <= cnt <= n:
            raise InfeasibleTargetError(f"{name} count must be an integer in [0, exchange_count]")
        if first not in (0.0, 1.0):
            raise InfeasibleTargetError(f"first-turn {name} flag must be 0 or 1")
        if first and cnt == 0 or (not first and cnt == n):
            raise InfeasibleTargetError(f"first-turn {name} flag contradicts its count")
    if abs(v[F.BARGE_IN_RATE] - 100.0 * v[F.BARGE_IN_COUNT] / n) > 1e-9:
        raise InfeasibleTargetError("barge_in_rate disagrees with barge_in_count / exchange_count")
    delay = v[F.FIRST_TURN_DELAY]
    pos = v.values.get(F.FIRST_TURN_POSITIVE_DELAY)
    if (pos is None) != (delay <= 0) or (pos is not None and pos != delay):
        raise InfeasibleTargetError("first_turn_positive_delay must equal a positive first_turn_delay")
    if not v[F.FIRST_TURN_DURATION] > 0:
        raise InfeasibleTargetError("first_turn_duration must be positive")
    if v[F.FIRST_TURN_SPEECH_RATE] < 0 or v[F.GLOBAL_SPEECH_RATE] < 0:
        raise InfeasibleTargetError("speech rates must be nonnegative")
    return n


def _whole(x: float, what: str) -> int:
    k = round(x)
    if abs(x - k) > 1e-6 * max(1.0, abs(x)):
        raise InfeasibleTargetError(f"{what} needs a fractional phone count ({x!r})")
    return int(k)


def _utterance_plan(n, d1, r1, mean_dur, g, rng):
    """Durations and phone counts for exchanges 2..n hitting the target means."""
    rest = n * mean_dur - d1
    rest_rate = n * g - r1
    m = n - 1
    if rest <= 0:
        raise InfeasibleTargetError("mean utterance duration leaves no time for later utterances")
    if rest_rate < 0:
        raise InfeasibleTargetError("global speech rate is below the first-turn share")
    if m == 1:
        return [rest], [_whole(rest_rate * rest, "speech rate")]

    w = np.exp(0.25 * rng.standard_normal(m))
    durs = rest * w / w.sum()
    # The two longest utterances absorb the rounding slack.
    order = np.argsort(-durs, kind="stable")
    a, b = int(order[0]), int(order[1])
    phones = np.zeros(m, dtype=np.int64)
    mean_rate = rest_rate / m
    left = rest_rate
    for i in range(m):
        if i in (a, b):
            continue
        # At most the mean rate, so the pair is left at least two means.
        phones[i] = math.floor(mean_rate * rng.uniform(0.75, 1.0) * durs[i])
        left -= phones[i] / durs[i]
    span = durs[a] + durs[b]
    budget = left * span
    if budget <= 1.0:
        raise InfeasibleTargetError("speech rate too low for the remaining utterance time")
    p = math.floor(budget / 4.0)
    if p > 0:
        # p/x + p/(span - x) = left has a real root since 4p <= left * span.
        disc = max(0.0, span * span - 4.0 * p * span / left)
        x = (span - math.sqrt(disc)) / 2.0
        if rng.random() < 0.5:
            x = span - x
        phones[a] = phones[b] = p
        durs[a], durs[b] = x, span - x
    else:
        phones[a], phones[b] = 0, 1
        durs[b] = 1.0 / left
        durs[a] = span - durs[b]
    return durs.tolist(), phones.tolist()


def synthesize_session(
    target: FeatureVector,
    config: GeneratorConfig = GeneratorConfig(),
    rng: np.random.Generator | None = None,
    session_id: str | None = None,
) -> Session:
    """Lay out a raw session whose extracted features equal ``target``."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n = _check_target(target)
    v = target.values
    prompt = config.prompt_duration
    delay = v[F.FIRST_TURN_DELAY]
    d1 = v[F.FIRST_TURN_DURATION]
    r1 = v[F.FIRST_TURN_SPEECH_RATE]
    p1 = _whole(r1 * d1, "first-turn speech rate")
    mean_dur = v[F.MEAN_UTTERANCE_DURATION]
    g = v[F.GLOBAL_SPEECH_RATE]
    call = v[F.CALL_DURATION]

    s1 = max(0.0, -(prompt + delay))
    u1 = s1 + prompt + delay
    first_end = u1 + d1

    if n == 1:
        if abs(mean_dur - d1) > 1e-9 or abs(g - r1) > 1e-9:
            raise InfeasibleTargetError("a single exchange fixes the mean duration and global rate")
        if abs(call - first_end) > 1e-6:
            raise InfeasibleTargetError("a single exchange fixes the call duration")
        durs, phones = [], []
    else:
        durs, phones = _utterance_plan(n, d1, r1, mean_dur, g, rng)

    starts = []
    slack = call - first_end - sum(durs)
    if n > 1 and slack >= 0:
        gaps = slack * rng.dirichlet(np.ones(n - 1))
        t = first_end
        for gap, d in zip(gaps, durs):
            starts.append((t, t + gap))
            t += gap + d
    elif n > 1:
        if call < _packed_minimum(prompt, delay, d1, sum(durs)) - 1e-9 or call < max(durs) + s1:
            raise InfeasibleTargetError("call duration too short for the utterances")
        # Overlapping layout: latest feasible start for every later utterance.
        latest = [call - d for d in durs]
        suffix = np.minimum.accumulate(latest[::-1])[::-1]
        starts = [(max(s1, float(s)), max(s1, float(s))) for s in suffix]
        starts[-1] = (starts[-1][0], call - durs[-1])

    barge = [False] * n
    helps = [False] * n
    barge[0] = bool(v[F.FIRST_TURN_BARGE_IN])
    helps[0] = bool(v[F.FIRST_TURN_HELP])
    for flags, total in ((barge, int(v[F.BARGE_IN_COUNT])), (helps, int(v[F.HELP_REQUEST_COUNT]))):
        extra = total - flags[0]
        if extra:
            for i in rng.choice(np.arange(1, n), size=extra, replace=False):
                flags[int(i)] = True

    exchanges = [
        Exchange(
            index=1,
            system_start=s1,
            user_start=u1,
            user_end=first_end,
            user_barge_in=barge[0],
            transcript="help" if helps[0] else None,
            phone_count=p1,
        )
    ]
    for i in range(1, n):
        sys_start, user_start = starts[i - 1]
        exchanges.append(
            Exchange(
                index=i + 1,
                system_start=sys_start,
                user_start=user_start,
                user_end=user_start + durs[i - 1],
                user_barge_in=barge[i],
                transcript="help" if helps[i] else None,
                phone_count=int(phones[i - 1]),
            )
        )
    override = prompt if config.corpus_style is CorpusStyle.LG2014 else None
    return Session(
        session_id=session_id or target.session_id or "synthetic",
        exchanges=tuple(exchanges),
        label=target.label,
        first_system_prompt_duration=override,
    )


def session_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_corpus(config: GeneratorConfig = GeneratorConfig()) -> Corpus:
    """Seeded corpus; session i draws from its own stream so order never shifts draws."""
    novice_profile, expert_profile = config.resolved_profiles()
    n_novice, n_expert = config.class_sizes()
    labels = [Label.NOVICE] * n_novice + [Label.EXPERT] * n_expert
    np.random.default_rng(np.random.SeedSequence([config.seed, 2**31])).shuffle(labels)
    prefix = config.corpus_style.value.lower()
    sessions = []
    for i, label in enumerate(labels):
        rng = session_rng(config.seed, i)
        profile = novice_profile if label is Label.NOVICE else expert_profile
        sid = f"{prefix}-{config.seed}-{i:05d}"
        target = sample_feature_vector(profile, rng, config.prompt_duration, sid)
        sessions.append(synthesize_session(target, config, rng, sid))
    return Corpus(tuple(sessions), name=config.name or f"synthetic-{prefix}")


# -- profile overrides -----------------------------------------------------------

_CONTINUOUS_FIELDS = {f for f, t in ClassProfile.__annotations__.items() if t == "Continuous"}


def parse_profile_overrides(text: str, profiles=None) -> tuple[ClassProfile, ClassProfile]:
    """Apply ``class.feature[.param] = value`` lines to the profiles.

    Examples: ``novice.call_duration.mu = 130``, ``expert.prior = 0.5``,
    ``novice.help_request_count = 0.77, 0.15, 0.05, 0.03``.
    """
    novice, expert = profiles or default_profiles()
    by_class = {"novice": novice, "expert": expert}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        parts = key.strip().lower().split(".")
        cls = parts[0]
        if cls not in by_class or len(parts) not in (2, 3):
            raise ValueError(f"line {lineno}: unknown key {key.strip()!r}")
        prof = by_class[cls]
        name = parts[1]
        if name in _CONTINUOUS_FIELDS:
            if len(parts) != 3 or parts[2] not in ("mu", "median", "sigma", "lower"):
                raise ValueError(f"line {lineno}: {name} needs .mu, .median, .sigma or .lower")
            val = None if value.strip().lower() == "none" else float(value)
            new = replace(getattr(prof, name), **{parts[2]: val})
            prof = replace(prof, **{name: new})
        elif name == "help_request_count" and len(parts) == 2:
            prof = replace(prof, help_request_count=tuple(float(x) for x in value.split(",")))
        elif name in ("prior", "first_turn_barge_in", "first_turn_help") and len(parts) == 2:
            prof = replace(prof, **{name: float(value)})
        else:
            raise ValueError(f"line {lineno}: unknown key {key.strip()!r}")
        by_class[cls] = prof
    return by_class["novice"], by_class["expert"]
