"""Synthetic corpora with known topic exposure.

Every user receives a latent binary exposure vector; users engage with a
role-dependent share of the exposed topics and emit tweets mentioning
them. Exposure is coupled to the profile in two ways: users with more
followers see more topics, and every binned profile feature carries its
own topical affinities. Latent communities add interest structure the
profile cannot see, and topics are exposed in co-occurring clusters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import (
    UNKNOWN,
    ParticipationThresholds,
    Role,
    TweetRecord,
    UserRecord,
    max_retained,
    write_jsonl,
)
from .errors import ConfigError

TOPIC_TERMS = (
    "election vaccine climate economy inflation immigration healthcare taxes "
    "senate congress president governor court abortion guns police protest "
    "border wildfire hurricane earthquake flood drought energy oil pipeline "
    "solar bitcoin crypto stocks market housing rent wages unemployment strike "
    "union tariffs trade china russia ukraine israel iran korea nato military "
    "veterans refugees asylum terrorism cyberattack privacy facebook twitter "
    "tiktok google apple amazon tesla spacex nasa moon mars science research "
    "cancer covid pandemic masks lockdown hospital nurses doctors pharma "
    "insulin opioids marijuana alcohol obesity fitness diet nutrition "
    "football basketball baseball soccer olympics tennis golf hockey boxing "
    "hollywood oscars grammys netflix celebrity royals wedding divorce fashion "
    "music concert album movie television podcast gaming esports anime books "
    "education teachers students college tuition loans schools curriculum "
    "religion church pope charity volunteers pets wildlife oceans plastic "
    "recycling farming food restaurants travel airlines tourism"
).split()

CHATTER = ("lol", "wow", "omg", "today", "tonight", "honestly", "literally",
           "great", "thanks", "yes")
FILLER = ("the", "this", "is", "and", "to", "of", "in", "on", "for", "about",
          "so", "we", "they", "it", "out", "what", "my", "all", "just", "very")
GENDERS = ("female", "male")


@dataclass
class SynthConfig:
    n_users: int = 1000
    role_mix: tuple[float, float, float] = (0.90, 0.09, 0.01)
    t_topics: int = 100
    zipf_exponent: float = 1.1
    exposure_density: float = 0.25
    engage_prob: dict = field(default_factory=lambda: {
        "lurker": 0.1, "engager": 0.3, "contributor": 1.0})
    follower_pareto_alpha: float = 1.5
    observed_days: int = 150
    seed: int = 0
    # log-scale spread of profile-driven topic affinities; 0 removes the coupling
    profile_coupling: float = 12.0
    # latent interest communities, invisible in the profile
    n_communities: int = 8
    community_coupling: float = 0.5
    # topics come in co-exposed clusters; 0 draws every topic independently
    n_clusters: int = 25
    cluster_cohesion: float = 1.0
    # exposure width grows as exp(weight * standardized log-followers)
    follower_weight: float = 1.5
    contributor_rate: tuple[float, float] = (0.15, 1.0)
    topics_per_tweet: tuple[float, ...] = (0.7, 0.25, 0.05)
    hashtag_prob: float = 0.2
    chatter_prob: float = 0.3
    mention_prob: float = 0.1
    url_prob: float = 0.15
    lurker_max: float = 0.005
    engager_max: float = 0.1

    def __post_init__(self):
        self.role_mix = tuple(float(p) for p in self.role_mix)
        self.contributor_rate = tuple(self.contributor_rate)
        self.topics_per_tweet = tuple(self.topics_per_tweet)
        if self.n_users < 1 or self.t_topics < 1 or self.observed_days < 1:
            raise ConfigError("n_users, t_topics and observed_days must be positive")
        if len(self.role_mix) != 3 or abs(sum(self.role_mix) - 1.0) > 1e-9:
            raise ConfigError("role_mix must be three proportions summing to 1")
        if min(self.role_mix) < 0:
            raise ConfigError("role_mix entries must be non-negative")
        if not 0 < self.exposure_density <= 1:
            raise ConfigError("exposure_density must lie in (0, 1]")
        for role in ("lurker", "engager", "contributor"):
            p = self.engage_prob.get(role)
            if p is None or not 0 < p <= 1:
                raise ConfigError(f"engage_prob[{role}] must lie in (0, 1]")
        if self.follower_pareto_alpha <= 1:
            raise ConfigError("follower_pareto_alpha must be > 1")
        if abs(sum(self.topics_per_tweet) - 1.0) > 1e-9:
            raise ConfigError("topics_per_tweet must be a probability vector")
        ParticipationThresholds(self.lurker_max, self.engager_max)

    @property
    def thresholds(self) -> ParticipationThresholds:
        return ParticipationThresholds(self.lurker_max, self.engager_max)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth option(s): {sorted(unknown)}")
        kw = dict(doc)
        if "engage_prob" in kw:
            kw["engage_prob"] = {**cls().engage_prob, **kw["engage_prob"]}
        return cls(**kw)


@dataclass
class SynthCorpus:
    config: SynthConfig
    users: list[UserRecord]
    tweets: list[TweetRecord]
    terms: tuple[str, ...]
    exposure: np.ndarray = field(repr=False)
    planted_activity: np.ndarray = field(repr=False)
    intended_roles: list[Role] = field(repr=False)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / "users.jsonl", self.users)
        write_jsonl(out / "tweets.jsonl", self.tweets)
        with (out / "exposure_truth.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.terms)
            w.writerows(self.exposure.tolist())
        (out / "synth_config.json").write_text(
            json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def topic_terms(t: int) -> tuple[str, ...]:
    if t <= len(TOPIC_TERMS):
        return tuple(TOPIC_TERMS[:t])
    extra = [f"topic{j}" for j in range(len(TOPIC_TERMS), t)]
    return tuple(TOPIC_TERMS) + tuple(extra)


def role_counts_for(n: int, mix) -> list[int]:
    """Largest-remainder rounding of ``n * mix``."""
    raw = [n * p for p in mix]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:n - sum(counts)]:
        counts[k] += 1
    return counts


def _profiles(cfg: SynthConfig, rng: np.random.Generator, n: int):
    alpha = cfg.follower_pareto_alpha
    followers = np.floor(10.0 * rng.uniform(size=n) ** (-1.0 / alpha)).astype(np.int64)
    followers[rng.uniform(size=n) < 0.03] = 0
    friends = np.floor(20.0 * rng.uniform(size=n) ** (-1.0 / 2.0)).astype(np.int64)
    friends[rng.uniform(size=n) < 0.02] = 0
    age = np.clip(np.round(rng.normal(34, 12, size=n)), 13, 90).astype(int)
    age_known = rng.uniform(size=n) >= 0.2
    g = rng.choice(3, size=n, p=[0.40, 0.45, 0.15])
    registered = np.clip(np.round(rng.normal(1800, 700, size=n)), 1, 5000).astype(int)
    is_org = rng.uniform(size=n) < 0.05
    verified = rng.uniform(size=n) < (0.01 + 0.2 * (followers > 10_000))
    return followers, friends, age, age_known, g, registered, is_org, verified


def _profile_groups(followers, friends, age, age_known, g, registered, is_org, verified):
    """Coarse group index per profile feature; columns feed the topic affinities."""
    age_bin = np.where(age_known, np.clip((age - 13) * 8 // 77, 0, 7), 8)
    decade = lambda x: np.where(x > 0, np.clip(np.floor(np.log10(np.maximum(x, 1))), 0, 7) + 1, 0)
    reg_bin = np.clip(registered * 10 // 5001, 0, 9)
    groups = np.column_stack([age_bin, g, is_org, verified, reg_bin,
                              decade(followers), decade(friends)]).astype(np.int64)
    sizes = np.array([9, 3, 2, 2, 10, 9, 9])
    return groups, sizes


def _calibrate(intensity: np.ndarray, density: float) -> np.ndarray:
    """Scale so that ``mean(1 - exp(-c * intensity)) == density``."""
    lo, hi = 0.0, 1.0
    while np.mean(-np.expm1(-hi * intensity)) < density and hi < 1e12:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.mean(-np.expm1(-mid * intensity)) < density:
            lo = mid
        else:
            hi = mid
    return -np.expm1(-hi * intensity)


def _tweet_topic_slots(engaged: list[int], k: int, rng, per_tweet_p) -> list[list[int]]:
    """Spread ``engaged`` over ``k`` tweets so that each one appears at least once."""
    max_per = len(per_tweet_p)
    sizes = rng.choice(np.arange(1, max_per + 1), size=k, p=per_tweet_p)
    order = list(rng.permutation(engaged))
    while sum(sizes) < len(order) and sizes.min() < max_per:
        sizes[int(np.argmin(sizes))] += 1
    order = order[:int(sizes.sum())]
    slots = [[] for _ in range(k)]
    pos = 0
    for i in range(k):
        take = order[pos:pos + sizes[i]]
        pos += len(take)
        slots[i].extend(int(j) for j in take)
    for i in range(k):
        room = min(sizes[i], len(engaged)) - len(slots[i])
        if room > 0:
            pool = [j for j in engaged if j not in slots[i]]
            slots[i].extend(int(j) for j in rng.choice(pool, size=room, replace=False))
    return slots


def _tweet_text(terms, topics, cfg: SynthConfig, rng) -> str:
    words = []
    for j in topics:
        w = terms[j]
        if rng.uniform() < 0.1:
            w = w.capitalize()
        if rng.uniform() < cfg.hashtag_prob:
            w = "#" + w
        words.append(w)
    words.extend(rng.choice(FILLER, size=int(rng.integers(2, 5))))
    if rng.uniform() < cfg.chatter_prob:
        words.append(str(rng.choice(CHATTER)))
    rng.shuffle(words)
    if rng.uniform() < 0.3:
        words[-1] += "!"
    if rng.uniform() < cfg.mention_prob:
        words.insert(0, f"@user{int(rng.integers(10_000))}")
    if rng.uniform() < cfg.url_prob:
        words.append(f"https://t.co/{int(rng.integers(1 << 30)):x}")
    return " ".join(str(w) for w in words)


def generate_corpus(cfg: SynthConfig) -> SynthCorpus:
    """Draw a complete corpus; deterministic for a fixed ``cfg.seed``."""
    counts = role_counts_for(cfg.n_users, cfg.role_mix)
    if min(counts) == 0:
        raise ConfigError(f"role counts {counts} round to zero for some role; "
                          "increase n_users")
    days = cfg.observed_days
    th = cfg.thresholds
    k_lo = math.ceil(th.lurker_max * days)
    while k_lo / days < th.lurker_max:
        k_lo += 1
    k_hi = max_retained(days, th.engager_max)
    if k_lo < 1 or k_lo > k_hi:
        raise ConfigError(f"observed_days={days} leaves no integer engager tweet count")

    rng = np.random.default_rng(cfg.seed)
    n, t = cfg.n_users, cfg.t_topics
    terms = topic_terms(t)
    roles = np.repeat([0, 1, 2], counts)
    rng.shuffle(roles)
    role_enum = (Role.LURKER, Role.ENGAGER, Role.CONTRIBUTOR)
    role_key = ("lurker", "engager", "contributor")

    followers, friends, age, age_known, g, registered, is_org, verified = _profiles(cfg, rng, n)

    # exposure is drawn per cluster of co-exposed topics (one topic per cluster by default)
    g_units = cfg.n_clusters or t
    cluster = rng.permutation(np.arange(t) % g_units)
    pop = (np.arange(1, g_units + 1, dtype=float)) ** -cfg.zipf_exponent
    pop = rng.permutation(pop / pop.mean())
    logf = np.log1p(followers)
    width = np.exp(cfg.follower_weight * (logf - logf.mean()) / (logf.std() or 1.0))
    groups, sizes = _profile_groups(followers, friends, age, age_known, g, registered,
                                    is_org, verified)
    s = cfg.profile_coupling / math.sqrt(len(sizes))
    log_aff = np.zeros((n, g_units))
    for f, size in enumerate(sizes):
        z = rng.normal(size=(size, g_units))
        log_aff += s * z[groups[:, f]]
    community = rng.integers(cfg.n_communities, size=n)
    log_aff += cfg.community_coupling * rng.normal(size=(cfg.n_communities, g_units))[community]
    cohesion = cfg.cluster_cohesion if cfg.n_clusters else 1.0
    density = min(1.0, cfg.exposure_density / cohesion)
    prob = _calibrate(width[:, None] * pop[None, :] * np.exp(log_aff), density)
    hit = rng.uniform(size=(n, g_units)) < prob
    prob = prob[:, cluster]
    exposure = hit[:, cluster]
    if cohesion < 1.0:
        exposure &= rng.uniform(size=(n, t)) < cohesion
    exposure = exposure.astype(np.int8)

    eprob = np.array([cfg.engage_prob[role_key[r]] for r in roles])
    engaged = exposure & (rng.uniform(size=(n, t)) < eprob[:, None])

    lo_c, hi_c = cfg.contributor_rate
    planted = np.zeros((n, t), dtype=np.int8)
    users, tweets = [], []
    width_id = len(str(n - 1))
    tweet_no = 0
    for i in range(n):
        uid = f"u{i:0{width_id}d}"
        r = roles[i]
        if r == 0:
            k = 0
        elif r == 1:
            k = int(rng.integers(k_lo, k_hi + 1))
        else:
            rate = math.exp(rng.uniform(math.log(lo_c), math.log(hi_c)))
            k = max(k_hi + 1, int(round(rate * days)))
        users.append(UserRecord(
            user_id=uid,
            age=int(age[i]) if age_known[i] else None,
            gender=GENDERS[g[i]] if g[i] < 2 else UNKNOWN,
            verified=bool(verified[i]), is_org=bool(is_org[i]),
            registered_days=int(registered[i]), followers=int(followers[i]),
            friends=int(friends[i]), observed_days=days))
        if k == 0:
            continue
        topics = np.nonzero(engaged[i])[0].tolist()
        if not topics:
            exposed = np.nonzero(exposure[i])[0]
            j = int(exposed[np.argmax(prob[i, exposed])]) if len(exposed) else int(np.argmax(prob[i]))
            exposure[i, j] = 1
            topics = [j]
        slots = _tweet_topic_slots(topics, k, rng, cfg.topics_per_tweet)
        tweet_days = np.sort(rng.integers(0, days, size=k))
        for day, slot in zip(tweet_days, slots):
            planted[i, slot] = 1
            tweets.append(TweetRecord(f"t{tweet_no:08d}", uid, int(day),
                                      _tweet_text(terms, slot, cfg, rng)))
            tweet_no += 1
    return SynthCorpus(cfg, users, tweets, terms, exposure, planted,
                       [role_enum[r] for r in roles])


def follower_tail_fraction(followers, q: float = 0.99) -> float:
    """Share of users strictly above the ``q`` quantile."""
    f = np.asarray(followers)
    return float(np.mean(f > np.quantile(f, q)))
