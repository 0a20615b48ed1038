"""User/tweet ingestion, participation classification and mock engagers.

Users are split by their average number of posts per day into lurkers,
engagers and contributors. Contributors can be thinned into *mock
engagers*: their tweets are removed at random, day by day, until the
posting rate drops to the engager ceiling. The contributor's original
activity then serves as the exposure ground truth of the mock user.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from .errors import (
    DanglingReferenceError,
    DuplicateIdError,
    ParseError,
    ValidationError,
)

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"
MOCK_PREFIX = "mock:"


class Role(str, enum.Enum):
    LURKER = "Lurker"
    ENGAGER = "Engager"
    CONTRIBUTOR = "Contributor"
    MOCK_ENGAGER = "MockEngager"

    @property
    def label(self) -> int:
        """0 for (mock) engagers, 1 for contributors."""
        if self is Role.CONTRIBUTOR:
            return 1
        if self in (Role.ENGAGER, Role.MOCK_ENGAGER):
            return 0
        raise ValueError("lurkers carry no label")


USER_SCHEMA = {
    "type": "object",
    "required": [
        "user_id", "verified", "is_org", "registered_days", "followers",
        "friends",
    ],
    "properties": {
        "user_id": {"type": "string", "minLength": 1},
        "age": {"type": ["integer", "null"], "minimum": 0},
        "gender": {"type": ["string", "null"]},
        "verified": {"type": "boolean"},
        "is_org": {"type": "boolean"},
        "registered_days": {"type": "integer", "minimum": 0},
        "followers": {"type": "integer", "minimum": 0},
        "friends": {"type": "integer", "minimum": 0},
        "observed_days": {"type": "integer", "minimum": 1},
    },
}

TWEET_SCHEMA = {
    "type": "object",
    "required": ["tweet_id", "user_id", "day"],
    "properties": {
        "tweet_id": {"type": "string", "minLength": 1},
        "user_id": {"type": "string", "minLength": 1},
        "day": {"type": "integer", "minimum": 0},
        "text": {"type": "string"},
        "tokens": {"type": "array", "items": {"type": "string"}},
    },
    "anyOf": [
        {"required": ["text"], "properties": {"text": {"minLength": 1}}},
        {"required": ["tokens"]},
    ],
}

_user_validator = jsonschema.Draft7Validator(USER_SCHEMA)
_tweet_validator = jsonschema.Draft7Validator(TWEET_SCHEMA)


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    user_id: str
    day: int
    text: str = ""
    tokens: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.day < 0:
            raise ValidationError(f"tweet {self.tweet_id}: day must be >= 0")
        if not self.user_id:
            raise ValidationError(f"tweet {self.tweet_id}: empty user_id")
        if not self.text and self.tokens is None:
            raise ValidationError(
                f"tweet {self.tweet_id}: empty text without a token list")

    def to_json(self) -> dict:
        out = {"tweet_id": self.tweet_id, "user_id": self.user_id,
               "day": self.day, "text": self.text}
        if self.tokens is not None:
            out["tokens"] = list(self.tokens)
        return out


@dataclass
class UserRecord:
    user_id: str
    verified: bool = False
    is_org: bool = False
    registered_days: int = 0
    followers: int = 0
    friends: int = 0
    age: int | None = None
    gender: str = UNKNOWN
    observed_days: int | None = None
    tweet_count: int = 0
    role: Role | None = None

    def __post_init__(self):
        if self.gender is None:
            self.gender = UNKNOWN

    def to_json(self) -> dict:
        out = {
            "user_id": self.user_id,
            "age": self.age,
            "gender": None if self.gender == UNKNOWN else self.gender,
            "verified": self.verified,
            "is_org": self.is_org,
            "registered_days": self.registered_days,
            "followers": self.followers,
            "friends": self.friends,
        }
        if self.observed_days is not None:
            out["observed_days"] = self.observed_days
        return out


@dataclass(frozen=True)
class ParticipationThresholds:
    lurker_max: float = 0.005
    engager_max: float = 0.1

    def __post_init__(self):
        if not 0 <= self.lurker_max < self.engager_max:
            raise ValidationError(
                "thresholds must satisfy 0 <= lurker_max < engager_max, got "
                f"{self.lurker_max}, {self.engager_max}")


@dataclass
class MockEngagerPair:
    mock_user: UserRecord
    retained_tweets: list[TweetRecord]
    source_contributor_id: str
    # filled in once a topic vocabulary exists
    ground_truth_activity: np.ndarray | None = field(default=None, repr=False)


def _iter_json_lines(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            yield line_no, obj


def _first_error(validator, obj):
    err = next(iter(sorted(validator.iter_errors(obj), key=str)), None)
    if err is None:
        return None
    where = "/".join(str(p) for p in err.absolute_path) or "<record>"
    return f"{where}: {err.message}"


def user_from_json(obj: Mapping) -> UserRecord:
    msg = _first_error(_user_validator, obj)
    if msg:
        raise ValidationError(msg)
    return UserRecord(
        user_id=obj["user_id"],
        age=obj.get("age"),
        gender=obj.get("gender") or UNKNOWN,
        verified=obj["verified"],
        is_org=obj["is_org"],
        registered_days=obj["registered_days"],
        followers=obj["followers"],
        friends=obj["friends"],
        observed_days=obj.get("observed_days"),
    )


def tweet_from_json(obj: Mapping) -> TweetRecord:
    msg = _first_error(_tweet_validator, obj)
    if msg:
        raise ValidationError(msg)
    tokens = obj.get("tokens")
    return TweetRecord(
        tweet_id=obj["tweet_id"], user_id=obj["user_id"], day=obj["day"],
        text=obj.get("text", ""),
        tokens=tuple(tokens) if tokens is not None else None,
    )


def ingest_users(path) -> list[UserRecord]:
    """Read ``users.jsonl``; one validated UserRecord per non-blank line."""
    users = []
    seen = {}
    for line_no, obj in _iter_json_lines(path):
        try:
            user = user_from_json(obj)
        except ValidationError as exc:
            raise ParseError(path, line_no, str(exc)) from exc
        if user.user_id in seen:
            raise DuplicateIdError(
                f"{path}:{line_no}: duplicate user_id {user.user_id!r} "
                f"(first seen on line {seen[user.user_id]})")
        seen[user.user_id] = line_no
        users.append(user)
    return users


def ingest_tweets(path, known_users: Iterable[str] | None = None,
                  strict: bool = True) -> list[TweetRecord]:
    """Read ``tweets.jsonl`` preserving input order.

    With ``known_users`` given, tweets pointing at unknown users raise
    :class:`DanglingReferenceError` in strict mode and are dropped with a
    warning otherwise.
    """
    known = set(known_users) if known_users is not None else None
    tweets = []
    skipped = 0
    for line_no, obj in _iter_json_lines(path):
        try:
            tweet = tweet_from_json(obj)
        except ValidationError as exc:
            raise ParseError(path, line_no, str(exc)) from exc
        if known is not None and tweet.user_id not in known:
            if strict:
                raise DanglingReferenceError(
                    f"{path}:{line_no}: tweet {tweet.tweet_id!r} references "
                    f"unknown user {tweet.user_id!r}")
            skipped += 1
            continue
        tweets.append(tweet)
    if skipped:
        logger.warning("skipped %d tweet(s) with unknown user_id", skipped)
    return tweets


def write_jsonl(path, records: Iterable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            obj = rec.to_json() if hasattr(rec, "to_json") else rec
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def group_tweets(tweets: Iterable[TweetRecord]) -> dict[str, list[TweetRecord]]:
    """user_id -> tweets, input order kept within each user."""
    grouped = defaultdict(list)
    for tw in tweets:
        grouped[tw.user_id].append(tw)
    return dict(grouped)


def observation_window(tweets: Sequence[TweetRecord]) -> int:
    """Days covered by the corpus, counting from the epoch (day 0)."""
    return max((tw.day for tw in tweets), default=0) + 1


def classify_participation(tweet_count: int, observed_days: int,
                           th: ParticipationThresholds = ParticipationThresholds()
                           ) -> Role:
    if observed_days < 1:
        raise ValueError("observed_days must be >= 1")
    rate = tweet_count / observed_days
    if rate < th.lurker_max:
        return Role.LURKER
    if rate <= th.engager_max:
        return Role.ENGAGER
    return Role.CONTRIBUTOR


def classify_users(users: Sequence[UserRecord], tweets: Sequence[TweetRecord],
                   th: ParticipationThresholds = ParticipationThresholds(),
                   observed_days: int | None = None) -> list[UserRecord]:
    """Attach tweet counts, observation spans and roles to ``users``.

    A user's ``observed_days`` from the input file wins; otherwise
    ``observed_days`` (or the corpus-wide window) is used for everyone.
    """
    counts = defaultdict(int)
    for tw in tweets:
        counts[tw.user_id] += 1
    default_days = observed_days or observation_window(tweets)
    out = []
    for u in users:
        days = u.observed_days or default_days
        n = counts.get(u.user_id, 0)
        out.append(replace(u, observed_days=days, tweet_count=n,
                           role=classify_participation(n, days, th)))
    return out


def role_counts(users: Iterable[UserRecord]) -> dict[Role, int]:
    counts = {r: 0 for r in Role}
    for u in users:
        counts[u.role] += 1
    return counts


def max_retained(observed_days: int, engager_max: float) -> int:
    """Largest tweet count whose rate does not exceed ``engager_max``."""
    k = math.floor(engager_max * observed_days)
    while (k + 1) / observed_days <= engager_max:
        k += 1
    while k > 0 and k / observed_days > engager_max:
        k -= 1
    return k


def user_rng(seed: int, user_id: str, draw: int = 0) -> np.random.Generator:
    """Independent generator per (seed, user_id, draw); stable across processes."""
    digest = hashlib.sha256(user_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    entropy = [seed & 0xFFFFFFFF, *words] + ([draw] if draw else [])
    return np.random.default_rng(np.random.SeedSequence(entropy))


def thin_tweets(tweets: Sequence[TweetRecord], target: int,
                rng: np.random.Generator) -> list[TweetRecord]:
    """Drop tweets until at most ``target`` remain.

    Days that still hold tweets are visited in a fresh random order on
    every pass; each visit removes one tweet of that day uniformly at
    random. Survivors keep their input order.
    """
    by_day = defaultdict(list)
    for i, tw in enumerate(tweets):
        by_day[tw.day].append(i)
    n = len(tweets)
    removed = set()
    while n > target:
        days = [d for d in sorted(by_day) if by_day[d]]
        for k in rng.permutation(len(days)):
            if n <= target:
                break
            pool = by_day[days[k]]
            removed.add(pool.pop(int(rng.integers(len(pool)))))
            n -= 1
    return [tw for i, tw in enumerate(tweets) if i not in removed]


def make_mock_engagers(contributors: Sequence[tuple[UserRecord, Sequence[TweetRecord]]],
                       th: ParticipationThresholds = ParticipationThresholds(),
                       seed: int = 0, draw: int = 0) -> list[MockEngagerPair]:
    """Turn contributors into mock engagers by per-day random thinning.

    ``draw`` > 0 gives further independent thinnings of the same pool.
    """
    pairs = []
    for user, tweets in contributors:
        if not tweets:
            raise ValidationError(f"contributor {user.user_id!r} has no tweets")
        days = user.observed_days or observation_window(tweets)
        target = max_retained(days, th.engager_max)
        retained = thin_tweets(tweets, target, user_rng(seed, user.user_id, draw))
        mock = replace(user, user_id=MOCK_PREFIX + user.user_id,
                       role=Role.MOCK_ENGAGER, observed_days=days,
                       tweet_count=len(retained))
        pairs.append(MockEngagerPair(mock, retained, user.user_id))
    return pairs


def contributor_pool(users: Sequence[UserRecord], tweets: Sequence[TweetRecord]):
    """(user, tweets) pairs for every classified contributor."""
    grouped = group_tweets(tweets)
    return [(u, grouped.get(u.user_id, [])) for u in users
            if u.role is Role.CONTRIBUTOR]
