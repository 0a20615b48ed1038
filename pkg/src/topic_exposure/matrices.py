"""Frequency, activity, profile and user matrices.

``F[i, j]`` is the fraction of user i's tweets that mention topic j and
``A = F > th``. Profile fields are one-hot encoded through a
:class:`BinningSchema`; ``U = [A | P]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import UNKNOWN, TweetRecord, UserRecord
from .errors import ConfigError, ExcludedUserError, ParseError, ShapeError, ValidationError
from .topics import STOPWORDS, TopicVocabulary, assign_topics

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = ("categorical", "boolean", "uniform", "logarithmic")


@dataclass(frozen=True)
class BinSpec:
    """Encoding of one profile field.

    ``unknown`` adds a trailing column that is hot when the value is missing.
    """

    name: str
    kind: str
    categories: tuple = ()
    lo: float = 0.0
    hi: float = 1.0
    n_bins: int = 2
    base: float = 10.0
    zero_bin: bool = True
    unknown: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"{self.name}: unknown binning kind {self.kind!r}")
        if self.kind in ("uniform", "logarithmic") and self.n_bins < 2:
            raise ConfigError(f"{self.name}: n_bins must be >= 2")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ConfigError(f"{self.name}: need min < max")
        if self.kind == "logarithmic" and self.base <= 1:
            raise ConfigError(f"{self.name}: log base must be > 1")
        if self.kind == "categorical" and not self.categories:
            raise ConfigError(f"{self.name}: categorical spec needs categories")

    @property
    def labels(self) -> list[str]:
        if self.kind == "boolean":
            labels = ["false", "true"]
        elif self.kind == "categorical":
            labels = [str(c) for c in self.categories]
        elif self.kind == "uniform":
            step = (self.hi - self.lo) / self.n_bins
            labels = [f"[{self.lo + k * step:g},{self.lo + (k + 1) * step:g})"
                      for k in range(self.n_bins)]
        else:
            labels = ["0"] if self.zero_bin else []
            labels += [f"[{self.base:g}^{k},{self.base:g}^{k + 1})"
                       for k in range(self.n_bins)]
        if self.unknown or self.kind == "categorical":
            labels.append(UNKNOWN)
        return [f"{self.name}={lab}" for lab in labels]

    @property
    def width(self) -> int:
        return len(self.labels)


def _bin_index(x: float, spec: BinSpec) -> int:
    if spec.kind == "uniform":
        k = math.floor((x - spec.lo) / (spec.hi - spec.lo) * spec.n_bins)
        return min(max(k, 0), spec.n_bins - 1)
    if x < 0:
        raise ValueError(f"{spec.name}: logarithmic binning needs x >= 0, got {x}")
    offset = 1 if spec.zero_bin else 0
    if x == 0 and spec.zero_bin:
        return 0
    k = math.floor(math.log(x) / math.log(spec.base)) if x > 0 else 0
    # exact powers of the base can land a hair below the integer
    if x > 0 and spec.base ** (k + 1) <= x:
        k += 1
    elif x > 0 and spec.base ** k > x:
        k -= 1
    return offset + min(max(k, 0), spec.n_bins - 1)


def bin_value(x, spec: BinSpec) -> np.ndarray:
    """One-hot vector of length ``spec.width`` for a single value."""
    out = np.zeros(spec.width, dtype=np.int8)
    if spec.kind == "boolean":
        if not isinstance(x, (bool, np.bool_)):
            raise TypeError(f"{spec.name}: expected a boolean, got {x!r}")
        out[int(x)] = 1
        return out
    if spec.kind == "categorical":
        if x is None or x == UNKNOWN:
            out[-1] = 1
        elif x in spec.categories:
            out[spec.categories.index(x)] = 1
        elif isinstance(x, str):
            out[-1] = 1
        else:
            raise TypeError(f"{spec.name}: expected a category string, got {x!r}")
        return out
    if x is None:
        if not spec.unknown:
            raise ValueError(f"{spec.name}: missing value and no unknown column")
        out[-1] = 1
        return out
    if isinstance(x, (bool, np.bool_)) or not isinstance(x, (int, float, np.number)):
        raise TypeError(f"{spec.name}: expected a number, got {x!r}")
    if not math.isfinite(x):
        raise ValueError(f"{spec.name}: non-finite value {x!r}")
    out[_bin_index(float(x), spec)] = 1
    return out


@dataclass(frozen=True)
class BinningSchema:
    features: tuple[BinSpec, ...]

    @property
    def feature_names(self) -> list[str]:
        return [lab for f in self.features for lab in f.labels]

    @property
    def width(self) -> int:
        return sum(f.width for f in self.features)

    def group_slices(self) -> list[slice]:
        out, start = [], 0
        for f in self.features:
            out.append(slice(start, start + f.width))
            start += f.width
        return out


PROFILE_FIELDS = ("age", "gender", "verified", "is_org", "registered_days",
                  "followers", "friends")


def default_schema(users: Sequence[UserRecord] = ()) -> BinningSchema:
    """Built-in bins; gender categories and registration span come from data."""
    genders = sorted({u.gender for u in users if u.gender != UNKNOWN}) or ["female", "male"]
    reg_max = max((u.registered_days for u in users), default=0)
    return BinningSchema((
        BinSpec("age", "uniform", lo=13, hi=90, n_bins=8, unknown=True),
        BinSpec("gender", "categorical", categories=tuple(genders)),
        BinSpec("verified", "boolean"),
        BinSpec("is_org", "boolean"),
        BinSpec("registered_days", "uniform", lo=0, hi=max(reg_max, 1), n_bins=10),
        BinSpec("followers", "logarithmic", base=10, n_bins=8, zero_bin=True),
        BinSpec("friends", "logarithmic", base=10, n_bins=8, zero_bin=True),
    ))


def schema_from_dict(doc: Mapping, users: Sequence[UserRecord] = ()) -> BinningSchema:
    """Build a schema from a parsed TOML document (``[[feature]]`` tables).

    ``max = "auto"`` on a uniform feature resolves to the largest value seen
    in ``users``.
    """
    feats = []
    for entry in doc.get("feature", []):
        entry = dict(entry)
        name = entry.pop("name", None)
        if name not in PROFILE_FIELDS:
            raise ConfigError(f"schema feature {name!r} is not a profile field")
        if "min" in entry:
            entry["lo"] = entry.pop("min")
        if "max" in entry:
            hi = entry.pop("max")
            if hi == "auto":
                vals = [getattr(u, name) for u in users if getattr(u, name) is not None]
                hi = max(max(vals, default=0), entry.get("lo", 0) + 1)
            entry["hi"] = hi
        if "categories" in entry:
            entry["categories"] = tuple(entry["categories"])
        try:
            feats.append(BinSpec(name=name, **entry))
        except TypeError as exc:
            raise ConfigError(f"schema feature {name!r}: {exc}") from exc
    missing = set(PROFILE_FIELDS) - {f.name for f in feats}
    if missing:
        raise ConfigError(f"schema does not cover profile fields: {sorted(missing)}")
    return BinningSchema(tuple(feats))


def load_schema(path, users: Sequence[UserRecord] = ()) -> BinningSchema:
    with Path(path).open("rb") as fh:
        return schema_from_dict(tomllib.load(fh), users)


@dataclass(frozen=True)
class ActivityMatrix:
    f: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    th: float
    user_ids: tuple[str, ...]

    @property
    def t(self) -> int:
        return self.f.shape[1]


@dataclass(frozen=True)
class ProfileMatrix:
    p: np.ndarray = field(repr=False)
    feature_names: tuple[str, ...]
    user_ids: tuple[str, ...]
    schema: BinningSchema = field(repr=False)


@dataclass(frozen=True)
class UserMatrix:
    u: np.ndarray = field(repr=False)
    y: np.ndarray
    user_ids: tuple[str, ...]
    t: int

    @property
    def a(self) -> np.ndarray:
        return self.u[:, :self.t]

    @property
    def p(self) -> np.ndarray:
        return self.u[:, self.t:]


def frequency_matrix(user_ids: Sequence[str],
                     tweets_by_user: Mapping[str, Sequence[TweetRecord]],
                     vocab: TopicVocabulary,
                     stopwords: frozenset[str] = STOPWORDS) -> np.ndarray:
    """``F[i, j]`` = share of user i's tweets that hit topic j."""
    empty = [uid for uid in user_ids if not tweets_by_user.get(uid)]
    if empty:
        raise ExcludedUserError(empty)
    f = np.zeros((len(user_ids), vocab.t))
    for i, uid in enumerate(user_ids):
        tweets = tweets_by_user[uid]
        for tw in tweets:
            for j in assign_topics(tw, vocab, stopwords):
                f[i, j] += 1
        f[i] /= len(tweets)
    return f


def activity_matrix(f: np.ndarray, th: float = 0.0) -> np.ndarray:
    """Binarize frequencies: 1 where ``f > th``, else 0 (``0 < f <= th`` too)."""
    if not 0 <= th <= 1:
        raise ValueError(f"th must lie in [0, 1], got {th}")
    return (np.asarray(f) > th).astype(np.int8)


def build_activity(user_ids, tweets_by_user, vocab, th=0.0) -> ActivityMatrix:
    f = frequency_matrix(user_ids, tweets_by_user, vocab)
    return ActivityMatrix(f, activity_matrix(f, th), th, tuple(user_ids))


def profile_matrix(users: Sequence[UserRecord], schema: BinningSchema) -> ProfileMatrix:
    rows = []
    for u in users:
        parts = []
        for spec in schema.features:
            value = getattr(u, spec.name)
            try:
                parts.append(bin_value(value, spec))
            except (TypeError, ValueError) as exc:
                raise ValidationError(
                    f"user {u.user_id!r}, field {spec.name!r}: {exc}") from exc
        rows.append(np.concatenate(parts))
    p = np.vstack(rows) if rows else np.zeros((0, schema.width), dtype=np.int8)
    return ProfileMatrix(p.astype(np.int8), tuple(schema.feature_names),
                         tuple(u.user_id for u in users), schema)


def concat_user_matrix(a: ActivityMatrix, p: ProfileMatrix, y) -> UserMatrix:
    y = np.asarray(y, dtype=np.int8)
    if a.a.shape[0] != p.p.shape[0] or len(y) != a.a.shape[0]:
        raise ShapeError(f"row counts differ: A {a.a.shape[0]}, P {p.p.shape[0]}, "
                         f"y {len(y)}")
    if tuple(a.user_ids) != tuple(p.user_ids):
        bad = next(i for i, (x, z) in enumerate(zip(a.user_ids, p.user_ids)) if x != z)
        raise ShapeError(f"row {bad}: activity row is {a.user_ids[bad]!r} but "
                         f"profile row is {p.user_ids[bad]!r}")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 (engager) or 1 (contributor)")
    u = np.hstack([a.a, p.p]).astype(np.int8)
    return UserMatrix(u, y, tuple(a.user_ids), a.t)


# -- dense CSV persistence -------------------------------------------------

def write_matrix(path, row_ids: Sequence[str], columns: Sequence[str], values) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    fmt = repr if values.dtype.kind == "f" else str
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", *columns])
        for uid, row in zip(row_ids, values):
            w.writerow([uid, *(fmt(v.item()) for v in row)])


def read_matrix(path, dtype=float) -> tuple[list[str], list[str], np.ndarray]:
    """Returns (row ids, column names, values)."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty matrix file") from None
        ids, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(path, line_no, "ragged row")
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from exc
    values = np.array(rows, dtype=float).reshape(len(ids), len(header) - 1)
    return ids, header[1:], values.astype(dtype)
