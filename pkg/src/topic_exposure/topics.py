"""Topic vocabulary extraction and tweet-to-topic assignment.

A topic is a single TF-IDF term. Each user's tweets are concatenated into
one document; a term's score is its best tf-idf over all documents.
"""

from __future__ import annotations

import csv
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._stopwords import STOPWORDS
from .corpus import TweetRecord, group_tweets
from .errors import ConfigError, ParseError, VocabularyTooSmallError

_URL = re.compile(r"^(https?://|www\.)", re.IGNORECASE)
_PUNCT = string.punctuation + "’“”…"


def tokenize(text: str, stopwords: frozenset[str] = STOPWORDS) -> list[str]:
    tokens = []
    for raw in text.lower().split():
        if _URL.match(raw) or raw.startswith("@"):
            continue
        tok = raw.lstrip("#").strip(_PUNCT)
        if not tok or tok in stopwords:
            continue
        tokens.append(tok)
    return tokens


def tweet_tokens(tweet: TweetRecord, stopwords: frozenset[str] = STOPWORDS) -> list[str]:
    if tweet.tokens is not None:
        return [t for t in tweet.tokens if t and t not in stopwords]
    return tokenize(tweet.text, stopwords)


@dataclass(frozen=True)
class TopicVocabulary:
    terms: tuple[str, ...]
    weights: np.ndarray = field(compare=False)

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")
        if len(self.weights) != len(self.terms):
            raise ValueError("one weight per term required")
        if np.any(np.diff(self.weights) > 0):
            raise ValueError("weights must be sorted non-increasing")
        object.__setattr__(self, "_index", {t: j for j, t in enumerate(self.terms)})

    @property
    def t(self) -> int:
        return len(self.terms)

    def index(self, term: str) -> int | None:
        return self._index.get(term)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "term", "weight"])
            for j, (term, wt) in enumerate(zip(self.terms, self.weights)):
                w.writerow([j, term, repr(float(wt))])

    @classmethod
    def from_csv(cls, path) -> "TopicVocabulary":
        terms, weights = [], []
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for line_no, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    if int(row["index"]) != len(terms):
                        raise ValueError("indices must be 0..t-1 in order")
                    terms.append(row["term"])
                    weights.append(float(row["weight"]))
                except (KeyError, ValueError, TypeError) as exc:
                    raise ParseError(path, line_no, str(exc)) from exc
        return cls(tuple(terms), np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class TopicExtractorSpec:
    kind: str = "tfidf"
    t: int = 100
    min_token_length: int = 1
    extra_stopwords: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in EXTRACTORS:
            raise ConfigError(f"unknown topic extractor {self.kind!r}; "
                              f"available: {sorted(EXTRACTORS)}")
        if self.t < 1:
            raise ConfigError("t must be positive")

    @property
    def stopwords(self) -> frozenset[str]:
        return STOPWORDS | frozenset(self.extra_stopwords)


def user_documents(tweets: Iterable[TweetRecord], spec: TopicExtractorSpec
                   ) -> dict[str, list[str]]:
    """user_id -> concatenated token list; users without tokens dropped."""
    sw = spec.stopwords
    docs = {}
    for uid, tws in sorted(group_tweets(tweets).items()):
        toks = [tok for tw in tws for tok in tweet_tokens(tw, sw)
                if len(tok) >= spec.min_token_length]
        if toks:
            docs[uid] = toks
    return docs


def tfidf_scores(docs: Sequence[Sequence[str]]) -> dict[str, float]:
    """term -> max over documents of (count/len) * (ln(m/(1+df)) + 1)."""
    m = len(docs)
    counts = [Counter(d) for d in docs]
    df = Counter()
    for c in counts:
        df.update(c.keys())
    idf = {term: math.log(m / (1 + n)) + 1.0 for term, n in df.items()}
    best = {}
    for doc, c in zip(docs, counts):
        length = len(doc)
        for term, n in c.items():
            s = n / length * idf[term]
            if s > best.get(term, -math.inf):
                best[term] = s
    return best


def _tfidf_vocabulary(tweets, spec: TopicExtractorSpec) -> TopicVocabulary:
    docs = list(user_documents(tweets, spec).values())
    scores = tfidf_scores(docs)
    if len(scores) < spec.t:
        raise VocabularyTooSmallError(spec.t, len(scores))
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:spec.t]
    return TopicVocabulary(tuple(t for t, _ in ranked),
                           np.array([s for _, s in ranked], dtype=float))


EXTRACTORS: dict[str, Callable[..., TopicVocabulary]] = {"tfidf": _tfidf_vocabulary}


def build_vocabulary(tweets: Sequence[TweetRecord],
                     spec: TopicExtractorSpec = TopicExtractorSpec()) -> TopicVocabulary:
    return EXTRACTORS[spec.kind](tweets, spec)


def assign_topics(tweet: TweetRecord, vocab: TopicVocabulary,
                  stopwords: frozenset[str] = STOPWORDS) -> set[int]:
    hits = (vocab.index(tok) for tok in tweet_tokens(tweet, stopwords))
    return {j for j in hits if j is not None}
