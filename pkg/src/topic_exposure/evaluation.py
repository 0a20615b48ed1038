"""L1 evaluation, dataset assembly and the with/without-profile grid."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (
    ParticipationThresholds,
    Role,
    TweetRecord,
    UserRecord,
    MockEngagerPair,
    classify_users,
    contributor_pool,
    group_tweets,
    make_mock_engagers,
)
from .errors import ConfigError, DataError, ShapeError
from .estimators import (
    METHODS,
    ExposureEstimate,
    conditional_nn_match,
    encdec_estimate,
    nn_match,
    pf_exposure,
    pf_fit,
)
from .matrices import (
    ActivityMatrix,
    BinningSchema,
    ProfileMatrix,
    UserMatrix,
    activity_matrix,
    concat_user_matrix,
    default_schema,
    frequency_matrix,
    profile_matrix,
    read_matrix,
    write_matrix,
)
from .neuralnet import TrainConfig
from .synth import SynthConfig, generate_corpus
from .topics import TopicExtractorSpec, TopicVocabulary, build_vocabulary

logger = logging.getLogger(__name__)

METHOD_NAMES = {
    "nn": "Nearest Neighbor Matching",
    "cnn": "Conditional Nearest Neighbor",
    "pf": "Poisson Factorization",
    "encdec": "Encoder-Decoder",
}


# -- metrics ----------------------------------------------------------------

def _check_pair(e, e_hat):
    e = np.asarray(e, dtype=float)
    e_hat = np.asarray(e_hat, dtype=float)
    if e.shape != e_hat.shape or e.ndim != 2:
        raise ShapeError(f"shape mismatch: truth {e.shape} vs estimate {e_hat.shape}")
    return e, e_hat


def l1_norm(e, e_hat) -> float:
    """Mean absolute difference over all cells of two m x t matrices."""
    e, e_hat = _check_pair(e, e_hat)
    if e.size == 0:
        raise ShapeError("cannot score empty matrices")
    return math.fsum(np.abs(e - e_hat).ravel()) / e.size


def per_user_l1(e, e_hat) -> tuple[np.ndarray, float, float]:
    """Row-wise L1, their mean and population standard deviation."""
    e, e_hat = _check_pair(e, e_hat)
    diff = np.abs(e - e_hat)
    rows = np.array([math.fsum(r) / e.shape[1] for r in diff])
    mean = math.fsum(rows) / len(rows)
    std = math.sqrt(math.fsum((rows - mean) ** 2) / len(rows))
    return rows, mean, std


# -- dataset ----------------------------------------------------------------

@dataclass
class Dataset:
    """Everything the estimators need, rows ordered engagers, mocks, contributors."""

    vocab: TopicVocabulary
    activity: ActivityMatrix
    users: UserMatrix
    roles: list[Role]
    mock_rows: np.ndarray
    contributor_rows: np.ndarray
    engager_rows: np.ndarray
    # per mock: index into contributor_rows of its source
    mock_source: np.ndarray
    truth: np.ndarray = field(repr=False)
    feature_names: tuple[str, ...] = ()
    # extra thinnings of every contributor: user rows and index into mock_rows
    extra_inputs: np.ndarray | None = field(default=None, repr=False)
    extra_mock: np.ndarray | None = field(default=None, repr=False)

    @property
    def t(self) -> int:
        return self.vocab.t


def split_folds(n: int, seed: int, fractions=(0.8, 0.1, 0.1)):
    """Seeded (train, val, test) index arrays over ``range(n)``."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(fractions[2] * n))) if n else 0
    n_val = int(round(fractions[1] * n))
    return (np.sort(perm[n_test + n_val:]), np.sort(perm[n_test:n_test + n_val]),
            np.sort(perm[:n_test]))


def build_dataset(users: Sequence[UserRecord], tweets: Sequence[TweetRecord], *,
                  thresholds: ParticipationThresholds = ParticipationThresholds(),
                  topic_spec: TopicExtractorSpec = TopicExtractorSpec(),
                  schema: BinningSchema | None = None, th: float = 0.0,
                  seed: int = 0, vocab: TopicVocabulary | None = None,
                  extra_draws: int = 0) -> Dataset:
    """Classify, build mocks, vocabulary and the user matrix in one go.

    ``extra_draws`` adds that many further random thinnings per contributor;
    they only ever serve as extra encoder-decoder training pairs.
    """
    users = classify_users(users, tweets, thresholds)
    draws = mock_draws(users, tweets, thresholds, seed, extra_draws)
    if vocab is None:
        vocab = build_vocabulary(active_tweets(users, tweets), topic_spec)
    return assemble_dataset(users, tweets, draws, vocab, schema, th)


def active_tweets(users: Sequence[UserRecord], tweets: Sequence[TweetRecord]):
    """Tweets of classified engagers and contributors, the vocabulary's source."""
    active = {u.user_id for u in users if u.role in (Role.ENGAGER, Role.CONTRIBUTOR)}
    return [tw for tw in tweets if tw.user_id in active]


def mock_draws(users: Sequence[UserRecord], tweets: Sequence[TweetRecord],
               thresholds: ParticipationThresholds, seed: int,
               extra_draws: int = 0) -> list[list[MockEngagerPair]]:
    """Mock engagers of draw 0 followed by ``extra_draws`` further thinnings."""
    contributors = sorted((u for u in users if u.role is Role.CONTRIBUTOR),
                          key=lambda u: u.user_id)
    if not contributors:
        raise DataError("no contributors in the corpus; cannot build mock engagers")
    pool = contributor_pool(contributors, tweets)
    return [make_mock_engagers(pool, thresholds, seed, draw=d)
            for d in range(extra_draws + 1)]


def assemble_dataset(users: Sequence[UserRecord], tweets: Sequence[TweetRecord],
                     draws: Sequence[Sequence[MockEngagerPair]], vocab: TopicVocabulary,
                     schema: BinningSchema | None = None, th: float = 0.0) -> Dataset:
    """User matrix over engagers, mocks and contributors from classified users."""
    by_user = group_tweets(tweets)
    engagers = sorted((u for u in users if u.role is Role.ENGAGER), key=lambda u: u.user_id)
    contributors = sorted((u for u in users if u.role is Role.CONTRIBUTOR),
                          key=lambda u: u.user_id)
    if not contributors:
        raise DataError("no contributors in the corpus; cannot build mock engagers")
    pairs = list(draws[0])

    rows_users = engagers + [p.mock_user for p in pairs] + contributors
    tweets_by_row = {u.user_id: by_user.get(u.user_id, []) for u in engagers + contributors}
    tweets_by_row.update({p.mock_user.user_id: p.retained_tweets for p in pairs})
    ids = [u.user_id for u in rows_users]
    f = frequency_matrix(ids, tweets_by_row, vocab)
    act = ActivityMatrix(f, activity_matrix(f, th), th, tuple(ids))
    schema = schema or default_schema(users)
    prof = profile_matrix(rows_users, schema)
    y = [u.role.label for u in rows_users]
    um = concat_user_matrix(act, prof, y)

    n_e, n_m = len(engagers), len(pairs)
    contributor_rows = np.arange(n_e + n_m, len(ids))
    c_index = {u.user_id: k for k, u in enumerate(contributors)}
    source = np.array([c_index[p.source_contributor_id] for p in pairs], dtype=np.int64)
    truth = act.a[contributor_rows[source]].copy()
    for p, row in zip(pairs, truth):
        p.ground_truth_activity = row
    mock_rows = np.arange(n_e, n_e + n_m)
    extra_inputs = extra_mock = None
    if len(draws) > 1:
        m_index = {p.source_contributor_id: k for k, p in enumerate(pairs)}
        blocks, owners = [], []
        for more in draws[1:]:
            f_d = frequency_matrix([p.mock_user.user_id for p in more],
                                   {p.mock_user.user_id: p.retained_tweets for p in more},
                                   vocab)
            owner = np.array([m_index[p.source_contributor_id] for p in more], dtype=np.int64)
            blocks.append(np.hstack([activity_matrix(f_d, th), prof.p[mock_rows[owner]]]))
            owners.append(owner)
        extra_inputs = np.vstack(blocks)
        extra_mock = np.concatenate(owners)
    return Dataset(vocab, act, um, [u.role for u in rows_users], mock_rows,
                   contributor_rows, np.arange(n_e), source, truth, prof.feature_names,
                   extra_inputs, extra_mock)


def save_dataset(ds: Dataset, out_dir) -> None:
    """Write the matrices as CSV files that :func:`load_dataset` reads back exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = list(ds.users.user_ids)
    terms = list(ds.vocab.terms)
    ds.vocab.to_csv(out / "vocab.csv")
    write_matrix(out / "F.csv", ids, terms, ds.activity.f)
    write_matrix(out / "A.csv", ids, terms, ds.users.a)
    write_matrix(out / "P.csv", ids, ds.feature_names, ds.users.p)
    write_matrix(out / "U.csv", ids, terms + list(ds.feature_names), ds.users.u)
    sources = {int(r): ids[ds.contributor_rows[s]] for r, s in zip(ds.mock_rows, ds.mock_source)}
    with (out / "labels.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "label", "role", "source"])
        for k, (uid, y, role) in enumerate(zip(ids, ds.users.y, ds.roles)):
            w.writerow([uid, int(y), role.value, sources.get(k, "")])
    if ds.extra_inputs is not None:
        write_matrix(out / "extra.csv", [ids[ds.mock_rows[k]] for k in ds.extra_mock],
                     terms + list(ds.feature_names), ds.extra_inputs)
    (out / "meta.json").write_text(json.dumps({"th": ds.activity.th}) + "\n",
                                   encoding="utf-8")


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    needed = ["vocab.csv", "F.csv", "A.csv", "P.csv", "labels.csv", "meta.json"]
    missing = [n for n in needed if not (src / n).exists()]
    if missing:
        raise DataError(f"{src} lacks {', '.join(missing)}; run `matrices build` first")
    vocab = TopicVocabulary.from_csv(src / "vocab.csv")
    ids, _, f = read_matrix(src / "F.csv")
    _, _, a = read_matrix(src / "A.csv", dtype=np.int8)
    p_ids, names, p = read_matrix(src / "P.csv", dtype=np.int8)
    if p_ids != ids:
        raise ShapeError("P.csv rows do not match F.csv rows")
    th = json.loads((src / "meta.json").read_text(encoding="utf-8"))["th"]
    with (src / "labels.csv").open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if [r["user_id"] for r in rows] != ids:
        raise ShapeError("labels.csv rows do not match F.csv rows")
    roles = [Role(r["role"]) for r in rows]
    y = [int(r["label"]) for r in rows]
    act = ActivityMatrix(f, a, th, tuple(ids))
    prof = ProfileMatrix(p, tuple(names), tuple(ids), None)
    um = concat_user_matrix(act, prof, y)
    pos = {uid: k for k, uid in enumerate(ids)}
    mock_rows = np.array([k for k, r in enumerate(roles) if r is Role.MOCK_ENGAGER], np.int64)
    contributor_rows = np.array([k for k, r in enumerate(roles) if r is Role.CONTRIBUTOR],
                                np.int64)
    engager_rows = np.array([k for k, r in enumerate(roles) if r is Role.ENGAGER], np.int64)
    c_pos = {int(r): k for k, r in enumerate(contributor_rows)}
    source = np.array([c_pos[pos[rows[k]["source"]]] for k in mock_rows], np.int64)
    truth = a[contributor_rows[source]].copy()
    extra_inputs = extra_mock = None
    if (src / "extra.csv").exists():
        owners, _, extra_inputs = read_matrix(src / "extra.csv", dtype=np.int8)
        m_pos = {int(r): k for k, r in enumerate(mock_rows)}
        extra_mock = np.array([m_pos[pos[o]] for o in owners], np.int64)
    return Dataset(vocab, act, um, roles, mock_rows, contributor_rows, engager_rows,
                   source, truth, tuple(names), extra_inputs, extra_mock)


# -- experiment -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    seed: int = 0
    label: str = "synthetic"
    methods: tuple[str, ...] = METHODS
    profiles: tuple[bool, ...] = (False, True)
    nn_metric: str = "hamming"
    pf_k: int = 20
    pf_hyper: tuple[float, float, float, float] = (0.3, 0.3, 0.3, 0.3)
    pf_max_iters: int = 300
    pf_tol: float = 1e-6
    pf_mapping: str = "poisson"
    train: TrainConfig = field(default_factory=TrainConfig)
    encdec_hidden: tuple[int, ...] = (64, 32)
    # also train on (contributor row -> own activity) pairs
    encdec_autoencode_contributors: bool = False
    folds: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown method(s) {sorted(bad)}; choose from {METHODS}")


@dataclass
class CellResult:
    method: str
    use_profile: bool
    status: str = "ok"
    mean: float = float("nan")
    std: float = float("nan")
    per_user: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    user_ids: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return f"{self.method}_{'on' if self.use_profile else 'off'}"


@dataclass
class EvalReport:
    label: str
    seed: int
    cells: list[CellResult]
    config: dict = field(default_factory=dict)

    def cell(self, method: str, use_profile: bool) -> CellResult:
        for c in self.cells:
            if c.method == method and c.use_profile == use_profile:
                return c
        raise KeyError((method, use_profile))


def estimate(ds: Dataset, method: str, use_profile: bool, cfg: ExperimentConfig,
             rows: np.ndarray, folds=None, pf_model=None) -> ExposureEstimate:
    """Exposure estimates for the given (engager or mock) rows of ``ds``."""
    u = ds.users.u
    rows = np.asarray(rows)
    if method in ("nn", "cnn"):
        src = {int(r): int(s) for r, s in zip(ds.mock_rows, ds.mock_source)}
        exclude = np.array([src.get(int(r), -1) for r in rows])
        fn = nn_match if method == "nn" else conditional_nn_match
        est = fn(u[rows], u[ds.contributor_rows], use_profile, t=ds.t,
                 exclude=exclude, metric=cfg.nn_metric)
    elif method == "pf":
        if use_profile:
            raise ConfigError("Poisson factorization cannot use profile information")
        model = pf_model or fit_pf(ds, cfg)
        est = pf_exposure(model, rows, cfg.pf_mapping)
    elif method == "encdec":
        train_idx, val_idx, _ = folds or split_folds(len(ds.mock_rows), cfg.seed, cfg.folds)
        xtr, ytr = _mock_pairs(ds, train_idx)
        if cfg.encdec_autoencode_contributors:
            xtr = np.vstack([xtr, u[ds.contributor_rows]])
            ytr = np.vstack([ytr, ds.users.a[ds.contributor_rows]])
        val = _mock_pairs(ds, val_idx) if len(val_idx) else None
        est = encdec_estimate(xtr, ytr, u[rows], use_profile, cfg.train, t=ds.t,
                              validation=val, hidden=cfg.encdec_hidden).estimate
    else:
        raise ConfigError(f"unknown method {method!r}")
    est.user_ids = tuple(ds.users.user_ids[r] for r in rows)
    est.used_profile = use_profile
    return est


def _mock_pairs(ds: Dataset, idx: np.ndarray):
    """(input rows, truth rows) for the given mocks plus their extra thinnings."""
    x, y = ds.users.u[ds.mock_rows[idx]], ds.truth[idx]
    if ds.extra_inputs is not None:
        keep = np.isin(ds.extra_mock, idx)
        x = np.vstack([x, ds.extra_inputs[keep]])
        y = np.vstack([y, ds.truth[ds.extra_mock[keep]]])
    return x, y


def fit_pf(ds: Dataset, cfg: ExperimentConfig):
    return pf_fit(ds.users.a, K=cfg.pf_k, hyper=cfg.pf_hyper, max_iters=cfg.pf_max_iters,
                  tol=cfg.pf_tol, seed=cfg.seed, user_ids=ds.users.user_ids)


def grid_cells(cfg: ExperimentConfig) -> list[tuple[str, bool]]:
    """Every configured (method, profile) cell in report order."""
    return [(m, p) for p in cfg.profiles for m in cfg.methods]


def test_rows(ds: Dataset, cfg: ExperimentConfig):
    """Folds plus the held-out mock rows every method is scored on."""
    if len(ds.mock_rows) < 3:
        raise DataError("need at least 3 mock engagers to form train/val/test folds; "
                        "build a larger corpus")
    folds = split_folds(len(ds.mock_rows), cfg.seed, cfg.folds)
    return folds, ds.mock_rows[folds[2]]


def estimate_grid(ds: Dataset, cfg: ExperimentConfig = ExperimentConfig()
                  ) -> dict[tuple[str, bool], ExposureEstimate | None]:
    """Estimates on the test fold per cell; ``None`` where a cell does not apply."""
    folds, rows = test_rows(ds, cfg)
    pf_model = None
    out = {}
    for method, use_profile in grid_cells(cfg):
        if method == "pf" and use_profile:
            out[method, use_profile] = None
            continue
        if method == "pf" and pf_model is None:
            pf_model = fit_pf(ds, cfg)
        out[method, use_profile] = estimate(ds, method, use_profile, cfg, rows, folds, pf_model)
    return out


def score_grid(ds: Dataset, cfg: ExperimentConfig,
               estimates: dict[tuple[str, bool], ExposureEstimate | None],
               snapshot: dict | None = None) -> EvalReport:
    """Per-user L1 of every cell against the mocks' ground truth."""
    folds, rows = test_rows(ds, cfg)
    truth = ds.truth[folds[2]]
    ids = tuple(ds.users.user_ids[r] for r in rows)
    cells = []
    for method, use_profile in grid_cells(cfg):
        if method == "pf" and use_profile:
            cells.append(CellResult(method, True, status="n/a"))
            continue
        est = estimates.get((method, use_profile))
        if est is None:
            raise DataError(f"no estimate for {method} with profile "
                            f"{'on' if use_profile else 'off'}; run `estimate` first")
        if tuple(est.user_ids) != ids:
            raise ShapeError(f"{method} estimate rows do not match the test fold")
        per, mean, std = per_user_l1(truth, est.e_hat)
        cells.append(CellResult(method, use_profile, "ok", mean, std, per, ids))
        logger.info("%-7s profile=%-3s L1 %.4f +- %.4f", method,
                    "on" if use_profile else "off", mean, std)
    snap = snapshot if snapshot is not None else _snapshot(cfg)
    return EvalReport(cfg.label, cfg.seed, cells, snap)


def run_experiment(ds: Dataset, cfg: ExperimentConfig = ExperimentConfig(),
                   snapshot: dict | None = None) -> EvalReport:
    """Evaluate every (method, profile) cell on the held-out mock fold."""
    return score_grid(ds, cfg, estimate_grid(ds, cfg), snapshot)


BENCHMARK_USERS = 100_000
BENCHMARK_EXTRA_DRAWS = 10


def benchmark_config(seed: int) -> ExperimentConfig:
    """Experiment settings of the default synthetic benchmark."""
    return ExperimentConfig(
        seed=seed, label="synthetic", pf_max_iters=100, pf_tol=1e-4, folds=(0.6, 0.1, 0.3),
        train=TrainConfig(epochs=200, batch_size=32, patience=20, seed=seed))


def run_benchmark(seed: int, n_users: int = BENCHMARK_USERS) -> EvalReport:
    """Generate the default synthetic corpus for ``seed`` and score the full grid."""
    corpus = generate_corpus(SynthConfig(n_users=n_users, seed=seed))
    ds = build_dataset(corpus.users, corpus.tweets, seed=seed,
                       extra_draws=BENCHMARK_EXTRA_DRAWS)
    return run_experiment(ds, benchmark_config(seed))


def _snapshot(cfg: ExperimentConfig) -> dict:
    snap = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in snap.items()}


# -- rendering --------------------------------------------------------------

def render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "seed", "profile", "method", "status", "n_users", "mean_l1",
                "std_l1"])
    for c in report.cells:
        ok = c.status == "ok"
        w.writerow([report.label, report.seed, "on" if c.use_profile else "off", c.method,
                    c.status, len(c.per_user) if ok else "",
                    repr(c.mean) if ok else "", repr(c.std) if ok else ""])
    return buf.getvalue()


def render_markdown(report: EvalReport) -> str:
    lines = [f"# L1 distance to true exposure ({report.label}, seed {report.seed})", ""]
    for use_profile, title in ((False, "Without Profile Information"),
                               (True, "With Profile Information")):
        block = [c for c in report.cells if c.use_profile == use_profile]
        if not block:
            continue
        lines += [f"## {title}", "", "| Model | L1 (mean ± std) |", "|---|---|"]
        for c in block:
            value = f"{c.mean:.2f} ± {c.std:.2f}" if c.status == "ok" else c.status
            lines.append(f"| {METHOD_NAMES[c.method]} | {value} |")
        lines.append("")
    return "\n".join(lines)


def render_report(report: EvalReport, fmt: str = "markdown", path=None) -> str:
    if fmt == "csv":
        text = render_csv(report)
    elif fmt in ("markdown", "md"):
        text = render_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    (out / "per_user").mkdir(parents=True, exist_ok=True)
    render_report(report, "csv", out / "report.csv")
    render_report(report, "markdown", out / "report.md")
    for c in report.cells:
        if c.status != "ok":
            continue
        with (out / "per_user" / f"{c.key}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "l1"])
            for uid, v in zip(c.user_ids, c.per_user):
                w.writerow([uid, repr(float(v))])
