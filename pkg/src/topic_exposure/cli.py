"""Command-line entry point: one subcommand per stage plus ``pipeline``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import (
    ParticipationThresholds,
    MockEngagerPair,
    Role,
    classify_users,
    group_tweets,
    ingest_tweets,
    ingest_users,
)
from .errors import ConfigError, DataError, TopicExposureError
from .estimators import ExposureEstimate
from .evaluation import (
    Dataset,
    ExperimentConfig,
    active_tweets,
    assemble_dataset,
    estimate,
    estimate_grid,
    fit_pf,
    grid_cells,
    load_dataset,
    mock_draws,
    score_grid,
    save_dataset,
    test_rows,
    write_report,
)
from .matrices import default_schema, load_schema, read_matrix, write_matrix
from .neuralnet import TrainConfig
from .synth import SynthConfig, generate_corpus
from .topics import TopicExtractorSpec, TopicVocabulary, build_vocabulary

logger = logging.getLogger("topic_exposure")


# -- configuration ----------------------------------------------------------

@dataclass
class PipelineConfig:
    seed: int
    base_dir: Path
    out: Path
    synth: SynthConfig | None = None
    corpus_dir: Path | None = None
    thresholds: ParticipationThresholds = ParticipationThresholds()
    topics: TopicExtractorSpec = TopicExtractorSpec()
    th: float = 0.0
    schema: Path | None = None
    extra_draws: int = 0
    experiment: ExperimentConfig = dataclasses.field(default_factory=ExperimentConfig)
    raw: dict = dataclasses.field(default_factory=dict)

    @property
    def corpus(self) -> Path:
        return self.corpus_dir if self.corpus_dir is not None else self.out / "corpus"


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build(cls, doc: Mapping, what: str, **extra):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown {what} option(s): {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**{**kw, **extra})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def experiment_from_dict(doc: Mapping, seed: int, label: str = "synthetic") -> ExperimentConfig:
    doc = dict(doc)
    train = _build(TrainConfig, doc.pop("train", {}), "experiment.train", seed=seed)
    doc.setdefault("label", label)
    return _build(ExperimentConfig, doc, "experiment", seed=seed, train=train)


def resolve_seed(doc: Mapping, cli_seed: int | None) -> int:
    seed = cli_seed if cli_seed is not None else doc.get("seed")
    if seed is None:
        raise ConfigError("no seed given; set `seed = N` in the config or pass --seed")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return seed


def load_config(path, cli_seed: int | None = None, out: str | None = None) -> PipelineConfig:
    """Validate the whole file up front so no stage starts on a bad config."""
    path = Path(path)
    doc = read_toml(path)
    seed = resolve_seed(doc, cli_seed)
    base = path.resolve().parent
    known = {"seed", "label", "out", "synth", "corpus", "thresholds", "topics", "matrices",
             "experiment"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    if ("synth" in doc) == ("corpus" in doc):
        raise ConfigError("give exactly one of [synth] (generate) or [corpus] (read from dir)")
    synth = corpus_dir = None
    if "synth" in doc:
        synth = SynthConfig.from_dict({**doc["synth"], "seed": seed})
    else:
        if "dir" not in doc["corpus"]:
            raise ConfigError("[corpus] needs `dir`, the folder holding users.jsonl and "
                              "tweets.jsonl")
        corpus_dir = base / doc["corpus"]["dir"]
    thresholds = _build(ParticipationThresholds, doc.get("thresholds", {}), "thresholds")
    topics = _build(TopicExtractorSpec, doc.get("topics", {}), "topics")
    mat = dict(doc.get("matrices", {}))
    unknown = set(mat) - {"th", "schema", "extra_draws"}
    if unknown:
        raise ConfigError(f"unknown matrices option(s): {sorted(unknown)}")
    th = float(mat.get("th", 0.0))
    if not 0 <= th <= 1:
        raise ConfigError(f"matrices.th must lie in [0, 1], got {th}")
    extra_draws = mat.get("extra_draws", 0)
    if not isinstance(extra_draws, int) or extra_draws < 0:
        raise ConfigError("matrices.extra_draws must be a non-negative integer")
    schema = base / mat["schema"] if "schema" in mat else None
    experiment = experiment_from_dict(doc.get("experiment", {}), seed,
                                      doc.get("label", "synthetic"))
    out_dir = Path(out) if out else base / doc.get("out", "run")
    return PipelineConfig(seed, base, out_dir, synth, corpus_dir, thresholds, topics, th,
                          schema, extra_draws, experiment, doc)


# -- stage helpers ------------------------------------------------------------

def load_corpus(corpus_dir, strict: bool = True):
    corpus_dir = Path(corpus_dir)
    users_path, tweets_path = corpus_dir / "users.jsonl", corpus_dir / "tweets.jsonl"
    for p in (users_path, tweets_path):
        if not p.exists():
            raise DataError(f"{p} not found; run `synth generate` or point at a corpus dir")
    users = ingest_users(users_path)
    tweets = ingest_tweets(tweets_path, [u.user_id for u in users], strict=strict)
    return users, tweets


def write_roles(path, users) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "role", "tweet_count", "observed_days"])
        for u in users:
            w.writerow([u.user_id, u.role.value, u.tweet_count, u.observed_days])


def apply_roles(users, path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} not found; run `corpus classify` first")
    with path.open(encoding="utf-8", newline="") as fh:
        rows = {r["user_id"]: r for r in csv.DictReader(fh)}
    out = []
    for u in users:
        r = rows.get(u.user_id)
        if r is None:
            raise DataError(f"user {u.user_id!r} missing from {path}; rerun `corpus classify`")
        out.append(replace(u, role=Role(r["role"]), tweet_count=int(r["tweet_count"]),
                           observed_days=int(r["observed_days"])))
    return out


def write_mocks(path, draws: Sequence[Sequence[MockEngagerPair]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "mock_id", "source_id", "observed_days", "tweet_ids"])
        for d, pairs in enumerate(draws):
            for p in pairs:
                w.writerow([d, p.mock_user.user_id, p.source_contributor_id,
                            p.mock_user.observed_days,
                            " ".join(tw.tweet_id for tw in p.retained_tweets)])


def read_mocks(path, users, tweets) -> list[list[MockEngagerPair]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} not found; run `corpus mock` first")
    by_id = {u.user_id: u for u in users}
    by_user = group_tweets(tweets)
    draws: list[list[MockEngagerPair]] = []
    with path.open(encoding="utf-8", newline="") as fh:
        for line_no, r in enumerate(csv.DictReader(fh), start=2):
            d = int(r["draw"])
            while len(draws) <= d:
                draws.append([])
            src = by_id.get(r["source_id"])
            if src is None:
                raise DataError(f"{path}:{line_no}: unknown contributor {r['source_id']!r}")
            keep = set(r["tweet_ids"].split())
            retained = [tw for tw in by_user.get(src.user_id, []) if tw.tweet_id in keep]
            mock = replace(src, user_id=r["mock_id"], role=Role.MOCK_ENGAGER,
                           observed_days=int(r["observed_days"]), tweet_count=len(retained))
            draws[d].append(MockEngagerPair(mock, retained, src.user_id))
    if not draws:
        raise DataError(f"{path} holds no mock engagers")
    return draws


def estimate_path(out_dir, method: str, use_profile: bool) -> Path:
    return Path(out_dir) / f"{method}_{'on' if use_profile else 'off'}.csv"


def write_estimate(path, est: ExposureEstimate, terms) -> None:
    write_matrix(path, est.user_ids, terms, est.e_hat)


def read_estimates(in_dir, ds: Dataset, cfg: ExperimentConfig):
    out = {}
    for method, use_profile in grid_cells(cfg):
        if method == "pf" and use_profile:
            out[method, use_profile] = None
            continue
        p = estimate_path(in_dir, method, use_profile)
        if not p.exists():
            raise DataError(f"{p} not found; run `estimate --method {method} --profile "
                            f"{'on' if use_profile else 'off'}` first")
        ids, _, e_hat = read_matrix(p)
        out[method, use_profile] = ExposureEstimate(e_hat, method, use_profile, tuple(ids))
    return out


def _hash_path(h, path: Path) -> None:
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(hashlib.sha256(p.read_bytes()).digest())
    elif path.exists():
        h.update(hashlib.sha256(path.read_bytes()).digest())
    else:
        h.update(b"<missing>")


def stage_key(name: str, params, inputs: Sequence[Path]) -> str:
    h = hashlib.sha256(name.encode())
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    for p in inputs:
        _hash_path(h, Path(p))
    return h.hexdigest()


def run_stage(name: str, work: Path, params, inputs: Sequence[Path],
              outputs: Sequence[Path], fn: Callable[[], None]) -> bool:
    """Run ``fn`` unless the stamped key and every output are already in place."""
    stamp = work / ".cache" / f"{name}.json"
    key = stage_key(name, params, inputs)
    if stamp.exists() and all(Path(o).exists() for o in outputs):
        if json.loads(stamp.read_text(encoding="utf-8")).get("key") == key:
            print(f"{name}: cached")
            return False
    try:
        fn()
    except TopicExposureError as exc:
        exc.stage = name
        raise
    stamp.parent.mkdir(parents=True, exist_ok=True)
    stamp.write_text(json.dumps({"key": key}) + "\n", encoding="utf-8")
    print(f"{name}: done")
    return True


def _schema_for(cfg_schema, users):
    return load_schema(cfg_schema, users) if cfg_schema else default_schema(users)


# -- subcommands ------------------------------------------------------------

def cmd_synth_generate(args) -> int:
    doc = read_toml(args.config) if args.config else {}
    seed = resolve_seed(doc, args.seed)
    options = {k: v for k, v in doc.get("synth", doc).items() if k != "seed"}
    cfg = SynthConfig.from_dict({**options, "seed": seed})
    corpus = generate_corpus(cfg)
    corpus.write(args.out)
    print(f"wrote {len(corpus.users)} users and {len(corpus.tweets)} tweets to {args.out}")
    return 0


def cmd_corpus_classify(args) -> int:
    users = ingest_users(args.users)
    tweets = ingest_tweets(args.tweets, [u.user_id for u in users], strict=args.strict)
    th = ParticipationThresholds(args.lurker_max, args.engager_max)
    users = classify_users(users, tweets, th)
    write_roles(args.out, users)
    counts = {r.value: sum(u.role is r for u in users) for r in (Role.LURKER, Role.ENGAGER,
                                                                Role.CONTRIBUTOR)}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_corpus_mock(args) -> int:
    seed = resolve_seed({}, args.seed)
    users, tweets = load_corpus(args.corpus, args.strict)
    users = apply_roles(users, args.roles)
    th = ParticipationThresholds(args.lurker_max, args.engager_max)
    draws = mock_draws(users, tweets, th, seed, args.extra_draws)
    write_mocks(Path(args.out) / "mocks.csv", draws)
    print(f"wrote {len(draws[0])} mock engagers x {len(draws)} draw(s) to {args.out}")
    return 0


def cmd_topics_build(args) -> int:
    tweets = ingest_tweets(args.tweets)
    if args.users and args.roles:
        users = apply_roles(ingest_users(args.users), args.roles)
        tweets = active_tweets(users, tweets)
    vocab = build_vocabulary(tweets, TopicExtractorSpec(t=args.t))
    vocab.to_csv(args.out)
    print(f"wrote {vocab.t} topics to {args.out}")
    return 0


def cmd_matrices_build(args) -> int:
    users, tweets = load_corpus(args.corpus, args.strict)
    users = apply_roles(users, args.roles)
    draws = read_mocks(Path(args.mock) / "mocks.csv", users, tweets)
    vocab = TopicVocabulary.from_csv(args.vocab)
    ds = assemble_dataset(users, tweets, draws, vocab, _schema_for(args.schema, users), args.th)
    save_dataset(ds, args.out)
    print(f"wrote {ds.users.u.shape[0]} x {ds.users.u.shape[1]} user matrix to {args.out}")
    return 0


def _experiment_arg(args) -> ExperimentConfig:
    doc = read_toml(args.config) if args.config else {}
    seed = resolve_seed(doc, args.seed)
    return experiment_from_dict(doc.get("experiment", {}), seed, doc.get("label", "synthetic"))


def cmd_estimate(args) -> int:
    cfg = _experiment_arg(args)
    use_profile = args.profile == "on"
    if args.method == "pf" and use_profile:
        raise ConfigError("Poisson factorization cannot use profile information; "
                          "use --profile off")
    ds = load_dataset(args.matrices)
    folds, rows = test_rows(ds, cfg)
    if args.rows == "engagers":
        rows = ds.engager_rows
    pf_model = fit_pf(ds, cfg) if args.method == "pf" else None
    est = estimate(ds, args.method, use_profile, cfg, rows, folds, pf_model)
    write_estimate(args.out, est, ds.vocab.terms)
    print(f"wrote {len(est.user_ids)} estimates to {args.out}")
    return 0


def cmd_eval_run(args) -> int:
    cfg = _experiment_arg(args)
    ds = load_dataset(args.matrices)
    if args.estimates:
        estimates = read_estimates(args.estimates, ds, cfg)
    else:
        estimates = estimate_grid(ds, cfg)
    report = score_grid(ds, cfg, estimates)
    write_report(report, args.out)
    print(Path(args.out, "report.md").read_text(encoding="utf-8"))
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    work = cfg.out
    work.mkdir(parents=True, exist_ok=True)
    roles = work / "roles.csv"
    mocks = work / "mock" / "mocks.csv"
    vocab_path = work / "vocab.csv"
    mat_dir = work / "matrices"
    est_dir = work / "estimates"
    report_dir = work / "report"
    raw = cfg.raw
    corpus_files = [cfg.corpus / "users.jsonl", cfg.corpus / "tweets.jsonl"]
    state: dict = {}

    def corpus():
        if "corpus" not in state:
            users, tweets = load_corpus(cfg.corpus, args.strict)
            state["corpus"] = (users, tweets)
        return state["corpus"]

    def classified():
        users, tweets = corpus()
        return apply_roles(users, roles), tweets

    if cfg.synth is not None:
        run_stage("synth", work, dataclasses.asdict(cfg.synth), [], corpus_files,
                  lambda: generate_corpus(cfg.synth).write(cfg.corpus))
    thresholds = dataclasses.asdict(cfg.thresholds)
    run_stage("classify", work, [thresholds, args.strict], corpus_files, [roles],
              lambda: write_roles(roles, classify_users(*corpus(), cfg.thresholds)))
    run_stage("mock", work, [thresholds, cfg.seed, cfg.extra_draws], corpus_files + [roles],
              [mocks], lambda: write_mocks(
                  mocks, mock_draws(*classified(), cfg.thresholds, cfg.seed, cfg.extra_draws)))
    run_stage("topics", work, dataclasses.asdict(cfg.topics), corpus_files + [roles],
              [vocab_path], lambda: build_vocabulary(active_tweets(*classified()),
                                                     cfg.topics).to_csv(vocab_path))

    def build_matrices():
        users, tweets = classified()
        draws = read_mocks(mocks, users, tweets)
        ds = assemble_dataset(users, tweets, draws, TopicVocabulary.from_csv(vocab_path),
                              _schema_for(cfg.schema, users), cfg.th)
        save_dataset(ds, mat_dir)

    schema_inputs = [cfg.schema] if cfg.schema else []
    run_stage("matrices", work, [cfg.th], corpus_files + [roles, mocks, vocab_path]
              + schema_inputs, [mat_dir / "U.csv"], build_matrices)

    exp_params = raw.get("experiment", {})
    cells = [estimate_path(est_dir, m, p) for m, p in grid_cells(cfg.experiment)
             if not (m == "pf" and p)]

    def build_estimates():
        ds = load_dataset(mat_dir)
        for (m, p), est in estimate_grid(ds, cfg.experiment).items():
            if est is not None:
                write_estimate(estimate_path(est_dir, m, p), est, ds.vocab.terms)

    run_stage("estimate", work, [exp_params, cfg.seed], [mat_dir], cells, build_estimates)

    def build_report():
        ds = load_dataset(mat_dir)
        report = score_grid(ds, cfg.experiment, read_estimates(est_dir, ds, cfg.experiment),
                            {"seed": cfg.seed, "config": raw})
        write_report(report, report_dir)

    run_stage("eval", work, [exp_params, cfg.seed, raw.get("label")], [mat_dir, est_dir],
              [report_dir / "report.csv", report_dir / "report.md"], build_report)
    print(f"report: {report_dir / 'report.md'}")
    return 0


# -- parser -----------------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress")
    common.add_argument("--strict", action="store_true",
                        help="reject tweets of unknown users instead of skipping them")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="topic-exposure", parents=[common],
                                     description="Estimate topic exposure of sparse users.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common]).add_subparsers(dest="action",
                                                                       required=True)
    p = synth.add_parser("generate", parents=[common], help="draw a synthetic corpus")
    p.add_argument("--config", help="TOML file with synth options")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_generate)

    corpus = sub.add_parser("corpus", parents=[common]).add_subparsers(dest="action",
                                                                         required=True)
    p = corpus.add_parser("classify", parents=[common], help="assign participation roles")
    p.add_argument("--users", required=True)
    p.add_argument("--tweets", required=True)
    p.add_argument("--lurker-max", type=float, default=0.005)
    p.add_argument("--engager-max", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus_classify)

    p = corpus.add_parser("mock", parents=[common], help="thin contributors into mock engagers")
    p.add_argument("--corpus", required=True, help="dir with users.jsonl and tweets.jsonl")
    p.add_argument("--roles", required=True, help="roles.csv from `corpus classify`")
    p.add_argument("--lurker-max", type=float, default=0.005)
    p.add_argument("--engager-max", type=float, default=0.1)
    p.add_argument("--extra-draws", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus_mock)

    topics = sub.add_parser("topics", parents=[common]).add_subparsers(dest="action",
                                                                         required=True)
    p = topics.add_parser("build", parents=[common], help="extract the topic vocabulary")
    p.add_argument("--tweets", required=True)
    p.add_argument("--users", help="with --roles, restrict to engagers and contributors")
    p.add_argument("--roles")
    p.add_argument("--t", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topics_build)

    mats = sub.add_parser("matrices", parents=[common]).add_subparsers(dest="action",
                                                                        required=True)
    p = mats.add_parser("build", parents=[common], help="build F, A, P and U")
    p.add_argument("--corpus", required=True)
    p.add_argument("--roles", required=True)
    p.add_argument("--mock", required=True, help="dir written by `corpus mock`")
    p.add_argument("--vocab", required=True)
    p.add_argument("--th", type=float, default=0.0)
    p.add_argument("--schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrices_build)

    p = sub.add_parser("estimate", parents=[common], help="estimate exposure for one cell")
    p.add_argument("--method", choices=("nn", "cnn", "pf", "encdec"), required=True)
    p.add_argument("--matrices", required=True)
    p.add_argument("--profile", choices=("on", "off"), default="off")
    p.add_argument("--rows", choices=("test", "engagers"), default="test",
                   help="held-out mock engagers or the real engagers")
    p.add_argument("--config", help="TOML with an [experiment] section")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    ev = sub.add_parser("eval", parents=[common]).add_subparsers(dest="action", required=True)
    p = ev.add_parser("run", parents=[common], help="score the method x profile grid")
    p.add_argument("--config", help="TOML with an [experiment] section")
    p.add_argument("--matrices", required=True)
    p.add_argument("--estimates", help="score existing estimate CSVs instead of refitting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_run)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage with caching")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="work directory (default: `out` in the config)")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TopicExposureError as exc:
        stage = getattr(exc, "stage", None)
        where = f"stage {stage}: " if stage else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
