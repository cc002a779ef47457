"""Command-line front end: generate, extract, select-features, train, evaluate, classify, monitor."""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import warnings
from pathlib import Path

from .corpus import LOG_HEADER, Corpus, dump_corpus, load_corpus, parse_session_record
from .errors import ExpertiseError
from .evaluation import (
    classify_incremental,
    cross_corpus_eval,
    cross_validate,
    derive_seed,
    fit_learner,
    format_summary_table,
    predict_vectors,
)
from .features import (
    ALL_FEATURES,
    TABLE_SETS,
    ExtractionConfig,
    extract_features,
    feature_set,
    read_matrix,
    write_matrix,
)
from .forest import ForestConfig
from .modelfile import load_model, save_model
from .prep import Dataset, best_first_select, spread_subsample
from .svm import SmoConfig
from .synth import CorpusStyle, GeneratorConfig, generate_corpus, parse_profile_overrides

OUTPUT_DIR_ENV = "DIALOG_EXPERTISE_OUTPUT_DIR"


class CliError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------


def _output_path(path: str) -> Path:
    """Output path, relocated into $DIALOG_EXPERTISE_OUTPUT_DIR when that is set."""
    base = os.environ.get(OUTPUT_DIR_ENV)
    p = Path(path)
    if base:
        p = Path(base) / p.name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(_output_path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_bytes(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    with open(path, "rb") as fh:
        return fh.read()


def _load_corpus(path: str) -> Corpus:
    corpus = load_corpus(_read_bytes(path), name=Path(path).stem)
    for rej in corpus.rejections:
        print(f"warning: skipped line {rej.line}: {rej.reason}", file=sys.stderr)
    return corpus


def _load_dataset(path: str) -> tuple[Dataset, dict]:
    with open(path, encoding="utf-8") as fh:
        vectors, echo = read_matrix(fh)
    if not vectors:
        raise CliError(f"feature matrix {path} has no rows")
    return Dataset.from_vectors(vectors), echo


def _extraction_config(args) -> ExtractionConfig:
    return ExtractionConfig(
        default_first_prompt_duration=args.prompt_duration,
        help_keywords=tuple(args.help_keyword or ("help",)),
        help_dtmf_key=args.dtmf_key,
        phone_estimator_enabled=args.estimate_phones,
    )


def _learner(args):
    seed = derive_seed(args.seed, "learner")
    if args.learner == "forest":
        return ForestConfig(n_trees=args.trees, mtry=args.mtry, master_seed=seed)
    return SmoConfig(C=args.C, seed=seed)


def _placement(value: str):
    return None if value == "none" else value


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        _write_text(args.output, json.dumps(payload, sort_keys=True) + "\n")
    else:
        _write_text(args.output, text.rstrip("\n") + "\n")


# -- commands ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    profiles = None
    if args.profiles:
        profiles = parse_profile_overrides(Path(args.profiles).read_text(encoding="utf-8"))
    style = CorpusStyle(args.style)
    if args.n_total is not None:
        priors = tuple(float(p) for p in args.priors.split(",")) if args.priors else None
        config = GeneratorConfig(
            n_per_class=None, n_total=args.n_total, priors=priors, seed=args.seed, corpus_style=style, profiles=profiles
        )
    else:
        config = GeneratorConfig(n_per_class=args.n_per_class, seed=args.seed, corpus_style=style, profiles=profiles)
    corpus = generate_corpus(config)
    echo = {"command": "generate", **config.to_dict(), "profiles": args.profiles or "default"}
    buf = io.StringIO()
    dump_corpus(corpus.sessions, buf, echo)
    _write_text(args.output, buf.getvalue())
    return 0


def cmd_extract(args) -> int:
    corpus = _load_corpus(args.corpus)
    config = _extraction_config(args)
    vectors = []
    for session in corpus.sessions:
        try:
            vectors.append(extract_features(session, config))
        except ExpertiseError as exc:
            print(f"warning: skipped session {session.session_id}: {exc}", file=sys.stderr)
    echo = {
        "command": "extract",
        "corpus": Path(args.corpus).name,
        "prompt_duration": config.default_first_prompt_duration,
        "help_keywords": "|".join(config.help_keywords),
        "dtmf_key": config.help_dtmf_key,
        "estimate_phones": config.phone_estimator_enabled,
    }
    buf = io.StringIO()
    write_matrix(vectors, buf, ALL_FEATURES, echo)
    _write_text(args.output, buf.getvalue())
    return 0


def cmd_select_features(args) -> int:
    data, _ = _load_dataset(args.matrix)
    if args.balance:
        data = spread_subsample(data, derive_seed(args.seed, "balance"))
    result = best_first_select(data, termination=args.termination)
    payload = {
        "selected": [str(f) for f in result.selected],
        "merit": result.merit,
        "expanded": len(result.expanded),
        "config": {"command": "select-features", "seed": args.seed, "balance": args.balance, "termination": args.termination},
    }
    text = "selected: " + ", ".join(payload["selected"]) + f"\nmerit: {result.merit!r}\n"
    _emit(args, payload, text)
    return 0


def cmd_train(args) -> int:
    data, _ = _load_dataset(args.matrix)
    fs = feature_set(args.feature_set)
    selected = None
    if fs.features:
        data = data.project(fs)
    if args.balance:
        data = spread_subsample(data, derive_seed(args.seed, "balance"))
    if not fs.features or args.select:
        selected = best_first_select(data, termination=args.termination).selected
        data = data.project(selected)
    learner = _learner(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_learner(learner, data)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    echo = {
        "command": "train",
        "matrix": Path(args.matrix).name,
        "feature_set": fs.name,
        "selected": None if selected is None else [str(f) for f in selected],
        "balance": args.balance,
        "seed": args.seed,
        "learner": args.learner,
        "rows": len(data),
    }
    digest = save_model(model, _output_path(args.output), echo)
    print(json.dumps({"model": str(_output_path(args.output)), "digest": digest, "kind": model.kind}))
    return 0


def cmd_evaluate(args) -> int:
    learner = _learner(args)
    sets = args.feature_set or [fs.name for fs in TABLE_SETS]
    reports = []
    if args.train or args.test:
        if not (args.train and args.test):
            raise CliError("cross-corpus evaluation needs both --train and --test")
        train, _ = _load_dataset(args.train)
        test, _ = _load_dataset(args.test)
        for name in sets:
            reports.append(
                cross_corpus_eval(
                    train,
                    test,
                    learner,
                    name,
                    seed=args.seed,
                    balance=_placement(args.balance) is not None,
                    selection=_placement(args.selection) is not None,
                    termination=args.termination,
                )
            )
    else:
        if not args.matrix:
            raise CliError("evaluate needs a feature matrix or --train/--test")
        data, _ = _load_dataset(args.matrix)
        for name in sets:
            reports.append(
                cross_validate(
                    data,
                    learner,
                    name,
                    k=args.k,
                    seed=args.seed,
                    balance=_placement(args.balance),
                    selection=_placement(args.selection),
                    termination=args.termination,
                )
            )
    payload = {
        "rows": [r.summary_row() for r in reports],
        "reports": [r.to_dict() for r in reports],
        "config": {"command": "evaluate", "seed": args.seed, "learner": args.learner, "k": args.k},
    }
    text = format_summary_table(reports)
    if args.verbose:
        text += "\n\n" + "\n\n".join(r.to_text() for r in reports)
    _emit(args, payload, text)
    return 0


def cmd_classify(args) -> int:
    model = load_model(args.model)
    corpus = _load_corpus(args.corpus)
    config = _extraction_config(args)
    vectors = []
    for session in corpus.sessions:
        try:
            vectors.append(extract_features(session, config))
        except ExpertiseError as exc:
            print(f"warning: skipped session {session.session_id}: {exc}", file=sys.stderr)
    labels, scores = predict_vectors(model, vectors) if vectors else ([], [])
    rows = [
        {"session_id": v.session_id, "label": lab.value, "score": float(sc)}
        for v, lab, sc in zip(vectors, labels, scores)
    ]
    payload = {"predictions": rows, "config": {"command": "classify", "model": Path(args.model).name}}
    text = "\n".join(f"{r['session_id']}\t{r['label']}\t{r['score']!r}" for r in rows)
    _emit(args, payload, text)
    return 0


def _pick_session(path: str, session_id: str | None):
    raw = _read_bytes(path)
    if raw.lstrip().startswith(LOG_HEADER.encode()):
        sessions = _load_corpus(path).sessions if path != "-" else load_corpus(raw).sessions
        if session_id is not None:
            for s in sessions:
                if s.session_id == session_id:
                    return s
            raise CliError(f"no session {session_id!r} in {path}")
        if len(sessions) != 1:
            raise CliError("log holds several sessions; pick one with --session-id")
        return sessions[0]
    lines = [ln for ln in raw.decode("utf-8").splitlines() if ln.strip()]
    if len(lines) != 1:
        raise CliError("expected exactly one session record")
    return parse_session_record(lines[0], 1)


def cmd_monitor(args) -> int:
    model = load_model(args.model)
    session = _pick_session(args.session, args.session_id)
    steps = classify_incremental(model, session, _extraction_config(args))
    rows = [
        {
            "turn": s.turn,
            "label": s.label.value,
            "score": s.score,
            "accumulated_label": s.accumulated_label.value,
            "accumulated_score": s.accumulated_score,
        }
        for s in steps
    ]
    if args.format == "json":
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    else:
        text = "".join(
            f"{r['turn']}\t{r['label']}\t{r['score']!r}\t{r['accumulated_label']}\t{r['accumulated_score']!r}\n"
            for r in rows
        )
    _write_text(args.output, text)
    return 0


# -- parser ------------------------------------------------------------------------


def _add_extraction_flags(p):
    p.add_argument("--prompt-duration", type=float, default=10.25, help="first system prompt length (s)")
    p.add_argument("--help-keyword", action="append", help="transcript keyword marking a help request")
    p.add_argument("--dtmf-key", default="0", help="touch-tone key that requests help")
    p.add_argument("--estimate-phones", action="store_true", help="estimate missing phone counts from transcripts")


def _add_learner_flags(p):
    p.add_argument("--learner", choices=("forest", "svm"), default="forest")
    p.add_argument("--trees", type=int, default=1000)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--C", type=float, default=1.0)


def _add_format(p):
    p.add_argument("--format", choices=("json", "text"), default="text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialog-expertise", description=__doc__)
    parser.add_argument("--config", help="key=value file whose entries override flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic session log")
    p.add_argument("--n-per-class", type=int, default=80)
    p.add_argument("--n-total", type=int, default=None)
    p.add_argument("--priors", help="novice,expert class probabilities for --n-total")
    p.add_argument("--style", choices=[s.value for s in CorpusStyle], default="LEGO")
    p.add_argument("--profiles", help="profile override file")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="session log to feature matrix")
    p.add_argument("corpus")
    _add_extraction_flags(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("select-features", help="best-first CFS selection on a feature matrix")
    p.add_argument("matrix")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--termination", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    _add_format(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("train", help="fit a model on a feature matrix")
    p.add_argument("matrix")
    _add_learner_flags(p)
    p.add_argument("--feature-set", default="All")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--select", action="store_true", help="run feature selection before training")
    p.add_argument("--termination", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validate or cross-corpus evaluate")
    p.add_argument("matrix", nargs="?")
    p.add_argument("--train")
    p.add_argument("--test")
    _add_learner_flags(p)
    p.add_argument("--feature-set", action="append", help="repeatable; default: all nine table rows")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--balance", choices=("none", "outside", "inside"), default="none")
    p.add_argument("--selection", choices=("none", "outside", "inside"), default="none")
    p.add_argument("--termination", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    _add_format(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="label every session of a log")
    p.add_argument("model")
    p.add_argument("corpus")
    _add_extraction_flags(p)
    _add_format(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("monitor", help="per-turn predictions for one session")
    p.add_argument("model")
    p.add_argument("session", help="file with one session record, or a log plus --session-id")
    p.add_argument("--session-id")
    _add_extraction_flags(p)
    _add_format(p)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_monitor)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def apply_config_file(parser, args, path) -> None:
    """Override parsed flags with ``key = value`` lines (keys are flag names)."""
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help",)}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CliError(f"{path}:{lineno}: expected key = value")
            dest = key.strip().lstrip("-").replace("-", "_")
            if dest not in actions:
                raise CliError(f"{path}:{lineno}: unknown option {key.strip()!r} for {args.command}")
            action = actions[dest]
            value = value.strip()
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                parsed = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                parsed = [v.strip() for v in value.split(",") if v.strip()]
            elif value.lower() == "none" and action.default is None:
                parsed = None
            else:
                parsed = action.type(value) if action.type else value
                if action.choices is not None and parsed not in action.choices:
                    raise CliError(f"{path}:{lineno}: {key.strip()} must be one of {list(action.choices)}")
            setattr(args, dest, parsed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            apply_config_file(parser, args, args.config)
        return args.func(args)
    except (ExpertiseError, CliError, ValueError, OSError) as exc:
        line = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(line, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
