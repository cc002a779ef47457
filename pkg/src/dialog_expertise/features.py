"""Session-level expertise features and named feature sets.

Thirteen features are extracted per call, grouped in five categories
(interruptions, delays, durations, speech rate, help requests). Each feature
is either a whole-dialog measure or a first-turn measure, which gives the
FirstTurn / Global split used for early classification.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping, NamedTuple

from .corpus import Label, Session
from .errors import ExtractionError, SchemaMismatchError


class FeatureId(str, Enum):
    BARGE_IN_COUNT = "barge_in_count"
    BARGE_IN_RATE = "barge_in_rate"
    FIRST_TURN_BARGE_IN = "first_turn_barge_in"
    FIRST_TURN_DELAY = "first_turn_delay"
    FIRST_TURN_POSITIVE_DELAY = "first_turn_positive_delay"
    MEAN_UTTERANCE_DURATION = "mean_utterance_duration"
    CALL_DURATION = "call_duration"
    FIRST_TURN_DURATION = "first_turn_duration"
    EXCHANGE_COUNT = "exchange_count"
    GLOBAL_SPEECH_RATE = "global_speech_rate"
    FIRST_TURN_SPEECH_RATE = "first_turn_speech_rate"
    HELP_REQUEST_COUNT = "help_request_count"
    FIRST_TURN_HELP = "first_turn_help"

    def __str__(self):
        return self.value

    @property
    def ordinal(self) -> int:
        return _ORDINAL[self]


ALL_FEATURES: tuple[FeatureId, ...] = tuple(FeatureId)
_ORDINAL = {f: i for i, f in enumerate(ALL_FEATURES)}
F = FeatureId


def feature_id(name: str | FeatureId) -> FeatureId:
    try:
        return FeatureId(str(name))
    except ValueError:
        raise SchemaMismatchError(f"unknown feature {name!r}") from None


@dataclass(frozen=True)
class FeatureSet:
    """A named, ordered subset of the features."""

    name: str
    features: tuple[FeatureId, ...]

    @classmethod
    def selected(cls, features: Iterable[FeatureId | str]) -> "FeatureSet":
        members = {feature_id(f) for f in features}
        if not members:
            raise ValueError("Selected feature set needs at least one feature")
        return cls("Selected", tuple(sorted(members, key=_ORDINAL.__getitem__)))

    def __len__(self):
        return len(self.features)

    def __contains__(self, item):
        return item in self.features


def _fs(name, *members):
    return FeatureSet(name, tuple(sorted(members, key=_ORDINAL.__getitem__)))


INTERRUPTIONS = _fs("Interruptions", F.BARGE_IN_COUNT, F.BARGE_IN_RATE, F.FIRST_TURN_BARGE_IN)
DELAYS = _fs("Delays", F.FIRST_TURN_DELAY, F.FIRST_TURN_POSITIVE_DELAY)
DURATIONS = _fs(
    "Durations",
    F.MEAN_UTTERANCE_DURATION,
    F.CALL_DURATION,
    F.FIRST_TURN_DURATION,
    F.EXCHANGE_COUNT,
)
SPEECH_RATE = _fs("SpeechRate", F.GLOBAL_SPEECH_RATE, F.FIRST_TURN_SPEECH_RATE)
HELP_REQUESTS = _fs("HelpRequests", F.HELP_REQUEST_COUNT, F.FIRST_TURN_HELP)
FIRST_TURN = _fs(
    "FirstTurn",
    F.FIRST_TURN_BARGE_IN,
    F.FIRST_TURN_DELAY,
    F.FIRST_TURN_POSITIVE_DELAY,
    F.FIRST_TURN_DURATION,
    F.FIRST_TURN_SPEECH_RATE,
    F.FIRST_TURN_HELP,
)
GLOBAL = _fs("Global", *(f for f in ALL_FEATURES if f not in FIRST_TURN.features))
ALL = FeatureSet("All", ALL_FEATURES)

CATEGORY_SETS = (INTERRUPTIONS, DELAYS, DURATIONS, SPEECH_RATE, HELP_REQUESTS)
# Row order of the result tables: categories, then the combined sets.
NAMED_SETS = CATEGORY_SETS + (FIRST_TURN, GLOBAL, ALL)
# Bare "Selected": the subset of All chosen by feature selection at run time.
SELECTED = FeatureSet("Selected", ())
TABLE_SETS = NAMED_SETS + (SELECTED,)
_BY_NAME = {fs.name.lower(): fs for fs in NAMED_SETS}


def feature_set(name: str) -> FeatureSet:
    """Look up a named set; ``Selected:f1,f2`` builds an explicit selection."""
    key = name.strip()
    if key.lower().startswith("selected"):
        _, _, rest = key.partition(":")
        names = [p for p in rest.split(",") if p.strip()]
        return FeatureSet.selected(names) if names else SELECTED
    try:
        return _BY_NAME[key.lower().replace(" ", "").replace("_", "")]
    except KeyError:
        raise ValueError(f"unknown feature set {name!r}") from None


@dataclass(frozen=True)
class ExtractionConfig:
    default_first_prompt_duration: float = 10.25
    help_keywords: tuple[str, ...] = ("help",)
    help_dtmf_key: str = "0"
    phone_estimator_enabled: bool = False

    def __post_init__(self):
        if not self.default_first_prompt_duration > 0:
            raise ValueError("default_first_prompt_duration must be positive")
        object.__setattr__(self, "help_keywords", tuple(k.lower() for k in self.help_keywords))


@dataclass(frozen=True)
class FeatureVector:
    """Feature values for one session; ``None`` marks a missing value."""

    values: Mapping[FeatureId, float | None]
    session_id: str = ""
    label: Label = Label.UNLABELED
    provenance: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        ordered = {f: self.values[f] for f in sorted(self.values, key=_ORDINAL.__getitem__)}
        object.__setattr__(self, "values", ordered)

    def __getitem__(self, feature: FeatureId) -> float | None:
        return self.values[feature]

    @property
    def features(self) -> tuple[FeatureId, ...]:
        return tuple(self.values)

    @property
    def missing(self) -> tuple[FeatureId, ...]:
        return tuple(f for f, v in self.values.items() if v is None)


class Interruptions(NamedTuple):
    barge_in_count: int
    barge_in_rate: float
    first_turn_barge_in: bool


class Delays(NamedTuple):
    first_turn_delay: float | None
    first_turn_positive_delay: float | None


class Durations(NamedTuple):
    mean_utterance_duration: float | None
    call_duration: float | None
    first_turn_duration: float | None
    exchange_count: int


class SpeechRates(NamedTuple):
    global_speech_rate: float | None
    first_turn_speech_rate: float | None


class HelpRequests(NamedTuple):
    help_request_count: int
    first_turn_help: bool


def _require_interaction(session: Session):
    if not session.exchanges:
        raise ExtractionError(f"session {session.session_id!r} has no exchanges")
    if session.no_interaction:
        raise ExtractionError(f"session {session.session_id!r} is a no-interaction session")


def extract_interruptions(session: Session) -> Interruptions:
    _require_interaction(session)
    return _interruptions(session)


def _interruptions(session):
    flags = [ex.user_barge_in for ex in session.exchanges]
    count = sum(flags)
    return Interruptions(count, 100.0 * count / len(flags), bool(flags[0]))


def first_prompt_end(session: Session, config: ExtractionConfig) -> float:
    first = session.exchanges[0]
    if first.system_end is not None:
        return first.system_end
    duration = session.first_system_prompt_duration
    if duration is None:
        duration = config.default_first_prompt_duration
    return first.system_start + duration


def extract_delays(session: Session, config: ExtractionConfig = ExtractionConfig()) -> Delays:
    """Delay between the end of the first system prompt and the user's answer.

    Only the first exchange has a known prompt duration, so no other delays
    are computed. A negative delay means the user barged in.
    """
    return _delays(session, config)[0]


def _delays(session, config):
    first = session.exchanges[0]
    if first.user_start is None:
        return Delays(None, None), {"no_first_turn_answer"}
    delay = first.user_start - first_prompt_end(session, config)
    return Delays(delay, delay if delay > 0 else None), set()


def extract_durations(session: Session) -> Durations:
    spans = [ex.utterance_duration for ex in session.exchanges]
    present = [d for d in spans if d is not None]
    mean = sum(present) / len(present) if present else None

    starts = []
    ends = []
    for ex in session.exchanges:
        starts.append(ex.system_start)
        if ex.user_start is not None:
            starts.append(ex.user_start)
        if ex.system_end is not None:
            ends.append(ex.system_end)
        if ex.user_end is not None:
            ends.append(ex.user_end)
    call = max(ends) - min(starts) if ends else None
    return Durations(mean, call, spans[0], len(session.exchanges))


_VOWEL_GROUP = re.compile(r"[aeiouy]+")
_WORD = re.compile(r"[^\W\d_]+")


def _syllables(word: str) -> int:
    groups = _VOWEL_GROUP.findall(word)
    # A trailing lone "e" after a consonant is silent ("one", "time", "fare").
    if len(groups) > 1 and word.endswith("e") and groups[-1] == "e" and word[-2] not in "aeiouy":
        groups = groups[:-1]
    return max(1, len(groups))


def estimate_phone_count(transcript: str) -> int:
    """Rough phone count from orthography: ceil(1.3 x syllables).

    Syllables are counted per word as maximal vowel-letter groups (at least
    one per word, silent final e dropped). Only meant as a fallback when the
    log carries no recognizer phone counts.
    """
    words = _WORD.findall((transcript or "").lower())
    if not words:
        raise ExtractionError("cannot estimate phones of an empty transcript")
    syllables = sum(_syllables(w) for w in words)
    # Integer arithmetic keeps ceil() exact (1.3 * 4 == 5.2000000000000002).
    return -(-13 * syllables // 10)


def extract_speech_rate(session: Session, config: ExtractionConfig = ExtractionConfig()) -> SpeechRates:
    return _speech_rate(session, config)[0]


def _phones(ex, config, flags):
    if ex.phone_count is not None:
        return ex.phone_count
    if config.phone_estimator_enabled and ex.transcript and _WORD.search(ex.transcript):
        flags.add("estimated_phone_count")
        return estimate_phone_count(ex.transcript)
    return None


def _speech_rate(session, config):
    flags = set()
    rates = []
    first_rate = None
    for pos, ex in enumerate(session.exchanges):
        duration = ex.utterance_duration
        if duration is None:
            continue
        phones = _phones(ex, config, flags)
        if phones is None:
            continue
        if duration <= 0:
            flags.add("zero_duration_utterance")
            continue
        rate = phones / duration
        rates.append(rate)
        if pos == 0:
            first_rate = rate
    # Mean of per-utterance rates, not pooled phones over pooled time.
    global_rate = sum(rates) / len(rates) if rates else None
    return SpeechRates(global_rate, first_rate), flags


def _is_help(ex, config) -> bool:
    if ex.help_flag:
        return True
    if ex.transcript:
        tokens = re.findall(r"[^\W\d_]+", ex.transcript.casefold())
        if any(t in config.help_keywords for t in tokens):
            return True
    return bool(ex.dtmf) and config.help_dtmf_key in ex.dtmf


def extract_help(session: Session, config: ExtractionConfig = ExtractionConfig()) -> HelpRequests:
    hits = [_is_help(ex, config) for ex in session.exchanges]
    return HelpRequests(sum(hits), bool(hits[0]))


def extract_features(session: Session, config: ExtractionConfig = ExtractionConfig()) -> FeatureVector:
    _require_interaction(session)
    return _extract(session, config)


def _extract(session: Session, config: ExtractionConfig) -> FeatureVector:
    # No interaction check here: incremental classification needs prefixes
    # in which the user has not spoken yet.
    inter = _interruptions(session)
    delays, flags = _delays(session, config)
    durations = extract_durations(session)
    rates, rate_flags = _speech_rate(session, config)
    help_ = extract_help(session, config)
    values = {
        F.BARGE_IN_COUNT: float(inter.barge_in_count),
        F.BARGE_IN_RATE: inter.barge_in_rate,
        F.FIRST_TURN_BARGE_IN: float(inter.first_turn_barge_in),
        F.FIRST_TURN_DELAY: delays.first_turn_delay,
        F.FIRST_TURN_POSITIVE_DELAY: delays.first_turn_positive_delay,
        F.MEAN_UTTERANCE_DURATION: durations.mean_utterance_duration,
        F.CALL_DURATION: durations.call_duration,
        F.FIRST_TURN_DURATION: durations.first_turn_duration,
        F.EXCHANGE_COUNT: float(durations.exchange_count),
        F.GLOBAL_SPEECH_RATE: rates.global_speech_rate,
        F.FIRST_TURN_SPEECH_RATE: rates.first_turn_speech_rate,
        F.HELP_REQUEST_COUNT: float(help_.help_request_count),
        F.FIRST_TURN_HELP: float(help_.first_turn_help),
    }
    return FeatureVector(values, session.session_id, session.label, frozenset(flags | rate_flags))


def project(vector: FeatureVector, fset: FeatureSet) -> FeatureVector:
    if not fset.features:
        raise ValueError("cannot project onto an empty feature set")
    values = {f: vector.values[f] for f in fset.features if f in vector.values}
    return FeatureVector(values, vector.session_id, vector.label, vector.provenance)


# -- feature-matrix interchange ------------------------------------------------

MISSING = "?"


def format_value(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return MISSING
    return repr(float(value))


def parse_value(text: str) -> float | None:
    text = text.strip()
    if text == MISSING:
        return None
    return float(text)


def write_matrix(
    vectors: Iterable[FeatureVector],
    stream: IO[str],
    features: Iterable[FeatureId] = ALL_FEATURES,
    echo: Mapping[str, object] | None = None,
) -> None:
    """Write vectors as a comma-separated matrix; config echo goes in ``#`` lines."""
    features = tuple(features)
    for key, value in (echo or {}).items():
        stream.write(f"# {key}={value}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["session_id", "label", *(f.value for f in features)])
    for v in vectors:
        writer.writerow([v.session_id, v.label.value, *(format_value(v.values.get(f)) for f in features)])


def read_matrix(stream: IO[str]) -> tuple[list[FeatureVector], dict[str, str]]:
    echo = {}
    body = []
    for line in stream:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            echo[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise SchemaMismatchError("feature matrix has no header")
    header = rows[0]
    if header[:2] != ["session_id", "label"]:
        raise SchemaMismatchError("feature matrix must start with session_id,label columns")
    features = [feature_id(name) for name in header[2:]]
    vectors = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaMismatchError(f"row {lineno}: expected {len(header)} columns, got {len(row)}")
        values = {f: parse_value(cell) for f, cell in zip(features, row[2:])}
        vectors.append(FeatureVector(values, row[0], Label.parse(row[1])))
    return vectors, echo
