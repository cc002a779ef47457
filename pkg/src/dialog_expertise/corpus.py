"""Dialog-session data model and the line-oriented session-log format.

A log stream starts with the header line ``#expertise-log v1`` followed by one
JSON object per line, each describing a whole call::

    #expertise-log v1
    {"session_id":"c01","label":"Novice","exchanges":[{"index":1,"system_start":0.0,"user_start":11.2,"user_end":12.9,"user_barge_in":false}]}

Absent optional fields are simply omitted. Times are seconds from the start
of the call.
"""

from __future__ import annotations

import io
import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable

from .errors import EmptyCorpusError, LogParseError, LogValidationError

logger = logging.getLogger(__name__)

LOG_HEADER = "#expertise-log"
LOG_VERSION = "v1"


class UnknownFieldWarning(UserWarning):
    """Emitted when a record carries fields this reader does not know."""


class Label(str, Enum):
    NOVICE = "Novice"
    EXPERT = "Expert"
    UNLABELED = "Unlabeled"

    @classmethod
    def parse(cls, text: str) -> "Label":
        key = text.strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown label {text!r}")


# Class order used everywhere a 0/1 encoding is needed (ties break to index 0).
CLASS_ORDER = (Label.NOVICE, Label.EXPERT)


@dataclass(frozen=True)
class Exchange:
    index: int
    system_start: float
    system_end: float | None = None
    user_start: float | None = None
    user_end: float | None = None
    user_barge_in: bool = False
    transcript: str | None = None
    phone_count: int | None = None
    dtmf: str | None = None
    help_flag: bool | None = None

    @property
    def has_utterance(self) -> bool:
        return self.user_start is not None and self.user_end is not None

    @property
    def utterance_duration(self) -> float | None:
        if not self.has_utterance:
            return None
        return self.user_end - self.user_start


@dataclass(frozen=True)
class Session:
    session_id: str
    exchanges: tuple[Exchange, ...]
    label: Label = Label.UNLABELED
    first_system_prompt_duration: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "exchanges", tuple(self.exchanges))

    @property
    def no_interaction(self) -> bool:
        """True when the user never speaks during the call."""
        return all(ex.user_start is None for ex in self.exchanges)

    def prefix(self, n_exchanges: int) -> "Session":
        return Session(
            self.session_id,
            self.exchanges[:n_exchanges],
            self.label,
            self.first_system_prompt_duration,
        )


@dataclass(frozen=True)
class Rejection:
    line: int
    session_id: str | None
    reason: str


@dataclass(frozen=True)
class Corpus:
    sessions: tuple[Session, ...]
    name: str = ""
    rejections: tuple[Rejection, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        object.__setattr__(self, "rejections", tuple(self.rejections))
        seen = set()
        for s in self.sessions:
            if s.session_id in seen:
                raise LogValidationError("duplicate session_id", s.session_id)
            seen.add(s.session_id)

    def __len__(self):
        return len(self.sessions)

    def __iter__(self):
        return iter(self.sessions)


_EXCHANGE_FIELDS = (
    "index",
    "system_start",
    "system_end",
    "user_start",
    "user_end",
    "user_barge_in",
    "transcript",
    "phone_count",
    "dtmf",
    "help_flag",
)
_SESSION_FIELDS = ("session_id", "label", "first_system_prompt_duration", "exchanges")


def _number(obj, key, path, line, required=False):
    if key not in obj or obj[key] is None:
        if required:
            raise LogParseError("missing required field", line, path)
        return None
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise LogParseError("expected a number", line, path)
    value = float(value)
    if not math.isfinite(value):
        raise LogParseError("expected a finite number", line, path)
    return value


def _boolean(obj, key, path, line, default=None):
    if key not in obj or obj[key] is None:
        return default
    value = obj[key]
    if not isinstance(value, bool):
        raise LogParseError("expected true/false", line, path)
    return value


def _text(obj, key, path, line):
    if key not in obj or obj[key] is None:
        return None
    value = obj[key]
    if not isinstance(value, str):
        raise LogParseError("expected a string", line, path)
    return value


def _warn_unknown(obj, known, path, line):
    extra = sorted(set(obj) - set(known))
    if extra:
        warnings.warn(
            f"line {line}: ignoring unknown field(s) {extra} in {path}",
            UnknownFieldWarning,
            stacklevel=3,
        )


def _parse_exchange(obj, pos, line) -> Exchange:
    path = f"exchanges[{pos}]"
    if not isinstance(obj, dict):
        raise LogParseError("expected an object", line, path)
    _warn_unknown(obj, _EXCHANGE_FIELDS, path, line)
    index = obj.get("index")
    if isinstance(index, bool) or not isinstance(index, int):
        raise LogParseError("expected an integer", line, f"{path}.index")
    phones = obj.get("phone_count")
    if phones is not None and (isinstance(phones, bool) or not isinstance(phones, int)):
        raise LogParseError("expected an integer", line, f"{path}.phone_count")
    return Exchange(
        index=index,
        system_start=_number(obj, "system_start", f"{path}.system_start", line, required=True),
        system_end=_number(obj, "system_end", f"{path}.system_end", line),
        user_start=_number(obj, "user_start", f"{path}.user_start", line),
        user_end=_number(obj, "user_end", f"{path}.user_end", line),
        user_barge_in=_boolean(obj, "user_barge_in", f"{path}.user_barge_in", line, False),
        transcript=_text(obj, "transcript", f"{path}.transcript", line),
        phone_count=phones,
        dtmf=_text(obj, "dtmf", f"{path}.dtmf", line),
        help_flag=_boolean(obj, "help_flag", f"{path}.help_flag", line),
    )


def validate_session(session: Session) -> None:
    """Raise :class:`LogValidationError` if ``session`` breaks an invariant."""
    if not session.session_id:
        raise LogValidationError("empty session_id")
    if not session.exchanges:
        raise LogValidationError("session has no exchanges", session.session_id)
    p = session.first_system_prompt_duration
    if p is not None and not p > 0:
        raise LogValidationError("first_system_prompt_duration must be positive", session.session_id)
    prev_start = None
    for pos, ex in enumerate(session.exchanges, start=1):
        where = f"{session.session_id} exchange {ex.index}"
        if ex.index != pos:
            raise LogValidationError("non-consecutive exchange index", where)
        if ex.system_start < 0:
            raise LogValidationError("negative system_start", where)
        if prev_start is not None and ex.system_start < prev_start:
            raise LogValidationError("system_start decreases across exchanges", where)
        prev_start = ex.system_start
        if ex.system_end is not None and ex.system_end < ex.system_start:
            raise LogValidationError("system_end precedes system_start", where)
        if ex.user_start is not None and ex.user_end is not None and ex.user_end < ex.user_start:
            raise LogValidationError("user_end precedes user_start", where)
        if ex.user_end is not None and ex.user_start is None:
            raise LogValidationError("user_end without user_start", where)
        if ex.user_barge_in and ex.user_start is None:
            raise LogValidationError("barge-in without user_start", where)
        if ex.phone_count is not None and ex.phone_count < 0:
            raise LogValidationError("negative phone_count", where)


def parse_session_record(record: str, line: int | None = None) -> Session:
    """Parse and validate one serialized session object."""
    try:
        obj = json.loads(record)
    except json.JSONDecodeError as exc:
        raise LogParseError(f"malformed record: {exc.msg} at column {exc.colno}", line) from None
    if not isinstance(obj, dict):
        raise LogParseError("record must be an object", line)
    _warn_unknown(obj, _SESSION_FIELDS, "session", line)

    session_id = obj.get("session_id")
    if not isinstance(session_id, str):
        raise LogParseError("expected a string", line, "session_id")
    raw_label = obj.get("label")
    if raw_label is None:
        label = Label.UNLABELED
    elif isinstance(raw_label, str):
        try:
            label = Label.parse(raw_label)
        except ValueError:
            raise LogParseError(f"unknown label {raw_label!r}", line, "label") from None
    else:
        raise LogParseError("expected a string", line, "label")
    raw_exchanges = obj.get("exchanges")
    if not isinstance(raw_exchanges, list):
        raise LogParseError("expected a list", line, "exchanges")
    exchanges = tuple(_parse_exchange(e, i, line) for i, e in enumerate(raw_exchanges))
    session = Session(
        session_id=session_id,
        exchanges=exchanges,
        label=label,
        first_system_prompt_duration=_number(
            obj, "first_system_prompt_duration", "first_system_prompt_duration", line
        ),
    )
    validate_session(session)
    return session


def _exchange_to_dict(ex: Exchange) -> dict:
    out = {}
    for name in _EXCHANGE_FIELDS:
        value = getattr(ex, name)
        if name == "user_barge_in":
            out[name] = bool(value)
        elif value is not None:
            out[name] = value
    return out


def session_to_dict(session: Session) -> dict:
    out = {"session_id": session.session_id, "label": session.label.value}
    if session.first_system_prompt_duration is not None:
        out["first_system_prompt_duration"] = session.first_system_prompt_duration
    out["exchanges"] = [_exchange_to_dict(ex) for ex in session.exchanges]
    return out


def serialize_session(session: Session) -> str:
    # json renders floats with repr(), i.e. shortest round-trip decimal.
    return json.dumps(session_to_dict(session), separators=(",", ":"), ensure_ascii=False)


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    for raw in source:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        yield raw.rstrip("\r\n")


def load_corpus(source: IO[bytes] | Iterable[bytes] | bytes, name: str = "") -> Corpus:
    """Read a session-log stream into a :class:`Corpus`.

    Records that fail to parse or validate, or that repeat an earlier
    session_id, are skipped and reported in ``Corpus.rejections``.
    """
    lines = _iter_lines(source)
    header = None
    lineno = 0
    for text in lines:
        lineno += 1
        if text.strip():
            header = text.strip()
            break
    if header is None:
        raise EmptyCorpusError(f"corpus {name!r}: empty stream")
    parts = header.split()
    if not parts or parts[0] != LOG_HEADER:
        raise LogParseError(f"missing '{LOG_HEADER} {LOG_VERSION}' header", lineno)
    if len(parts) != 2 or parts[1] != LOG_VERSION:
        raise LogParseError(f"unsupported log version {header!r}", lineno)

    sessions: list[Session] = []
    rejections: list[Rejection] = []
    seen: set[str] = set()
    n_records = 0
    for text in lines:
        lineno += 1
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        n_records += 1
        try:
            session = parse_session_record(text, line=lineno)
        except (LogParseError, LogValidationError) as exc:
            sid = _peek_session_id(text)
            rejections.append(Rejection(lineno, sid, str(exc)))
            continue
        if session.session_id in seen:
            rejections.append(Rejection(lineno, session.session_id, "duplicate session_id"))
            continue
        seen.add(session.session_id)
        sessions.append(session)
    if n_records == 0:
        raise EmptyCorpusError(f"corpus {name!r}: no session records")
    for r in rejections:
        logger.warning("corpus %s: rejected line %d (%s): %s", name, r.line, r.session_id, r.reason)
    return Corpus(tuple(sessions), name, tuple(rejections))


def _peek_session_id(text):
    try:
        sid = json.loads(text).get("session_id")
    except Exception:
        return None
    return sid if isinstance(sid, str) else None


def dump_corpus(sessions: Iterable[Session], stream: IO[str], echo: dict | None = None) -> None:
    """Write the header, optional ``# key=value`` config lines, then one record per line."""
    stream.write(f"{LOG_HEADER} {LOG_VERSION}\n")
    for key, value in (echo or {}).items():
        stream.write(f"# {key}={value}\n")
    for s in sessions:
        stream.write(serialize_session(s))
        stream.write("\n")


def dumps_corpus(sessions: Iterable[Session], echo: dict | None = None) -> str:
    buf = io.StringIO()
    dump_corpus(sessions, buf, echo)
    return buf.getvalue()


def class_distribution(corpus: Corpus | Iterable[Session]) -> dict[Label, int]:
    counts = Counter(s.label for s in corpus)
    return {label: counts.get(label, 0) for label in Label}
