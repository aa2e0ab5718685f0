"""Read and write interaction logs as line-delimited JSON or flat CSV."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

from userlearn.core import Annotation, Event, LogFormatError, Session, Study, UsageError

FIELDS = ("session_id", "user_id", "study", "index", "raw_action", "params", "annotation")
REQUIRED = ("session_id", "user_id", "study", "index", "raw_action")
STUDY_FIELDS = {
    Study.FORECACHE: ("zoom_level", "snow_level"),
    Study.IMMENS: ("visualization",),
    Study.TABLEAU: ("attributes",),
    Study.SYNTHETIC: (),
}
DEFAULT_MAX_ZOOM = 6


@dataclass(frozen=True)
class LogFile:
    path: Path
    format: str = "jsonl"
    study: Study | None = None

    @classmethod
    def infer(cls, path: str | Path, fmt: str | None = None, study: str | Study | None = None) -> "LogFile":
        path = Path(path)
        if fmt is None:
            fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
        if fmt not in ("jsonl", "csv"):
            raise UsageError(f"unsupported log format {fmt!r}")
        return cls(path, fmt, Study(study) if study else None)


@dataclass(frozen=True)
class Diagnostic:
    session_id: str
    index: int | None
    message: str

    def __str__(self) -> str:
        where = f" @ index {self.index}" if self.index is not None else ""
        return f"{self.session_id}: {self.message}{where}"


def event_from_record(rec: dict, line: int | None = None, study: Study | None = None) -> Event:
    if not isinstance(rec, dict):
        raise LogFormatError("record is not an object", line)
    rec = dict(rec)
    if study is not None:
        rec.setdefault("study", study.value)
    for name in REQUIRED:
        if rec.get(name) in (None, ""):
            raise LogFormatError(f"missing required field {name!r}", line)
    try:
        st = Study(str(rec["study"]).lower())
    except ValueError:
        raise LogFormatError(f"unknown study {rec['study']!r}", line) from None
    if study is not None and st != study:
        raise LogFormatError(f"record study {st.value!r} does not match {study.value!r}", line)
    raw = rec["index"]
    try:
        if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
            raise ValueError
        index = int(raw)
    except (TypeError, ValueError):
        raise LogFormatError(f"index {raw!r} is not an integer", line) from None
    if index < 0:
        raise LogFormatError(f"index {raw!r} is negative", line)
    params = rec.get("params") or {}
    if not isinstance(params, dict):
        raise LogFormatError("params must be an object", line)
    params = dict(params)
    # unknown top-level fields are kept as params
    for key, value in rec.items():
        if key not in FIELDS:
            params.setdefault(key, value)
    return Event(
        session_id=str(rec["session_id"]),
        user_id=str(rec["user_id"]),
        study=st,
        index=index,
        raw_action=str(rec["raw_action"]),
        params=params,
        annotation=Annotation.parse(rec.get("annotation")),
    )


def _iter_jsonl(text: Iterable[str]) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(text, start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"malformed JSON ({exc.msg})", lineno) from None


def _parse_cell(cell: str) -> Any:
    if cell == "":
        return None
    if cell[0] in "[{":
        try:
            return json.loads(cell)
        except json.JSONDecodeError:
            return cell
    for conv in (int, float):
        try:
            return conv(cell)
        except ValueError:
            pass
    return cell


def _iter_csv(text: Iterable[str]) -> Iterator[tuple[int, dict]]:
    reader = csv.DictReader(text)
    if reader.fieldnames is None:
        raise LogFormatError("CSV input has no header row", 1)
    missing = [f for f in REQUIRED if f not in reader.fieldnames]
    if missing:
        raise LogFormatError(f"CSV header lacks columns {missing}", 1)
    for row in reader:
        lineno = reader.line_num
        if None in row:
            raise LogFormatError("row has more cells than the header", lineno)
        rec: dict[str, Any] = {}
        params: dict[str, Any] = {}
        for key, cell in row.items():
            if cell is None:
                raise LogFormatError("row has fewer cells than the header", lineno)
            value = _parse_cell(cell)
            if value is None:
                continue
            if key.startswith("params."):
                params[key[len("params."):]] = value
            elif key in ("session_id", "user_id", "raw_action", "study", "annotation"):
                rec[key] = cell
            else:
                rec[key] = value
        rec["params"] = params
        yield lineno, rec


def group_sessions(events: Iterable[tuple[int | None, Event]]) -> list[Session]:
    groups: dict[str, list[Event]] = defaultdict(list)
    seen: dict[tuple[str, int], int | None] = {}
    for line, ev in events:
        key = (ev.session_id, ev.index)
        if key in seen:
            raise LogFormatError(
                f"duplicate index {ev.index} in session {ev.session_id!r}", line)
        seen[key] = line
        groups[ev.session_id].append(ev)
    sessions = []
    for sid in sorted(groups):
        evs = sorted(groups[sid], key=lambda e: e.index)
        first = evs[0].params
        meta = {k: first[k] for k in ("dataset", "task") if k in first}
        sessions.append(Session(tuple(evs), meta))
    return sessions


def parse_text(text: str, fmt: str = "jsonl", study: Study | None = None) -> list[Session]:
    lines = io.StringIO(text)
    it = _iter_csv(lines) if fmt == "csv" else _iter_jsonl(lines)
    return group_sessions((ln, event_from_record(rec, ln, study)) for ln, rec in it)


def parse_log(file: LogFile | str | Path, fmt: str | None = None) -> list[Session]:
    if not isinstance(file, LogFile):
        file = LogFile.infer(file, fmt)
    with open(file.path, encoding="utf-8", newline="") as fh:
        it = _iter_csv(fh) if file.format == "csv" else _iter_jsonl(fh)
        return group_sessions((ln, event_from_record(rec, ln, file.study)) for ln, rec in it)


def validate_session(session: Session, max_zoom: int = DEFAULT_MAX_ZOOM) -> list[Diagnostic]:
    """Collect every problem in a session; an empty list means it is valid."""
    out: list[Diagnostic] = []
    sid = session.session_id
    prev = None
    for ev in session.events:
        if prev is not None and ev.index <= prev:
            out.append(Diagnostic(sid, ev.index, "index not strictly increasing"))
        prev = ev.index
        for name in STUDY_FIELDS[ev.study]:
            if ev.params.get(name) is None:
                out.append(Diagnostic(sid, ev.index, f"missing field: {name}"))
        snow = ev.params.get("snow_level")
        if snow is not None:
            if not isinstance(snow, (int, float)) or isinstance(snow, bool):
                out.append(Diagnostic(sid, ev.index, "snow_level not numeric"))
            elif not 0.0 <= snow <= 1.0:
                out.append(Diagnostic(sid, ev.index, f"snow_level {snow} out of range"))
        zoom = ev.params.get("zoom_level")
        if zoom is not None:
            if not isinstance(zoom, int) or isinstance(zoom, bool):
                out.append(Diagnostic(sid, ev.index, "zoom_level not an integer"))
            elif not 0 <= zoom <= max_zoom:
                out.append(Diagnostic(sid, ev.index, f"zoom_level {zoom} out of range"))
        attrs = ev.params.get("attributes")
        if attrs is not None and not isinstance(attrs, list):
            out.append(Diagnostic(sid, ev.index, "attributes must be a list"))
    return out


def to_jsonl(sessions: Iterable[Session]) -> str:
    lines = []
    for s in sessions:
        for ev in s.events:
            rec = ev.to_record()
            rec["params"] = dict(sorted(rec["params"].items()))
            lines.append(json.dumps(rec, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def _format_cell(value: Any) -> str:
    if isinstance(value, (list, dict)):
        return json.dumps(value, ensure_ascii=False)
    return str(value)


def to_csv(sessions: Iterable[Session]) -> str:
    sessions = list(sessions)
    keys = sorted({k for s in sessions for ev in s.events for k in ev.params})
    header = [f for f in FIELDS if f != "params"] + [f"params.{k}" for k in keys]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for s in sessions:
        for ev in s.events:
            row = [ev.session_id, ev.user_id, ev.study.value, ev.index, ev.raw_action,
                   ev.annotation.value]
            row += ["" if ev.params.get(k) is None else _format_cell(ev.params[k]) for k in keys]
            writer.writerow(row)
    return buf.getvalue()


def write_sessions(sessions: Iterable[Session], path: str | Path, fmt: str = "jsonl") -> Path:
    path = Path(path)
    text = to_csv(sessions) if fmt == "csv" else to_jsonl(sessions)
    path.write_text(text, encoding="utf-8")
    return path
