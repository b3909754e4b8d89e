"""Result files written after a run.

``events.csv``
    ``seq,time_us,kind,actor,msg_id,detail``, one row per orchestrator event.
``stats.json``
    message counters, termination time and per-message delays.
``states.json``
    ``solved`` (system state of every agent that reached the threshold) and
    ``all`` (every agent's known contributions).

All files are written with sorted keys and ``\\n`` line endings so that equal
runs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Optional, Union

from .orchestrator import RunReport
from .protocol import describe, to_json
from .scenario import RunStats

EVENT_COLUMNS = ("seq", "time_us", "kind", "actor", "msg_id", "detail")


def _write_json(path: Path, doc: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def stats_document(stats: RunStats) -> dict[str, Any]:
    return {
        "messages_sent": stats.messages_sent,
        "messages_delivered": stats.messages_delivered,
        "messages_lost": stats.messages_lost,
        "termination_time_us": stats.termination_time_us,
        "delays": [
            {"msg_id": r.msg_id, "sender": r.sender, "receiver": r.receiver, "delay_us": r.delay_us}
            for r in stats.records
            if r.delivered_at is not None
        ],
    }


def states_document(report: RunReport, stats: RunStats) -> dict[str, Any]:
    everyone = {
        sid: state["contributions"]
        for sid, state in report.final_states.items()
        if "contributions" in state
    }
    return {"solved": stats.solved, "all": everyone}


def protocol_document(report: RunReport) -> list[dict[str, Any]]:
    return [{"origin": origin, "message": to_json(m)} for origin, m in report.protocol_trace]


def export_results(report: RunReport, stats: RunStats, out_dir: Union[str, Path],
                   trace: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    events = out / "events.csv"
    with open(events, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVENT_COLUMNS)
        for e in report.trace:
            writer.writerow((e.seq, e.time_us, e.kind, e.actor, e.msg_id, e.detail))
    written.append(events)

    for name, doc in (("stats.json", stats_document(stats)), ("states.json", states_document(report, stats))):
        _write_json(out / name, doc)
        written.append(out / name)

    if trace:
        path = out / "protocol.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in protocol_document(report):
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
        written.append(path)
    return written


def format_protocol_trace(report: RunReport, limit: Optional[int] = None) -> list[str]:
    rows = report.protocol_trace if limit is None else report.protocol_trace[:limit]
    return [f"{origin:>12}  {describe(m)}" for origin, m in rows]
