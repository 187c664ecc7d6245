"""Metric aggregation and artifact rendering.

Every number shown in the text report is derived from the run logs and also
written to ``report.csv`` as a ``section,metric,value`` row; the text table is
purely a rendering. All files are UTF-8 with LF endings and contain nothing
run-dependent beyond the simulation itself (no wall-clock timestamps), so a
scenario re-run with the same seed writes byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import m_to_ft, mps_to_mph, round_half_away
from .radio import LinkKind
from .sim import RunResult, SYSTEM_NODE_ID

EXCHANGE_ROWS = (
    ("mobile_fixed", "Mobile Edge (CV) - Fixed Edge", LinkKind.DSRC, "bsm", "Basic safety messages"),
    ("system_fixed", "System Edge - Fixed Edge", LinkKind.WIFI, "queue_status", "Queue detection information"),
)


def fnum(x: float | int | None) -> str:
    """Stable scalar rendering for CSV cells (repr floats, empty for missing)."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    return str(x)


@dataclass(frozen=True)
class LinkStats:
    link: LinkKind
    sent: int
    delivered: int
    lost: int
    loss_pct: float | None
    avg_latency_ms: float | None
    max_latency_ms: int | None


def link_stats(result: RunResult) -> list[LinkStats]:
    stats = []
    for link in LinkKind:
        pkts = [p for p in result.packets if p.link is link]
        if not pkts:
            continue
        delivered = [p for p in pkts if p.delivered]
        latencies = [p.latency_ms for p in delivered]
        stats.append(
            LinkStats(
                link=link,
                sent=len(pkts),
                delivered=len(delivered),
                lost=len(pkts) - len(delivered),
                loss_pct=100.0 * (len(pkts) - len(delivered)) / len(pkts),
                avg_latency_ms=sum(latencies) / len(latencies) if latencies else None,
                max_latency_ms=max(latencies) if latencies else None,
            )
        )
    return stats


def exchange_delays(result: RunResult) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    for key, _, link, kind, _ in EXCHANGE_ROWS:
        latencies = [
            p.latency_ms for p in result.packets if p.link is link and p.kind == kind and p.delivered
        ]
        out[key] = sum(latencies) / len(latencies) if latencies else None
    return out


def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_decisions_csv(result: RunResult, path: Path) -> None:
    rows = []
    for d in result.avoidance_decisions:
        rows.append(
            [
                str(d.t_recv),
                d.vehicle,
                fnum(m_to_ft(d.gap_m)),
                fnum(m_to_ft(d.d_min_m)),
                d.verdict.value,
                d.link_used.value,
                str(d.latency_ms),
            ]
        )
    write_csv(path, ["t_ms", "vehicle", "gap_ft", "dmin_ft", "verdict", "link", "latency_ms"], rows)


def write_queue_decisions_csv(result: RunResult, path: Path) -> None:
    rows = []
    for e in result.queue_evals:
        d = e.decision
        rows.append(
            [
                str(d.t),
                d.rsu,
                fnum(None if d.avg_speed_mps is None else mps_to_mph(d.avg_speed_mps)),
                fnum(None if d.avg_gap_m is None else m_to_ft(d.avg_gap_m)),
                fnum(d.queued),
                fnum(e.truth),
            ]
        )
    write_csv(path, ["t_ms", "rsu", "avg_speed_mph", "avg_gap_ft", "queued", "truth"], rows)


def write_handoffs_csv(result: RunResult, path: Path) -> None:
    rows = [
        [str(e.t), e.vehicle, e.from_link.value, e.to_link.value] for e in result.handoff_events
    ]
    write_csv(path, ["t_ms", "vehicle", "from", "to"], rows)


def write_coverage_csv(result: RunResult, path: Path) -> None:
    rows = [
        [r.rsu, fnum(r.distance_m), fnum(round(r.rssi_dbm, 3)), fnum(round(r.p_loss, 6))]
        for r in result.coverage
    ]
    write_csv(path, ["rsu", "distance_m", "rssi_dbm", "p_loss"], rows)


def eval_bucket(t_emit: int, window_ms: int = 1000) -> int:
    """The detector evaluation instant whose window contains ``t_emit``."""
    return -(-t_emit // window_ms) * window_ms


def write_bsm_trace(result: RunResult, path: Path) -> int:
    """Export the backend's telemetry stream for offline replay.

    One JSON object per line with the raw message fields, plus the live
    ground-truth flag for the one-second evaluation its timestamp falls into
    (omitted when the run had no detector or the bucket was never evaluated).
    """
    truth_at: dict[int, bool] = {}
    for e in result.queue_evals:
        truth_at.setdefault(e.decision.t, e.truth)
    records = result.archives[SYSTEM_NODE_ID].query(0, result.summary.end_time_ms, "bsm/raw/#")
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            doc = dict(record.payload)
            bucket = eval_bucket(int(doc["t"]))
            if bucket in truth_at:
                doc["truth"] = truth_at[bucket]
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
            n += 1
    return n


def report_rows(result: RunResult) -> list[tuple[str, str, str]]:
    """Everything the text report shows, as (section, metric, value)."""
    cfg = result.config
    rows: list[tuple[str, str, str]] = [
        ("run", "scenario", cfg.name),
        ("run", "seed", str(cfg.seed)),
        ("run", "t_end_ms", str(result.summary.end_time_ms)),
        ("run", "events_processed", str(result.summary.events_processed)),
        ("run", "speed_tier_mph", str(cfg.speed_tier_mph)),
    ]
    for s in link_stats(result):
        sec = f"link.{s.link.value}"
        rows.append((sec, "sent", str(s.sent)))
        rows.append((sec, "delivered", str(s.delivered)))
        rows.append((sec, "lost", str(s.lost)))
        rows.append((sec, "loss_pct", fnum(round(s.loss_pct, 4))))
        rows.append((sec, "avg_latency_ms", fnum(s.avg_latency_ms)))
        rows.append((sec, "max_latency_ms", fnum(s.max_latency_ms)))
    delays = exchange_delays(result)
    for key, _, link, kind, _ in EXCHANGE_ROWS:
        rows.append((f"exchange.{key}", "link", link.value))
        rows.append((f"exchange.{key}", "data", kind))
        rows.append((f"exchange.{key}", "avg_delay_ms", fnum(delays[key])))
    for d in result.avoidance_decisions:
        sec = f"avoidance.{d.vehicle}.{d.link_used.value}"
        rows.append((sec, "t_ms", str(d.t_recv)))
        rows.append((sec, "gap_ft", fnum(round(m_to_ft(d.gap_m), 2))))
        rows.append((sec, "dmin_ft", str(round_half_away(m_to_ft(d.d_min_m)))))
        rows.append((sec, "verdict", d.verdict.value))
        rows.append((sec, "latency_ms", str(d.latency_ms)))
        rows.append((sec, "within_200ms_req", fnum(d.within_safety_latency)))
    rows.append(("handoff", "events", str(len(result.handoff_events))))
    for i, e in enumerate(result.handoff_events):
        rows.append((f"handoff.{i}", "t_ms", str(e.t)))
        rows.append((f"handoff.{i}", "vehicle", e.vehicle))
        rows.append((f"handoff.{i}", "transition", f"{e.from_link.value}->{e.to_link.value}"))
    rsu_ids = sorted({e.rsu for e in result.queue_evals})
    for rsu in rsu_ids:
        evals = [e for e in result.queue_evals if e.rsu == rsu]
        sec = f"queue.{rsu}"
        rows.append((sec, "evaluations", str(len(evals))))
        rows.append((sec, "queued_seconds", str(sum(1 for e in evals if e.decision.queued))))
        rows.append((sec, "truth_seconds", str(sum(1 for e in evals if e.truth))))
        rows.append((sec, "accuracy", fnum(result.queue_accuracy(rsu))))
    for node_id in sorted(result.archives):
        archive = result.archives[node_id]
        sec = f"archive.{node_id}"
        rows.append((sec, "records", str(len(archive))))
        rows.append((sec, "appended_total", str(archive.appended_total)))
        rows.append((sec, "bsm_raw", str(archive.count("bsm/raw/#"))))
        rows.append((sec, "queue_status", str(archive.count("queue/status/#"))))
    return rows


def render_text_report(result: RunResult) -> str:
    cfg = result.config
    lines = [
        f"scenario: {cfg.name}",
        f"seed: {cfg.seed}   t_end: {result.summary.end_time_ms} ms   "
        f"events: {result.summary.events_processed}",
        "",
        "== link statistics ==",
        f"{'link':8} {'sent':>8} {'delivered':>10} {'lost':>6} {'loss%':>8} {'avg ms':>9} {'max ms':>7}",
    ]
    for s in link_stats(result):
        avg = "-" if s.avg_latency_ms is None else f"{s.avg_latency_ms:.2f}"
        mx = "-" if s.max_latency_ms is None else str(s.max_latency_ms)
        lines.append(
            f"{s.link.value:8} {s.sent:>8} {s.delivered:>10} {s.lost:>6} "
            f"{s.loss_pct:>8.2f} {avg:>9} {mx:>7}"
        )
    delays = exchange_delays(result)
    lines += ["", "== data exchange delay =="]
    for key, label, link, _, data in EXCHANGE_ROWS:
        avg = "-" if delays[key] is None else f"{delays[key]:.2f} ms"
        lines.append(f"{label}: {data} over {link.value}: {avg}")
    if result.avoidance_decisions:
        lines += [
            "",
            "== collision avoidance ==",
            f"(safety latency requirement: {cfg.constants.safety_latency_req_ms} ms)",
            f"{'vehicle':10} {'link':6} {'gap ft':>9} {'dmin ft':>8} {'verdict':>8} "
            f"{'latency ms':>11} {'within req':>11}",
        ]
        for d in result.avoidance_decisions:
            lines.append(
                f"{d.vehicle:10} {d.link_used.value:6} {m_to_ft(d.gap_m):>9.2f} "
                f"{round_half_away(m_to_ft(d.d_min_m)):>8} {d.verdict.value:>8} "
                f"{d.latency_ms:>11} {str(d.within_safety_latency).lower():>11}"
            )
    lines += ["", f"== handoffs ({len(result.handoff_events)} events) =="]
    for e in result.handoff_events:
        lines.append(f"t={e.t} ms  {e.vehicle}: {e.from_link.value} -> {e.to_link.value}")
    rsu_ids = sorted({e.rsu for e in result.queue_evals})
    if rsu_ids:
        lines += ["", "== queue detection =="]
        for rsu in rsu_ids:
            evals = [e for e in result.queue_evals if e.rsu == rsu]
            queued = sum(1 for e in evals if e.decision.queued)
            truth = sum(1 for e in evals if e.truth)
            acc = result.queue_accuracy(rsu)
            lines.append(
                f"{rsu}: {len(evals)} evaluations, queued {queued}, truth {truth}, "
                f"accuracy {acc:.6f}"
            )
    lines += ["", "== archives =="]
    for node_id in sorted(result.archives):
        archive = result.archives[node_id]
        lines.append(
            f"{node_id}: {len(archive)} records retained ({archive.appended_total} appended, "
            f"{archive.count('bsm/raw/#')} bsm, {archive.count('queue/status/#')} queue-status)"
        )
    return "\n".join(lines) + "\n"


def write_artifacts(result: RunResult, out_dir: Path, fmt: str = "both") -> dict[str, Path]:
    """Write the full artifact set; returns name -> path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    if fmt in ("text", "both"):
        path = out_dir / "report.txt"
        path.write_text(render_text_report(result), encoding="utf-8")
        written["report.txt"] = path
    if fmt in ("csv", "both"):
        path = out_dir / "report.csv"
        rows = [[s, m, v] for s, m, v in report_rows(result)]
        write_csv(path, ["section", "metric", "value"], rows)
        written["report.csv"] = path
    pairs = [
        ("decisions.csv", write_decisions_csv),
        ("queue_decisions.csv", write_queue_decisions_csv),
        ("handoffs.csv", write_handoffs_csv),
        ("coverage.csv", write_coverage_csv),
    ]
    for name, writer in pairs:
        path = out_dir / name
        writer(result, path)
        written[name] = path
    path = out_dir / "archive.ndjson"
    result.archives[SYSTEM_NODE_ID].export_ndjson(str(path))
    written["archive.ndjson"] = path
    path = out_dir / "trace.ndjson"
    write_bsm_trace(result, path)
    written["trace.ndjson"] = path
    return written
