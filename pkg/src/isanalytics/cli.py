"""Command-line pipeline: generate, ingest, filter, train, detect, evaluate, report.

Exit codes: 0 success, 1 usage error, 2 data error.  Errors go to stderr
as ``error:usage: ...`` or ``error:data: ...``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

from . import synth
from .behavior_model import HOUR_MS, load_model, prune_stale, save_model, train
from .detection import (
    DEFAULT_STRIDE_MS,
    DEFAULT_WIDTH_MS,
    SWEEP_THRESHOLDS,
    Deviance,
    DevianceKind,
    default_jobs,
    deviances_from_scores,
    scan,
    sweep_counts,
    write_alerts,
)
from .evaluation import (
    apply_verdicts,
    load_scoring,
    read_labeled,
    score,
    train_triage,
    triage_all,
    write_labeled,
)
from .events import corpus_stats, ingest_file, load_mapping, read_events, write_events, write_mapping
from .ontology import load_vocabulary
from .selection import default_checkpoints, dump_context, load_checkpoints, load_context, select_events

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_DURATION = re.compile(r"^(\d+(?:\.\d+)?)(ms|s|m|h|d)?$")
_UNIT_MS = {"ms": 1, "s": 1000, "m": 60_000, "h": HOUR_MS, "d": 24 * HOUR_MS, None: 1}


def duration(text) -> int:
    """'1h', '15m', '30s', '250ms' or a bare integer of milliseconds."""
    if isinstance(text, (int, float)):
        return int(text)
    m = _DURATION.match(str(text).strip())
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    return int(float(m.group(1)) * _UNIT_MS[m.group(2)])


def thresholds(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        vals = tuple(float(v) for v in text)
    else:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    if not vals or not all(0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("thresholds must lie in (0, 1)")
    return vals


# -- subcommands ------------------------------------------------------------


def cmd_generate(a) -> None:
    cfg = synth.GeneratorConfig(seed=a.seed, user_count=a.users, days=a.days)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    world, (tr, trl), (te, tel) = synth.generate_split(cfg, a.test_days)
    specs = {"builtin": synth.BUILTIN_SCENARIOS, "r2l": synth.R2L_SCENARIOS, "none": ()}[a.scenarios]
    specs = tuple(synth.ScenarioSpec(s.effect, s.variant, s.steps, a.replications, s.gap_s) for s in specs)
    te, tel = synth.inject(te, tel, specs, world, seed=a.seed)
    synth.write_corpus(tr, trl, out, "train")
    synth.write_corpus(te, tel, out, "test")
    dump_context(world.context, out / "context.json")
    write_labeled(synth.labeled_points(a.seed), out / "labeled_points.csv")
    if a.raw:
        lines, table = synth.raw_records(tr)
        (out / "train_raw.tsv").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        write_mapping(table, out / "mapping.tsv")
    print(json.dumps({"train": len(tr), "test": len(te),
                      "attack": sum(1 for v in tel.values() if v != synth.LEGITIMATE)}, sort_keys=True))


def cmd_ingest(a) -> None:
    vocab = load_vocabulary(a.vocab) if a.vocab else None
    table = load_mapping(_need(a.mapping, "--mapping"), vocab)
    events, rejects = ingest_file(_need(a.raw, "--raw"), table)
    write_events(events, _need(a.out, "--out"))
    if a.rejects:
        with open(a.rejects, "w", encoding="utf-8", newline="\n") as fh:
            for r in rejects:
                fh.write(f"{r.index}\t{r.reason}\t{r.line}\n")
    signatures = len({(e.analyzer, (e.additional or {}).get("signature")) for e in events})
    stats = corpus_stats(events, signatures) if events else None
    print(json.dumps({
        "events": len(events),
        "rejects": dict(sorted(Counter(r.reason for r in rejects).items())),
        "signatures": signatures,
        "categories": stats.category_count if stats else 0,
        "reduction_rate": stats.reduction_rate if stats else 0.0,
    }, sort_keys=True))


def cmd_filter(a) -> None:
    table = load_checkpoints(a.checkpoints) if a.checkpoints else default_checkpoints()
    context = load_context(a.context) if a.context else {}
    events = read_events(_need(a.events, "--events"))
    kept = select_events(events, table, context)
    write_events(kept, _need(a.out, "--out"))
    print(json.dumps({"in": len(events), "out": len(kept)}, sort_keys=True))


def cmd_train(a) -> None:
    events = read_events(_need(a.events, "--events"))
    if not events:
        raise DataError("no events to train on")
    model, report = train(events, alpha=a.alpha, horizon_ms=a.horizon, steps=a.steps)
    dropped = prune_stale(model, a.prune) if a.prune is not None else 0
    save_model(model, _need(a.model, "--model"))
    if a.out:
        Path(a.out).write_text(report.to_csv(), encoding="utf-8", newline="\n")
    print(json.dumps({"nodes": len(model.nodes), "arcs": len(model.arcs), "removed_arcs": len(model.removed),
                      "states": model.state_count(), "pruned": dropped,
                      "stationary_step": report.stationary_step}, sort_keys=True))


def _scores(a):
    model = load_model(_need(a.model, "--model"))
    events = read_events(_need(a.events, "--events"))
    return model, events, scan(model, events, a.window, a.stride, a.jobs)


def cmd_detect(a) -> None:
    if len(a.threshold) != 1:
        raise UsageError("detect takes a single --threshold")
    _, _, scores = _scores(a)
    devs = deviances_from_scores(scores, a.threshold[0])
    write_alerts(devs, _need(a.out, "--out"))
    counts = sweep_counts(scores, a.thresholds)
    counts["probabilistic"] = {repr(t): n for t, n in counts["probabilistic"].items()}
    counts["alerts"] = len(devs)
    print(json.dumps(counts, sort_keys=True))


def _read_alerts(path, events) -> list[Deviance]:
    by_id = {e.event_id: e for e in events}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(Deviance(
                    DevianceKind(rec["kind"]), by_id[rec["event_id"]],
                    tuple(by_id[c] for c in rec["chain"]), rec.get("probability"), rec.get("threshold"),
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad alert record ({exc})") from exc
    return out


def cmd_evaluate(a) -> None:
    events = read_events(_need(a.events, "--events"))
    devs = _read_alerts(_need(a.alerts, "--alerts"), events)
    context = load_context(a.context) if a.context else {}
    tables = load_scoring(a.scoring)
    if a.labeled:
        labeled = read_labeled(a.labeled)
    elif a.labels:
        truth = synth.read_labels(a.labels)
        ids = {d.event.event_id for d in devs}
        labeled = [(score(d, context, tables, ids).vector(),
                    "normal" if truth.get(d.event.event_id) == synth.LEGITIMATE else "attack") for d in devs]
    else:
        raise UsageError("evaluate needs --labeled or --labels")
    tm = train_triage(labeled)
    triaged = triage_all(tm, devs, context, tables)
    updated = 0
    if a.model:
        model = load_model(a.model)
        res = apply_verdicts(model, triaged)
        alerts, updated = res.alerts, res.updated
        if a.model_out:
            save_model(model, a.model_out)
    else:
        alerts = [t.alert_record() for t in triaged if t.verdict.value != "NormalEvolution"]
    with open(_need(a.out, "--out"), "w", encoding="utf-8", newline="\n") as fh:
        for rec in alerts:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    print(json.dumps({"triage": tm.to_dict(), "verdicts": dict(sorted(Counter(t.verdict.value for t in triaged).items())),
                      "updated": updated, "alerts": len(alerts)}, sort_keys=True))


def report_rows(scores, labels: dict[str, str], ths: Sequence[float]) -> list[list[str]]:
    """Detection table: per-scenario counts and rates, plus FP and detection rows."""
    header = ["scenario", "type", "events", "node_deviance", "state_deviance"]
    header += [f"prob_{t:g}" for t in ths] + [f"rate_{t:g}" for t in ths]
    groups: dict[str, list] = {}
    for s in scores:
        groups.setdefault(labels.get(s.event.event_id, synth.LEGITIMATE), []).append(s)

    def row(name: str, kind: str, ss) -> tuple[list[str], list[int]]:
        node = sum(1 for s in ss if s.structural in (DevianceKind.NODE, DevianceKind.LINK))
        state = sum(1 for s in ss if s.structural is DevianceKind.STATE)
        prob = [sum(1 for s in ss if s.structural is None and s.probability < t) for t in ths]
        flagged = [node + state + p for p in prob]
        rates = [f / len(ss) if ss else 0.0 for f in flagged]
        return [name, kind, str(len(ss)), str(node), str(state)] + [str(p) for p in prob] + \
            [f"{r:.4f}" for r in rates], flagged

    rows = [header]
    normal, _ = row("Normal Events", "-", groups.get(synth.LEGITIMATE, []))
    rows.append(normal)
    total, flagged_total = 0, [0] * len(ths)
    for label in sorted(k for k in groups if k != synth.LEGITIMATE):
        effect, _, variant = label.partition(".")
        r, flagged = row(effect, variant or "-", groups[label])
        rows.append(r)
        total += len(groups[label])
        flagged_total = [x + y for x, y in zip(flagged_total, flagged)]
    rates = [f"{f / total:.4f}" if total else "0.0000" for f in flagged_total]
    rows.append(["Attack Detection rate", "-", str(total), "", ""] + [""] * len(ths) + rates)
    return rows


def cmd_report(a) -> None:
    _, _, scores = _scores(a)
    labels = synth.read_labels(_need(a.labels, "--labels")) if a.labels else {}
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(report_rows(scores, labels, a.thresholds))
    if a.out:
        Path(a.out).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(buf.getvalue())


# -- parser -----------------------------------------------------------------


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isanalytics", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file of flag defaults; explicit flags win")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, *names):
        if "events" in names:
            sp.add_argument("--events", help="events JSON-lines file")
        if "model" in names:
            sp.add_argument("--model", help="model JSON file")
        if "window" in names:
            sp.add_argument("--window", type=duration, default=DEFAULT_WIDTH_MS)
            sp.add_argument("--stride", type=duration, default=DEFAULT_STRIDE_MS)
            sp.add_argument("--jobs", type=int, default=default_jobs())
            sp.add_argument("--thresholds", type=thresholds, default=SWEEP_THRESHOLDS)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")
        # also accepted after the subcommand; read before parsing
        sp.add_argument("--config", help=argparse.SUPPRESS)

    g = sub.add_parser("generate", help="synthetic train/test corpora")
    common(g)
    g.add_argument("--users", type=int, default=120)
    g.add_argument("--days", type=float, default=23.0)
    g.add_argument("--test-days", type=float, default=1.0)
    g.add_argument("--scenarios", choices=("builtin", "r2l", "none"), default="builtin")
    g.add_argument("--replications", type=int, default=10)
    g.add_argument("--raw", action="store_true", help="also write raw records and their mapping table")
    g.set_defaults(func=cmd_generate, out="corpus")

    i = sub.add_parser("ingest", help="normalize raw records")
    common(i)
    i.add_argument("--raw")
    i.add_argument("--mapping")
    i.add_argument("--vocab")
    i.add_argument("--rejects")
    i.set_defaults(func=cmd_ingest)

    f = sub.add_parser("filter", help="keep checkpoint events")
    common(f, "events")
    f.add_argument("--checkpoints")
    f.add_argument("--context")
    f.set_defaults(func=cmd_filter)

    t = sub.add_parser("train", help="learn a behaviour model")
    common(t, "events", "model")
    t.add_argument("--alpha", type=float, default=1.0)
    t.add_argument("--horizon", type=duration, default=HOUR_MS)
    t.add_argument("--steps", type=int, default=100)
    t.add_argument("--prune", type=int, help="drop states unused for this many experiences")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score a stream and write deviances")
    common(d, "events", "model", "window")
    d.add_argument("--threshold", type=thresholds, default=(0.002,))
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="triage deviances")
    common(e, "events", "model")
    e.add_argument("--alerts")
    e.add_argument("--context")
    e.add_argument("--scoring")
    e.add_argument("--labeled", help="CSV of labelled evaluation points")
    e.add_argument("--labels", help="event label file used to label the alerts themselves")
    e.add_argument("--model-out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="detection table as CSV")
    common(r, "events", "model", "window")
    r.add_argument("--labels")
    r.set_defaults(func=cmd_report)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((x for x in argv if x in subs.choices), None)
    if cmd is None:
        return
    sp = subs.choices[cmd]
    dests = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in dests or dest in ("help", "func", "config"):
            raise UsageError(f"unknown config key {key!r} for {cmd}")
        action = dests[dest]
        if action.type is not None and value is not None:
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config {key}: {exc}") from exc
        defaults[dest] = value
    sp.set_defaults(**defaults)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
