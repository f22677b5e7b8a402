"""Acceptance gate: ten end-to-end criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines are printed even when
output is captured) or directly as a script.
"""

from __future__ import annotations

import random
import time
from collections import Counter

import numpy as np

from conftest import SMALL_CATS, VOCAB, ev
from isanalytics import synth
from isanalytics.activity_graph import HOUR_MS, build_activity_graph, merged_graph
from isanalytics.behavior_model import plateau_step, prune_stale, query, row_probability, train
from isanalytics.cli import main as cli_main
from isanalytics.detection import SWEEP_THRESHOLDS, deviances_from_scores, scan, sweep_counts
from isanalytics.evaluation import (
    EvaluationPoint,
    TriagedDeviance,
    Verdict,
    apply_verdicts,
)
from isanalytics.detection import Deviance, DevianceKind
from isanalytics.events import MappingEntry, MappingTable, corpus_stats, ingest
from isanalytics.ontology import (
    GAINS_BY_MODE,
    Gain,
    Intention,
    MovementMode,
    format_category,
    make_category,
    parse_category,
    validate_gain_mode,
)
from isanalytics.selection import default_checkpoints, reduction_report, select_events
from isanalytics.svm import fit_linear_svm
from oracles import ABSENT, JointOracle, brute_max_margin, oracle_counts, oracle_preds, smoothed

RESULTS: dict[int, tuple[bool, str]] = {}


def report(capsys, n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    assert ok, line


def random_category(rnd: random.Random):
    intention = rnd.choice(list(Intention))
    mode = rnd.choice([m for m in MovementMode if VOCAB.natures_for(m)])
    nature = rnd.choice(VOCAB.natures_for(mode))
    t1 = rnd.choice(VOCAB.target_tokens("primary"))
    t2 = None if intention is Intention.RECON or rnd.random() < 0.3 else rnd.choice(VOCAB.target_tokens("secondary"))
    gain = rnd.choice(sorted(GAINS_BY_MODE[mode], key=lambda g: g.value))
    return make_category(intention, mode, nature, t1, t2, gain)


def dotted(c) -> str:
    m, t = c.movement, c.target
    return f"{c.intention.value}_{m.mode.value}.{m.nature}.{t.primary}.{t.secondary or 'N'}.{c.gain.value}"


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_codec(capsys):
    t0 = time.perf_counter()
    rnd = random.Random(1)
    n, bad = 10_000, 0
    for _ in range(n):
        c = random_category(rnd)
        text = format_category(c)
        if parse_category(text) != c or parse_category(dotted(c)) != c:
            bad += 1
    action = {"Success", "Failed", "Denied", "Error"}
    info = {"Valid", "Invalid", "Notify", "Expired", "Exceeded", "Low", "Normal"}
    expected = {"Activity": action, "Config": action, "Information": info}
    pairs = wrong = 0
    for mode in MovementMode:
        for gain in Gain:
            pairs += 1
            if validate_gain_mode(mode, gain) != (gain.value in expected.get(mode.value, {"Detected"})):
                wrong += 1
    dt = time.perf_counter() - t0
    ok = bad == 0 and pairs == 84 and wrong == 0 and dt < 5
    report(capsys, 1, ok, f"{n} round trips, {bad} failures; {pairs} mode/gain pairs, {wrong} wrong; {dt:.2f}s")


# -- 2 ----------------------------------------------------------------------


def test_criterion_2_reduction_rate(capsys):
    t0 = time.perf_counter()
    rnd = random.Random(2)
    cats = []
    while len(cats) < 86:
        c = random_category(rnd)
        if c not in cats:
            cats.append(c)
    attrs = (("id", 3), ("user", 4))
    table = MappingTable({("an", f"sig{k:04d}"): MappingEntry(cats[k % 86], attrs) for k in range(1000)})
    lines = [f"an\tsig{k:04d}\t{1000 + k}\te{k}\tu{k % 7}" for k in range(1000)]
    events, rejects = ingest(lines, table)
    stats = corpus_stats(events, 1000)
    dt = time.perf_counter() - t0
    ok = not rejects and stats.category_count == 86 and abs(stats.reduction_rate - 0.914) <= 0.001 and dt < 5
    report(capsys, 2, ok, f"1000 signatures -> {stats.category_count} categories, "
                          f"reduction_rate={stats.reduction_rate:.4f}; {dt:.2f}s")


# -- 3 ----------------------------------------------------------------------


def random_trace(rnd: random.Random, n: int, ncat: int):
    cats = rnd.sample(SMALL_CATS, ncat)
    users = [f"u{k}" for k in range(rnd.randint(1, 4))]
    hosts = [f"h{k}" for k in range(rnd.randint(1, 4))]
    t, out = 0, []
    for k in range(n):
        t += rnd.choice([0, 500, 1_000, 5_000, 60_000, 600_000, 3 * HOUR_MS // 2])
        out.append(ev(f"e{k:05d}", t, rnd.choice(cats), user=rnd.choice(users + [None]),
                      src=rnd.choice(hosts), dst=rnd.choice(hosts + ["s0", None]),
                      detect=t + rnd.choice([0, 0, 250]) if rnd.random() < 0.2 else None))
    return out


def test_criterion_3_counting_oracle(capsys):
    t0 = time.perf_counter()
    rnd = random.Random(3)
    traces = entries = mismatches = 0
    for k in range(100):
        n = 5000 if k % 25 == 0 else rnd.randint(5, 600)
        events = random_trace(rnd, n, rnd.randint(1, 10))
        alpha = rnd.choice([0.0, 0.5, 1.0])
        horizon = rnd.choice([60_000, HOUR_MS, 2 * HOUR_MS])
        model, _ = train(events, alpha=alpha, horizon_ms=horizon)
        parents = {c: set(nd.parents) for c, nd in model.nodes.items()}
        rows, temporal = oracle_counts(events, horizon, parents)
        traces += 1
        for cat, node in model.nodes.items():
            expect = rows.get(cat, {})
            if set(node.rows) != set(expect):
                mismatches += 1
                continue
            for config, row in node.rows.items():
                total = sum(expect[config].values())
                for s in node.states:
                    entries += 1
                    want = smoothed(expect[config][s], total, alpha, len(node.states))
                    if row_probability(model, cat, config, s) != want or row.get(s, 0) != expect[config][s]:
                        mismatches += 1
        for arc, bins in model.temporal.items():
            entries += len(bins)
            if list(bins) != temporal.get(arc):
                mismatches += 1
        if set(model.temporal) != set(temporal):
            mismatches += 1
    dt = time.perf_counter() - t0
    ok = traces >= 100 and mismatches == 0 and dt < 30
    report(capsys, 3, ok, f"{traces} traces, {entries} CPT/temporal entries, {mismatches} mismatches; {dt:.2f}s")


# -- 4 ----------------------------------------------------------------------


def descendants(parents: dict, node) -> set:
    children: dict = {}
    for c, ps in parents.items():
        for p in ps:
            children.setdefault(p, set()).add(c)
    out, stack = set(), [node]
    while stack:
        for ch in children.get(stack.pop(), ()):
            if ch not in out:
                out.add(ch)
                stack.append(ch)
    return out


def test_criterion_4_inference_oracle(capsys):
    rnd = random.Random(4)
    models = queries = 0
    worst = 0.0
    for _ in range(50):
        ncat = rnd.randint(2, 10)
        users = {"u1": ("h1", "s1"), "u2": ("h2", "s2")}
        t, events = 0, []
        for k in range(rnd.randint(5, 150)):
            t += rnd.choice([1_000, 30_000, 600_000, 2 * HOUR_MS])
            u = rnd.choice(sorted(users))
            events.append(ev(f"e{k:04d}", t, rnd.choice(SMALL_CATS[:ncat]), user=u,
                             src=users[u][0], dst=users[u][1]))
        alpha = rnd.choice([0.0, 1.0])
        model, _ = train(events, alpha=alpha)
        parents = {c: set(nd.parents) for c, nd in model.nodes.items()}
        oracle = JointOracle(events, HOUR_MS, parents, alpha)
        models += 1
        evs, preds = oracle_preds(events, HOUR_MS)
        g = build_activity_graph(events)
        for j, e in enumerate(evs):
            got = query(model, e, [g.events[i] for i in g.preds[j]])
            nearest = {}
            for i in preds[j]:
                nearest[evs[i].category] = evs[i].state
            evidence = {p: nearest.get(p, ABSENT) for p in parents[e.category]}
            # extra evidence on non-descendants must not move the answer
            below = descendants(parents, e.category)
            for c, s in nearest.items():
                if c not in below and c != e.category and c not in evidence:
                    evidence[c] = s
            want = oracle.conditional(e.category, e.state, evidence)
            worst = max(worst, abs(got - want))
            queries += 1
    ok = models >= 50 and worst <= 1e-9
    report(capsys, 4, ok, f"{models} models, {queries} queries, max |delta|={worst:.2e}")


# -- 5 ----------------------------------------------------------------------


def test_criterion_5_planted_transitions(capsys):
    train_events, test_events, truth = synth.planted_corpus()
    model, _ = train(train_events, alpha=0.0)
    scores = scan(model, test_events, jobs=1)
    exact = True
    for th in SWEEP_THRESHOLDS:
        flagged = {d.event.event_id for d in deviances_from_scores(scores, th)}
        expect = {eid for eid, p in truth.items() if p < th}
        exact &= flagged == expect
    counts = sweep_counts(scores, SWEEP_THRESHOLDS)["probabilistic"]
    ordered = [counts[t] for t in sorted(SWEEP_THRESHOLDS)]
    monotone = ordered == sorted(ordered)
    ok = exact and monotone
    pretty = ", ".join(f"{t:g}:{counts[t]}" for t in SWEEP_THRESHOLDS)
    report(capsys, 5, ok, f"flagged sets {'equal' if exact else 'differ'}; sweep {pretty}; "
                          f"{'monotone' if monotone else 'not monotone'}")


# -- 6 ----------------------------------------------------------------------


def test_criterion_6_scenario_detection(capsys):
    t0 = time.perf_counter()
    world, (tr, _), (te, tel) = synth.generate_split(synth.GeneratorConfig(seed=0), test_days=1.0)
    te, tel = synth.inject(te, tel, synth.R2L_SCENARIOS, world, seed=0)
    model, _ = train(tr, alpha=1.0)
    scores = scan(model, te)
    flagged = {d.event.event_id for d in deviances_from_scores(scores, 0.002)}
    legit = [e.event_id for e in te if tel[e.event_id] == synth.LEGITIMATE]
    fp = sum(i in flagged for i in legit) / len(legit)
    rates = {}
    for spec in synth.R2L_SCENARIOS:
        ids = [i for i, lab in tel.items() if lab == spec.label]
        rates[spec.label] = sum(i in flagged for i in ids) / len(ids)
    dt = time.perf_counter() - t0
    ok = len(tr) >= 100_000 and min(rates.values()) >= 0.80 and fp <= 0.15 and dt < 60
    pretty = ", ".join(f"{k}={v:.2f}" for k, v in rates.items())
    report(capsys, 6, ok, f"{len(tr)} training events; detection {pretty}; FP={fp:.4f} at 0.002; {dt:.1f}s")


# -- 7 ----------------------------------------------------------------------


def test_criterion_7_checkpoint_filter(capsys):
    table = default_checkpoints()
    rnd = random.Random(7)
    props_ok = True
    for b in range(200):
        batch = [ev(f"b{b}-{k}", k, random_category(rnd), user="u", src="h") for k in range(rnd.randint(0, 50))]
        once = select_events(batch, table)
        props_ok &= select_events(once, table) == once
        props_ok &= {e.event_id for e in once} <= {e.event_id for e in batch}
    cfg = synth.GeneratorConfig(seed=0, days=7.0)
    world, (tr, trl), _ = synth.generate_split(cfg, test_days=0.0)
    before, after = merged_graph(tr), merged_graph(select_events(tr, table, world.context))
    red = reduction_report(before, after)["node_reduction"]
    stream, labels = synth.inject(tr, trl, synth.BUILTIN_SCENARIOS, world, seed=7)
    kept = {e.event_id for e in select_events(stream, table, world.context)}
    attack = [i for i, lab in labels.items() if lab != synth.LEGITIMATE]
    survived = all(i in kept for i in attack)
    frac = synth.non_checkpoint_fraction(cfg, table)
    ok = props_ok and red >= 0.20 and survived
    report(capsys, 7, ok, f"idempotent/subset {'ok' if props_ok else 'BROKEN'} on 200 batches; "
                          f"non-checkpoint mix {frac:.2f}; node_reduction={red:.3f}; "
                          f"{len(attack)} scenario events {'all kept' if survived else 'partly dropped'}")


# -- 8 ----------------------------------------------------------------------


def separable_set(rng, n):
    w = rng.normal(size=3)
    w /= np.linalg.norm(w)
    X = rng.uniform(-1, 1, size=(n, 3))
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    proj = X @ w
    X = X + np.outer(y * rng.uniform(0.01, 0.3) - proj + y * np.abs(proj), w)
    return X, y


def test_criterion_8_triage(capsys):
    rng = np.random.default_rng(8)
    acc_ok = True
    for n in (2, 10, 50, 200, 1000):
        for _ in range(3):
            X, y = separable_set(rng, n)
            acc_ok &= bool(np.all(fit_linear_svm(X, y).predict(X) == y))
    worst_gap = 0.0
    for _ in range(20):
        X, y = separable_set(rng, int(rng.integers(2, 21)))
        svm = fit_linear_svm(X, y)
        norm, _, _ = brute_max_margin(X, y)
        worst_gap = max(worst_gap, 1.0 / norm - svm.geometric_margin(X, y))
    a = ev("t0", 0, SMALL_CATS[0], user="u", src="ws")
    b = ev("t1", 10_000, SMALL_CATS[1], user="u", src="ws", dst="srv")
    rnd = random.Random(8)
    conserved = True
    for k in range(1000):
        model, _ = train([a, b], alpha=1.0)
        batch = []
        for j in range(rnd.randint(0, 6)):
            e = ev(f"n{k}-{j}", 10**8 + j * 10**6, SMALL_CATS[1], user="u", src="ws", dst=f"d{j}")
            d = Deviance(DevianceKind.STATE, e, ())
            batch.append(TriagedDeviance(d, EvaluationPoint(0.5, 0.5, 0.5, d), 0.0, rnd.choice(list(Verdict))))
        res = apply_verdicts(model, batch)
        conserved &= res.updated + len(res.alerts) == len(batch)
        conserved &= res.updated == sum(t.verdict is Verdict.NORMAL_EVOLUTION for t in batch)
    ok = acc_ok and worst_gap <= 1e-3 and conserved
    report(capsys, 8, ok, f"separable accuracy {'100%' if acc_ok else '<100%'} up to 1000 points; "
                          f"max margin gap {worst_gap:.2e}; conservation {'ok' if conserved else 'BROKEN'} "
                          f"on 1000 batches")


# -- 9 ----------------------------------------------------------------------


def pipeline(root, jobs):
    root.mkdir(parents=True)
    c = str(root)
    steps = [
        ["generate", "--users", "20", "--days", "4", "--out", c, "--seed", "9"],
        ["filter", "--events", f"{c}/train.jsonl", "--context", f"{c}/context.json", "--out", f"{c}/kept.jsonl"],
        ["train", "--events", f"{c}/kept.jsonl", "--model", f"{c}/model.json", "--out", f"{c}/steps.csv"],
        ["detect", "--events", f"{c}/test.jsonl", "--model", f"{c}/model.json", "--jobs", str(jobs),
         "--out", f"{c}/alerts.jsonl"],
        ["evaluate", "--alerts", f"{c}/alerts.jsonl", "--events", f"{c}/test.jsonl", "--context",
         f"{c}/context.json", "--labeled", f"{c}/labeled_points.csv", "--model", f"{c}/model.json",
         "--model-out", f"{c}/model2.json", "--out", f"{c}/triaged.jsonl"],
        ["report", "--events", f"{c}/test.jsonl", "--model", f"{c}/model.json", "--labels",
         f"{c}/test_labels.tsv", "--jobs", str(jobs), "--out", f"{c}/report.csv"],
    ]
    for argv in steps:
        if cli_main(argv) != 0:
            raise AssertionError(f"step failed: {argv[0]}")
    names = ("model.json", "alerts.jsonl", "model2.json", "triaged.jsonl", "report.csv", "steps.csv")
    return {n: (root / n).read_bytes() for n in names}


def test_criterion_9_determinism(tmp_path, capsys):
    runs = {(jobs, rep): pipeline(tmp_path / f"j{jobs}-{rep}", jobs) for jobs in (1, 8) for rep in (0, 1)}
    first = runs[(1, 0)]
    differing = sorted({n for r in runs.values() for n in r if r[n] != first[n]})
    ok = not differing and len(first["alerts.jsonl"]) > 0
    alerts = first["alerts.jsonl"].count(b"\n")
    report(capsys, 9, ok, f"4 runs (--jobs 1 and 8, twice each), {alerts} alerts; "
                          + ("all outputs byte-identical" if ok else f"differing: {differing}"))


# -- 10 ---------------------------------------------------------------------


def test_criterion_10_plateau_and_prune(capsys):
    # periodic profiles only; sporadic noise keeps adding rare category pairs
    events, _ = synth.generate(synth.GeneratorConfig(seed=10, noise_rate=0.0))
    _, rep = train(events, alpha=1.0, steps=100)
    st = rep.stationary_step
    plateau_ok = all(st[k] is not None and st[k] < 80 for k in ("nodes", "links"))
    consistent = st["links"] == plateau_step([s.links for s in rep.steps])
    shop, _ = synth.generate(synth.ecommerce_config(seed=10))
    model, _ = train(shop, alpha=1.0)
    states = Counter({c: len(n.states) for c, n in model.nodes.items()})
    dropped = prune_stale(model, 1000)
    ok = plateau_ok and consistent and dropped > 0
    report(capsys, 10, ok, f"{len(rep.steps)} steps, stationary nodes@{st['nodes']} links@{st['links']}; "
                           f"e-commerce prune dropped {dropped} of {sum(states.values())} states")


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for fn in [test_criterion_1_codec, test_criterion_2_reduction_rate,
                            test_criterion_3_counting_oracle, test_criterion_4_inference_oracle,
                            test_criterion_5_planted_transitions, test_criterion_6_scenario_detection,
                            test_criterion_7_checkpoint_filter, test_criterion_8_triage]:
        try:
            fn(None)
        except AssertionError:
            pass
    with tempfile.TemporaryDirectory() as d:
        try:
            test_criterion_9_determinism(Path(d), None)
        except AssertionError:
            pass
    try:
        test_criterion_10_plateau_and_prune(None)
    except AssertionError:
        pass
