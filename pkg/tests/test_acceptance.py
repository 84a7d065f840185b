"""Acceptance suite: one test per criterion, each printing a pass/fail line
in the terminal summary (see conftest).

Everything runs offline on reconstructed fixtures and replay transports.
"""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path

import pytest

from conftest import (
    AGREEMENT,
    CONFUSION_PCT,
    FROZEN_COUNTS,
    OVERALL,
    PER_CLASS,
    SETTINGS,
    SUPPORTS,
    columns_from_counts,
    make_corpus,
)
from oracles import count_search, fleiss_kappa_oracle, gwet_ac1_oracle
from screenkit.agreement import (
    BootstrapSpec,
    RatingMatrix,
    bootstrap_ci,
    cohen_kappa,
    fleiss_kappa,
    gwet_ac1_multi,
    gwet_ac1_pairwise,
    pabak,
    pairwise_consistency,
    with_ci,
)
from screenkit.cli import main
from screenkit.corpus import ScreeningLabel, SplitSpec, partition, write_corpus
from screenkit.inference import InferenceConfig, record_response, run_multi_pass, ReplayTransport
from screenkit.metrics import ConfusionMatrix, aggregate, per_class_metrics, row_normalize
from screenkit.prompts import ChatMarkers, render_chat
from screenkit.inference import parse_decision

PP = 0.01 + 1e-9      # percentage points, two-decimal published values
COEFF = 0.001 + 1e-12  # three-decimal published coefficients

EX, IN = ScreeningLabel.EXCLUDE, ScreeningLabel.INCLUDE


def test_criterion_01_count_reconstruction_is_unique():
    for setting in SETTINGS:
        support_exclude, support_include = SUPPORTS[setting]
        true0, true1 = CONFUSION_PCT[setting]
        candidates = count_search(support_exclude, support_include, true0, true1)
        assert candidates == [FROZEN_COUNTS[setting]], setting


@pytest.mark.parametrize("setting", SETTINGS)
def test_criterion_02_overall_metrics(setting):
    agg = aggregate(ConfusionMatrix(*FROZEN_COUNTS[setting]))
    got = (
        agg.accuracy, agg.balanced_accuracy, agg.macro_f1,
        agg.macro_f2, agg.weighted_f1, agg.weighted_f2,
    )
    for value, expected in zip(got, OVERALL[setting]):
        assert 100.0 * value == pytest.approx(expected, abs=PP)


@pytest.mark.parametrize("setting", SETTINGS)
def test_criterion_03_per_class_metrics(setting):
    cm = ConfusionMatrix(*FROZEN_COUNTS[setting])
    exclude, include = per_class_metrics(cm)
    for cls, label in ((exclude, 0), (include, 1)):
        expect_p, expect_r, expect_f1 = PER_CLASS[setting][label]
        assert 100.0 * cls.precision == pytest.approx(expect_p, abs=PP)
        assert 100.0 * cls.recall == pytest.approx(expect_r, abs=PP)
        assert 100.0 * cls.f1 == pytest.approx(expect_f1, abs=PP)


@pytest.mark.parametrize("setting", SETTINGS)
def test_criterion_04_confusion_percentages(setting):
    pcts = row_normalize(ConfusionMatrix(*FROZEN_COUNTS[setting]))
    (t0p0, t0p1), (t1p0, t1p1) = CONFUSION_PCT[setting]
    assert pcts.true0_pred0 == pytest.approx(t0p0, abs=PP)
    assert pcts.true0_pred1 == pytest.approx(t0p1, abs=PP)
    assert pcts.true1_pred0 == pytest.approx(t1p0, abs=PP)
    assert pcts.true1_pred1 == pytest.approx(t1p1, abs=PP)


@pytest.mark.parametrize("setting", SETTINGS)
def test_criterion_05_agreement_coefficients(setting):
    human, predicted = columns_from_counts(*FROZEN_COUNTS[setting])
    _, expect_kappa, expect_pabak, expect_ac1 = AGREEMENT[setting]
    assert cohen_kappa(human, predicted).estimate == pytest.approx(expect_kappa, abs=COEFF)
    assert pabak(human, predicted).estimate == pytest.approx(expect_pabak, abs=COEFF)
    assert gwet_ac1_pairwise(human, predicted).estimate == pytest.approx(expect_ac1, abs=COEFF)


def test_criterion_06_three_identical_passes_consistency(tmp_path):
    items = [(f"s{i}", f"screening prompt {i}") for i in range(40)]
    responses = ["1" if i % 5 == 0 else "0" for i in range(40)]
    rec = tmp_path / "rec.jsonl"
    config = InferenceConfig(retry_backoff=0.0)
    for temperature in config.temperatures:
        for (sid, prompt), response in zip(items, responses):
            record_response(rec, prompt, temperature, response)
    ledger = run_multi_pass(items, config, ReplayTransport(rec))
    columns = ledger.decision_columns([sid for sid, _ in items])
    results = pairwise_consistency(columns)
    assert len(results) == 3
    for _, _, result in results:
        assert result.estimate == pytest.approx(1.000, abs=1e-12)


def test_criterion_07_multi_rater_oracle_equivalence():
    rng = random.Random(202)
    checked = 0
    reductions = 0
    while checked < 200:
        n = rng.randint(2, 50)
        r = rng.choice([2, 3, 4, 5])
        p = rng.uniform(0.2, 0.8)
        rows = [[int(rng.random() < p) for _ in range(r)] for _ in range(n)]
        flat = [cell for row in rows for cell in row]
        if not 0 < sum(flat) < len(flat):
            continue
        checked += 1
        m = RatingMatrix.from_columns({f"r{j}": [row[j] for row in rows] for j in range(r)})
        assert fleiss_kappa(m).estimate == pytest.approx(fleiss_kappa_oracle(rows), abs=1e-12)
        assert gwet_ac1_multi(m).estimate == pytest.approx(gwet_ac1_oracle(rows), abs=1e-12)
        if r == 2:
            reductions += 1
            pair = gwet_ac1_pairwise([row[0] for row in rows], [row[1] for row in rows])
            multi = gwet_ac1_multi(m)
            assert pair.estimate == multi.estimate  # exact r=2 reduction
            assert pair.p_o == multi.p_o and pair.p_e == multi.p_e
    assert reductions > 10


PARSING_TABLE = [
    # digit route
    ("1", IN, "digit"),
    ("0", EX, "digit"),
    (" 1", IN, "digit"),
    ("Answer: 1", IN, "digit"),
    ("label=0.", EX, "digit"),
    ("\n\n1", IN, "digit"),
    ("Score: 10/10, include", IN, "digit"),   # the '1' in "10" wins
    ("01", EX, "digit"),                      # first digit wins
    ("I'd say 0 but maybe include", EX, "digit"),
    ("T=0.4 then decide", EX, "digit"),
    ("include: 0", EX, "digit"),              # digit precedence over keyword
    ("The 1st option: exclude", IN, "digit"),
    ("90 percent", EX, "digit"),              # first 0-or-1 is the '0' in "90"
    # keyword route
    ("I would exclude this study.", EX, "keyword"),
    ("Include", IN, "keyword"),
    ("INCLUDE", IN, "keyword"),
    ("We should include it", IN, "keyword"),
    ("exclude", EX, "keyword"),
    ("included", IN, "keyword"),
    ("excluded", EX, "keyword"),
    ("Do not include", IN, "keyword"),        # no negation handling
    ("include or exclude", IN, "keyword"),    # earliest keyword wins
    ("exclude, not include", EX, "keyword"),
    ("ExClUdE!", EX, "keyword"),
    # fallback route
    ("", EX, "fallback"),
    ("maybe", EX, "fallback"),
    ("yes", EX, "fallback"),
    ("The answer is no", EX, "fallback"),
    ("2", EX, "fallback"),
    ("inclusion criteria unmet", EX, "fallback"),  # "include" is not a substring
    ("exclusion", EX, "fallback"),
]


def test_criterion_08_parsing_chain_table():
    assert len(PARSING_TABLE) >= 30
    for text, expected_decision, expected_route in PARSING_TABLE:
        decision, route = parse_decision(text)
        assert (decision, route) == (expected_decision, expected_route), repr(text)
    # Fallback honors a configured majority class.
    assert parse_decision("no decision", majority_class=IN) == (IN, "fallback")


def _golden_chain(root: Path) -> dict[str, str]:
    """Run the full pipeline on a 20-item synthetic corpus with replay
    transport and fixed seeds; return sha256 of every artifact."""
    root.mkdir(parents=True, exist_ok=True)
    corpus = make_corpus(n_exclude=14, n_include=6, prefix="g")
    raw = root / "corpus_raw.csv"
    write_corpus(corpus, raw)
    criteria = root / "criteria.txt"
    criteria.write_text("Empirical studies of screening tools.\n", encoding="utf-8")

    normalized = root / "corpus.csv"
    assert main(["ingest", "--corpus", str(raw), "--out", str(normalized)]) == 0

    manifest = root / "manifest.json"
    assert main(
        [
            "split", "--corpus", str(normalized), "--train-size", "12",
            "--seed", "7", "--mode", "stratified", "--out", str(manifest),
        ]
    ) == 0

    train_sft, test_sft = root / "train.jsonl", root / "test.jsonl"
    for split, out in (("train", train_sft), ("test", test_sft)):
        assert main(
            [
                "export-sft", "--corpus", str(normalized), "--manifest", str(manifest),
                "--split", split, "--criteria", str(criteria), "--out", str(out),
            ]
        ) == 0

    training_manifest = root / "training_manifest.json"
    assert main(["manifest", "--out", str(training_manifest)]) == 0

    # Synthesize a replay store for the test split at all three temperatures.
    replay = root / "replay.jsonl"
    markers = ChatMarkers()
    rows = [json.loads(line) for line in test_sft.read_text(encoding="utf-8").splitlines()]
    from screenkit.prompts import parse_chat

    for temperature in (0.1, 0.4, 0.8):
        for i, row in enumerate(rows):
            user_text, _ = parse_chat(row["chat_text"], markers)
            response = "1" if i % 3 == 0 else "0"
            record_response(replay, user_text, temperature, response)

    ledger = root / "ledger.jsonl"
    assert main(
        [
            "infer", "--sft", str(test_sft), "--replay", str(replay),
            "--temperatures", "0.1,0.4,0.8", "--out", str(ledger),
        ]
    ) == 0

    eval_dir = root / "eval"
    assert main(
        [
            "evaluate", "--ledger", str(ledger), "--corpus", str(normalized),
            "--out-dir", str(eval_dir), "--ci", "--bootstrap-replicates", "200",
            "--bootstrap-seed", "11",
        ]
    ) == 0

    agree_dir = root / "agree"
    assert main(
        [
            "agree", "--ledger", str(ledger), "--corpus", str(normalized),
            "--out-dir", str(agree_dir), "--ci", "--bootstrap-replicates", "200",
            "--bootstrap-seed", "11",
        ]
    ) == 0

    rerender_dir = root / "rerender"
    assert main(
        ["report", "--report", str(eval_dir / "report.json"), "--out-dir", str(rerender_dir)]
    ) == 0

    hashes = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            hashes[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def test_criterion_09_pipeline_determinism(tmp_path):
    first = _golden_chain(tmp_path / "run1")
    second = _golden_chain(tmp_path / "run2")
    assert set(first) == set(second)
    different = [name for name in first if first[name] != second[name]]
    assert different == []
    # Sanity: the chain actually produced the full artifact set.
    expected = {
        "corpus.csv", "manifest.json", "train.jsonl", "test.jsonl",
        "training_manifest.json", "ledger.jsonl", "eval/report.json",
        "eval/report.txt", "eval/disagreements.csv", "eval/agreement.png",
        "eval/overall_metrics.png", "agree/agreement.json", "agree/agreement.txt",
        "agree/agreement.png", "rerender/report.txt",
    }
    assert expected <= set(first)


def test_criterion_10_bootstrap_sanity():
    column = [1, 0, 1, 0, 1, 1, 0, 0, 1, 0]
    perfect = RatingMatrix.from_columns({f"r{j}": column for j in range(4)})
    spec = BootstrapSpec(replicates=200, seed=3)
    assert bootstrap_ci(fleiss_kappa, perfect, spec) == (1.0, 1.0)
    assert bootstrap_ci(gwet_ac1_multi, perfect, spec) == (1.0, 1.0)

    rng = random.Random(99)
    a = [rng.randint(0, 1) for _ in range(120)]
    b = [x if rng.random() < 0.85 else 1 - x for x in a]
    m = RatingMatrix.from_columns({"a": a, "b": b})
    first = with_ci(gwet_ac1_multi, m, spec)
    second = with_ci(gwet_ac1_multi, m, spec)
    assert (first.ci_low, first.ci_high) == (second.ci_low, second.ci_high)
    assert -1.0 <= first.ci_low <= first.ci_high <= 1.0
    assert first.ci_low <= first.estimate <= first.ci_high


def test_criterion_11_split_reproduction(corpus371):
    spec = SplitSpec(train_size=315, seed=2024, mode="enriched", enrichment_target=121 / 315)
    result = partition(corpus371, spec)
    assert result.train_counts.total == 315
    assert result.train_counts.n_exclude == 194
    assert result.train_counts.n_include == 121
    assert result.test_counts.total == 56
    assert result.test_counts.n_exclude == 39
    assert result.test_counts.n_include == 17
