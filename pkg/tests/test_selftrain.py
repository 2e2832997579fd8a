from dataclasses import replace

import pytest

from toxispan.ablation import VARIANTS, AblationRow, ablate, format_table, variant_cleaning
from toxispan.corpus import Document, as_unlabeled, generate_synthetic
from toxispan.model import Labeler, LabelerConfig, LabelerParams, TrainSettings, evaluate_dev, prepare_all
from toxispan.selftrain import SslError, SslPlan, partition_pool, pseudo_label, run_ssl
from toxispan.textproc import CleaningConfig


def _pool(n):
    return [Document(i, f"doc {i}", None) for i in range(n)]


class TestPartition:
    def test_remainder_goes_last(self):
        assert [len(b) for b in partition_pool(_pool(10), 4)] == [2, 2, 2, 4]

    def test_even(self):
        assert [len(b) for b in partition_pool(_pool(40000), 4)] == [10000] * 4

    def test_disjoint_and_exhaustive(self):
        batches = partition_pool(_pool(103), 7, seed=5)
        ids = [d.id for b in batches for d in b]
        assert sorted(ids) == list(range(103))

    def test_seeded(self):
        assert partition_pool(_pool(30), 3, seed=1) == partition_pool(_pool(30), 3, seed=1)
        assert partition_pool(_pool(30), 3, seed=1) != partition_pool(_pool(30), 3, seed=2)

    def test_zero_iterations(self):
        assert partition_pool(_pool(5), 0) == []

    def test_too_small(self):
        with pytest.raises(SslError):
            partition_pool(_pool(3), 4)


def test_pseudo_label_zero_params_marks_all_active_tokens():
    cfg = LabelerConfig(embed_dim=2, hidden_dim=2, hash_buckets=8)
    lab = Labeler(cfg, LabelerParams.zeros(cfg), CleaningConfig())
    (seq,) = pseudo_label([Document(0, "you are 42 idiots.", None)], lab)
    assert seq.labels == tuple(int(t.active) for t in seq.tokens)
    assert 0 in seq.labels


@pytest.fixture(scope="module")
def ssl_data():
    docs = generate_synthetic(260, seed=21)
    pool = as_unlabeled(generate_synthetic(90, seed=22, empty_frac=0.0, toxic_slot_prob=1.0))
    settings = TrainSettings(LabelerConfig(hash_buckets=2048, embed_dim=8, hidden_dim=16), epochs=3)
    return docs[:200], docs[200:], pool, settings


class TestRunSsl:
    def test_log_structure(self, ssl_data):
        train, dev, pool, settings = ssl_data
        _, log = run_ssl(SslPlan(train, pool, iterations=3, seed=1), settings, dev)
        assert [r.iteration for r in log.rows] == [1, 2, 3]
        assert [r.batch_docs for r in log.rows] == [30, 30, 30]
        seen = [i for r in log.rows for i in r.doc_ids]
        assert sorted(seen) == sorted(d.id for d in pool)
        assert log.baseline_dev_span_f1 is not None
        tsv = log.to_tsv().splitlines()
        assert len(tsv) == 1 + 1 + 3 and tsv[1].startswith("0\t0\t0\t")

    def test_zero_iterations_is_baseline(self, ssl_data):
        train, dev, pool, settings = ssl_data
        lab, log = run_ssl(SslPlan(train, pool, iterations=0), settings, dev)
        direct, _ = settings.fit(train, dev)
        assert log.rows == [] and lab.params.equal(direct.params)

    def test_rejects_unlabeled_base(self, ssl_data):
        _, dev, pool, settings = ssl_data
        with pytest.raises(SslError):
            run_ssl(SslPlan(pool, pool, iterations=1), settings, dev)


class TestAblation:
    def test_variant_flags(self):
        assert variant_cleaning("TD") == CleaningConfig()
        assert variant_cleaning("WNUM").remove_digits is False
        assert variant_cleaning("WFS").remove_fullstops is False
        assert variant_cleaning("WCON").expand_contractions is False
        with pytest.raises(ValueError):
            variant_cleaning("XX")

    def test_rows_and_td_consistency(self, ssl_data):
        train, dev, _, settings = ssl_data
        rows = ablate(train, dev, ["WFS", "TD"], settings)
        assert [r.variant for r in rows] == ["WFS", "TD"]
        lab, _ = replace(settings, cleaning=CleaningConfig()).fit(train, dev)
        (_, _, tok), span = evaluate_dev(lab, prepare_all(dev, CleaningConfig()), dev)
        assert rows[1] == AblationRow("TD", span, tok)
        table = format_table(rows).splitlines()
        assert len(table) == 3 and table[1].split()[0] == "WFS"

    def test_all_variants_known(self):
        assert VARIANTS == ("TD", "WNUM", "WFS", "WCON")
