from __future__ import annotations

import json

import pytest

from stagepipe.corpus import StageCategory, StageLabel
from stagepipe.llm import LlmClient, TransportError
from stagepipe.memory import RuleMemory
from stagepipe.pipelines import (
    CHUNK_SEPARATOR,
    PipelineError,
    PredictionRecord,
    elicit_kewrag_rules,
    induce_ltm,
    record_from_json,
    record_to_json,
    run_kewltm_inference,
    run_kewrag_inference,
    run_rag,
    run_zscot,
)
from stagepipe.prompts import default_templates
from stagepipe.retrieval import Chunk, RetrievalQuery, build_index
from .conftest import chat_entry, make_report, rules_body, scripted_client, staging_body

T = StageCategory.T
REGISTRY = default_templates(T)


def reports(n: int):
    return [make_report(f"r{i:02d}", t="T1") for i in range(n)]


def embed_script(texts: list[str], extra: dict | None = None) -> dict:
    mapping = {t: [1.0, float(i + 1)] for i, t in enumerate(texts)}
    mapping.update(extra or {})
    return {"key": None, "kind": "embed", "body": {"map": mapping}}


def guideline_index(client: LlmClient, texts: list[str]):
    chunks = [Chunk(i, t, (0, len(t))) for i, t in enumerate(texts)]
    return build_index(chunks, client.embed, "dochash")


class TestRunZscot:
    def test_single_report(self):
        client, _ = scripted_client([chat_entry(staging_body("T1"))])
        (record,) = run_zscot(reports(1), T, client, REGISTRY)
        assert record.predicted == StageLabel.parse("T1")
        assert record.method == "zscot"
        assert record.memory_version is None
        assert record.retrieved_chunk_ids is None

    def test_unparseable_after_retries_continues_batch(self):
        bad = staging_body("T7")
        entries = [chat_entry(bad)] * 4 + [chat_entry(staging_body("T2"))]
        client, _ = scripted_client(entries)
        records = run_zscot(reports(2), T, client, REGISTRY)
        assert records[0].is_unparseable
        assert records[0].reasoning == ""
        assert records[1].predicted == StageLabel.parse("T2")

    def test_one_record_per_report(self):
        n = 20
        client, backend = scripted_client([chat_entry(staging_body("T1"))] * n)
        records = run_zscot(reports(n), T, client, REGISTRY)
        assert len(records) == n
        assert backend.chat_calls == n
        assert [r.report_id for r in records] == sorted(r.report_id for r in records)

    def test_empty_reports_rejected(self):
        client, _ = scripted_client([])
        with pytest.raises(PipelineError):
            run_zscot([], T, client, REGISTRY)


class TestRunRag:
    def _client(self, n_chat: int, chunk_texts: list[str]):
        entries = [embed_script(chunk_texts, extra={"q": [1.0, 0.0]})]
        entries += [chat_entry(staging_body("T1"))] * n_chat
        return scripted_client(entries)

    def test_same_chunk_ids_on_every_record(self):
        texts = [f"chunk number {i}" for i in range(10)]
        client, backend = self._client(4, texts)
        index = guideline_index(client, texts)
        records = run_rag(
            reports(4), T, client, index, RetrievalQuery("q", k=5), REGISTRY
        )
        assert len(records) == 4
        id_sets = {r.retrieved_chunk_ids for r in records}
        assert len(id_sets) == 1
        assert len(records[0].retrieved_chunk_ids) == 5

    def test_single_retrieval_pass(self):
        texts = ["chunk a", "chunk b"]
        client, backend = self._client(3, texts)
        index = guideline_index(client, texts)
        embeds_before = backend.embed_calls
        run_rag(reports(3), T, client, index, RetrievalQuery("q", k=2), REGISTRY)
        assert backend.embed_calls - embeds_before == 1

    def test_k_clamped(self, caplog):
        texts = ["chunk a", "chunk b"]
        client, _ = self._client(1, texts)
        index = guideline_index(client, texts)
        records = run_rag(
            reports(1), T, client, index, RetrievalQuery("q", k=99), REGISTRY
        )
        assert len(records[0].retrieved_chunk_ids) == 2

    def test_chunks_bound_in_rank_order(self):
        texts = ["first chunk", "second chunk"]
        client, backend = self._client(1, texts)
        index = guideline_index(client, texts)

        captured = []
        original = backend.complete

        def spy(request):
            captured.append(request.user)
            return original(request)

        backend.complete = spy
        run_rag(reports(1), T, client, index, RetrievalQuery("q", k=2), REGISTRY)
        assert CHUNK_SEPARATOR in captured[0]

    def test_report_text_mode_retrieves_per_report(self):
        texts = ["chunk a", "chunk b"]
        mapping_extra = {f"pathology report body for r{i:02d}": [0.5, 0.5] for i in range(3)}
        entries = [embed_script(texts, extra=mapping_extra)]
        entries += [chat_entry(staging_body("T1"))] * 3
        client, backend = scripted_client(entries)
        index = guideline_index(client, texts)
        before = backend.embed_calls
        run_rag(
            reports(3), T, client, index, RetrievalQuery("q", k=2), REGISTRY,
            rag_query_mode="report-text",
        )
        assert backend.embed_calls - before == 3

    def test_empty_index_rejected_before_llm(self):
        client, backend = scripted_client([])
        with pytest.raises(PipelineError):
            run_rag(reports(1), T, client, _EmptyIndex(), RetrievalQuery("q", k=1), REGISTRY)
        assert backend.chat_calls == 0


class _EmptyIndex:
    def __len__(self):
        return 0


class TestInduceLtm:
    def test_identical_rules_hand_trace(self):
        # three steps proposing the same rules at threshold 80:
        # step 1 unconditional, steps 2-3 accepted at similarity 100
        rules = ["size under 2 cm means stage one", "size above 5 cm means stage three"]
        entries = [chat_entry(rules_body("T1", rules))] * 3
        client, _ = scripted_client(entries)
        result = induce_ltm(reports(3), T, client, REGISTRY, threshold=80.0)
        assert result.n_consumed == 3
        assert result.final_memory.rules == tuple(rules)
        assert result.final_memory.version == 3
        assert [t.accepted for t in result.traces] == [True, True, True]
        assert result.traces[1].similarity == 100.0
        assert result.traces[2].similarity == 100.0

    def test_divergent_step_rejected(self):
        entries = [
            chat_entry(rules_body("T1", ["aaaaa", "bbbbb"])),
            chat_entry(rules_body("T2", ["zzzzz", "qqqqq"])),  # wholly different
        ]
        client, _ = scripted_client(entries)
        result = induce_ltm(reports(2), T, client, REGISTRY, threshold=80.0)
        assert [t.accepted for t in result.traces] == [True, False]
        assert result.final_memory.rules == ("aaaaa", "bbbbb")
        assert result.final_memory.version == 1

    def test_threshold_zero_accepts_growing_lists(self):
        growing = [["rule 1"], ["rule 1", "rule 2"], ["rule 1", "rule 2", "rule 3"]]
        entries = [chat_entry(rules_body("T1", rs)) for rs in growing]
        client, _ = scripted_client(entries)
        result = induce_ltm(reports(3), T, client, REGISTRY, threshold=0.0)
        assert all(t.accepted for t in result.traces)
        lens = [t.current_len for t in result.traces]
        assert lens == sorted(lens)  # appends only -> nondecreasing
        assert result.final_memory.version == 3

    def test_consumes_exactly_n_train_in_order(self):
        entries = [chat_entry(rules_body("T1", [f"rule {i}"])) for i in range(5)]
        client, backend = scripted_client(entries)
        result = induce_ltm(reports(5), T, client, REGISTRY, threshold=0.0, n_train=3)
        assert result.n_consumed == 3
        assert backend.chat_calls == 3
        assert [p.report_id for p in result.auxiliary_predictions] == ["r00", "r01", "r02"]

    def test_unparseable_step_skipped(self):
        bad = {"reasoning": "no rules field", "stage": "T1"}
        entries = (
            [chat_entry(rules_body("T1", ["aaaaa"]))]
            + [chat_entry(bad)] * 4  # step 2: exhausts retry budget
            + [chat_entry(rules_body("T1", ["aaaaa"]))]
        )
        client, _ = scripted_client(entries)
        result = induce_ltm(reports(3), T, client, REGISTRY, threshold=80.0)
        assert [t.accepted for t in result.traces] == [True, False, True]
        skipped = result.traces[1]
        assert skipped.similarity == 0.0
        assert skipped.proposed_len == 0
        assert skipped.current_len == len("aaaaa")
        assert result.auxiliary_predictions[1].is_unparseable
        assert result.final_memory.version == 2

    def test_elicit_reused_until_first_acceptance(self):
        bad = {"reasoning": "x", "stage": "T1"}  # missing rules
        entries = [chat_entry(bad)] * 4 + [
            chat_entry(rules_body("T1", ["finally a rule"]))
        ]
        client, backend = scripted_client(entries)
        captured = []
        original = backend.complete

        def spy(request):
            captured.append(request.template_id)
            return original(request)

        backend.complete = spy
        result = induce_ltm(reports(2), T, client, REGISTRY, threshold=80.0)
        # step 1 failed entirely, so step 2 still runs the elicit template
        assert set(captured) == {"ltm_elicit"}
        assert result.final_memory.rules == ("finally a rule",)

    def test_transport_failure_aborts(self):
        class Dying:
            deterministic = True
            model_id = "dying"

            def complete(self, request):
                raise TransportError("gone", retryable=False)

        client = LlmClient(chat_backend=Dying())
        with pytest.raises(TransportError):
            induce_ltm(reports(2), T, client, REGISTRY, threshold=80.0)

    def test_n_train_out_of_range(self):
        client, _ = scripted_client([])
        with pytest.raises(PipelineError):
            induce_ltm(reports(2), T, client, REGISTRY, threshold=80.0, n_train=3)

    def test_replay_reproduces_traces_and_memory(self):
        entries = [
            chat_entry(rules_body("T1", ["aaaaa", "bbbbb"])),
            chat_entry(rules_body("T1", ["aaaaa", "bbbbx"])),
            chat_entry(rules_body("T2", ["zzzzz"])),
        ]
        results = []
        for _ in range(2):
            client, _ = scripted_client(entries)
            results.append(induce_ltm(reports(3), T, client, REGISTRY, threshold=80.0))
        assert results[0].traces == results[1].traces
        assert results[0].final_memory == results[1].final_memory


class TestKewltmInference:
    def test_frozen_memory_version_on_all_records(self):
        memory = RuleMemory(T, ("rule one", "rule two"), version=7)
        client, _ = scripted_client([chat_entry(staging_body("T1"))] * 4)
        records = run_kewltm_inference(reports(4), T, memory, client, REGISTRY)
        assert len(records) == 4
        assert {r.memory_version for r in records} == {7}
        assert {r.method for r in records} == {"kewltm"}
        assert all(r.retrieved_chunk_ids is None for r in records)

    def test_empty_memory_rejected(self):
        client, _ = scripted_client([])
        with pytest.raises(PipelineError):
            run_kewltm_inference(
                reports(1), T, RuleMemory(T, (), version=0), client, REGISTRY
            )


class TestElicitKewrag:
    def _setup(self, texts: list[str], elicit_rules: list[str], n_chat: int = 0):
        entries = [embed_script(texts, extra={"q": [1.0, 0.0]})]
        entries.append(chat_entry({"rules": elicit_rules}))
        entries += [chat_entry(staging_body("T1"))] * n_chat
        client, backend = scripted_client(entries)
        index = guideline_index(client, texts)
        return client, backend, index

    def test_six_rules_version_one(self):
        rules = [f"synthesized rule {i}" for i in range(6)]
        client, _, index = self._setup([f"chunk {i}" for i in range(8)], rules)
        elicited = elicit_kewrag_rules(index, RetrievalQuery("q", k=5), client, REGISTRY)
        assert len(elicited.memory.rules) == 6
        assert elicited.memory.version == 1
        assert len(elicited.chunk_ids) == 5

    def test_exactly_k_chunks_bound(self):
        texts = [f"guideline paragraph {i}" for i in range(8)]
        client, backend, index = self._setup(texts, ["r"])
        captured = []
        original = backend.complete

        def spy(request):
            captured.append(request.user)
            return original(request)

        backend.complete = spy
        elicit_kewrag_rules(index, RetrievalQuery("q", k=5), client, REGISTRY)
        bound = [t for t in texts if t in captured[0]]
        assert len(bound) == 5

    def test_unparseable_elicitation_terminal(self):
        texts = ["chunk a"]
        entries = [embed_script(texts, extra={"q": [1.0, 0.0]})]
        entries += [chat_entry({"no": "rules"})] * 4
        client, _ = scripted_client(entries)
        index = guideline_index(client, texts)
        with pytest.raises(PipelineError, match="synthesis"):
            elicit_kewrag_rules(index, RetrievalQuery("q", k=1), client, REGISTRY)


class TestKewragInference:
    def test_zero_retrieval_calls_during_inference(self):
        rules = RuleMemory(T, ("rule one",), version=1)
        n = 8
        client, backend = scripted_client([chat_entry(staging_body("T1"))] * n)
        before = backend.embed_calls
        records = run_kewrag_inference(
            reports(n), T, rules, client, REGISTRY, chunk_ids=(0, 1)
        )
        assert backend.embed_calls == before == 0
        assert backend.chat_calls == n
        assert len(records) == n
        assert {r.retrieved_chunk_ids for r in records} == {(0, 1)}
        assert {r.memory_version for r in records} == {1}

    def test_reuses_inference_machinery_with_any_rules(self):
        ltm_style = RuleMemory(T, ("borrowed rule",), version=4)
        client, _ = scripted_client([chat_entry(staging_body("T2"))])
        (record,) = run_kewrag_inference(
            reports(1), T, ltm_style, client, REGISTRY, chunk_ids=()
        )
        assert record.method == "kewrag"
        assert record.predicted == StageLabel.parse("T2")

    def test_empty_rules_rejected(self):
        client, _ = scripted_client([])
        with pytest.raises(PipelineError):
            run_kewrag_inference(
                reports(1), T, RuleMemory(T, (), version=0), client, REGISTRY
            )


class TestPredictionRecord:
    def test_method_field_coupling(self):
        with pytest.raises(PipelineError):
            PredictionRecord("r1", T, None, "", "zscot", memory_version=1)
        with pytest.raises(PipelineError):
            PredictionRecord("r1", T, None, "", "kewltm")
        with pytest.raises(PipelineError):
            PredictionRecord("r1", T, None, "", "rag")
        with pytest.raises(PipelineError):
            PredictionRecord("r1", T, None, "", "zscot", retrieved_chunk_ids=(1,))

    def test_category_consistency(self):
        with pytest.raises(PipelineError):
            PredictionRecord("r1", T, StageLabel.parse("N1"), "", "zscot")

    def test_json_round_trip(self):
        rec = PredictionRecord(
            "r1", T, StageLabel.parse("T3"), "why", "kewrag",
            memory_version=1, retrieved_chunk_ids=(0, 2), timing_ms=5,
        )
        assert record_from_json(json.loads(json.dumps(record_to_json(rec)))) == rec

    def test_unparseable_round_trip(self):
        rec = PredictionRecord("r1", T, None, "", "zscot")
        obj = record_to_json(rec)
        assert obj["predicted"] == "unparseable"
        assert record_from_json(obj) == rec

    def test_extra_keys_tolerated(self):
        rec = PredictionRecord("r1", T, StageLabel.parse("T1"), "", "zscot")
        obj = record_to_json(rec, split=3)
        assert obj["split"] == 3
        assert record_from_json(obj) == rec


def test_scripted_pipelines_are_byte_deterministic():
    entries = (
        [chat_entry(rules_body("T1", ["aaaaa", "bbbbb"]))] * 2
        + [chat_entry(staging_body("T1"))] * 3
    )
    dumps = []
    for _ in range(2):
        client, _ = scripted_client(entries)
        result = induce_ltm(reports(2), T, client, REGISTRY, threshold=80.0)
        records = run_kewltm_inference(
            reports(3), T, result.final_memory, client, REGISTRY
        )
        dumps.append(json.dumps([record_to_json(r) for r in records]))
    assert dumps[0] == dumps[1]
