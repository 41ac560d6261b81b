from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from jsonschema import Draft202012Validator

import gnt_judge.client as client_mod
from gnt_judge.client import (
    BackendConfig,
    BackendKind,
    JudgeItem,
    OutcomeStatus,
    ResponseCache,
    cache_key,
    complete,
    heuristic_judge,
    judge,
)
from gnt_judge.corpus import load_corpus, select_exemplars
from gnt_judge.errors import BackendFailure, ConfigError
from gnt_judge.labels import RefChoice, Strategy
from gnt_judge.prompts import ASSETS_DIR, build_prompt, render_exemplar
from gnt_judge.verdict import output_schema, parse_verdict

HEURISTIC = BackendConfig(kind=BackendKind.HEURISTIC, model_id="lexicon-heuristic", max_retries=0)


def http_config(**overrides) -> BackendConfig:
    params = dict(
        kind=BackendKind.HTTP_CHAT,
        model_id="judge-model",
        endpoint="https://example.invalid/v1/chat/completions",
        credential_env="JUDGE_TOKEN",
        max_retries=2,
        timeout=5.0,
    )
    params.update(overrides)
    return BackendConfig(**params)


def chat_body(content: str) -> str:
    return json.dumps({"choices": [{"message": {"content": content}}]})


@pytest.fixture(scope="module")
def exemplars():
    corpus = load_corpus(ASSETS_DIR / "corpora" / "exemplars-en-it.tsv", "en-it")
    items = select_exemplars(corpus)
    return {strategy: [render_exemplar(strategy, item) for item in items] for strategy in Strategy}


class TestHeuristicJudge:
    @pytest.mark.parametrize(
        "sentence,label",
        [
            ("Trabajar como profesor me hace contento", "GENDERED"),
            ("Trabajar como profesora me hace contenta", "GENDERED"),
            ("Trabajar como docente me hace feliz", "NEUTRAL"),
        ],
    )
    def test_spanish_profession_sentences(self, sentence, label):
        payload = heuristic_judge(Strategy.MONO_L, "es", None, sentence)
        assert json.loads(payload) == {"label": label}

    def test_empty_sentence_is_neutral(self):
        assert json.loads(heuristic_judge(Strategy.MONO_L, "it", None, "")) == {"label": "NEUTRAL"}

    def test_cue_gender_must_match_finding_gender(self):
        payload = heuristic_judge(
            Strategy.CROSS_PL, "es", "She thanked everyone.", "Los ciudadanos están contentos."
        )
        verdict = parse_verdict(Strategy.CROSS_PL, payload)
        assert verdict.stated_label.wire == "WRONGLY GENDERED"
        assert all(p.assessment.value == "wrong" for p in verdict.phrases)

    def test_matching_cue_makes_finding_correct(self):
        payload = heuristic_judge(
            Strategy.CROSS_L, "es", "He thanked everyone.", "El profesor está contento."
        )
        assert json.loads(payload) == {"label": "CORRECTLY GENDERED"}

    def test_unknown_language_fails(self):
        with pytest.raises(ConfigError, match="lexicon"):
            heuristic_judge(Strategy.MONO_L, "fr", None, "une phrase")

    def test_deterministic(self):
        first = heuristic_judge(Strategy.MONO_PL, "it", None, "Gli oratori erano molto contenti.")
        second = heuristic_judge(Strategy.MONO_PL, "it", None, "Gli oratori erano molto contenti.")
        assert first == second

    @settings(max_examples=150, deadline=None)
    @given(
        strategy=st.sampled_from(list(Strategy)),
        language=st.sampled_from(["it", "es", "de"]),
        target=st.text(max_size=80),
        source=st.text(max_size=80),
    )
    def test_output_always_satisfies_schema(self, strategy, language, target, source):
        payload = heuristic_judge(
            strategy, language, source if strategy.takes_source else None, target
        )
        verdict = parse_verdict(strategy, payload)
        Draft202012Validator(output_schema(strategy).definition).validate(json.loads(payload))
        assert verdict.strategy is strategy


class TestBackendConfig:
    def test_http_requires_endpoint_and_credential(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind=BackendKind.HTTP_CHAT, model_id="m", credential_env="T").validate()
        with pytest.raises(ConfigError):
            BackendConfig(kind=BackendKind.HTTP_CHAT, model_id="m", endpoint="https://x").validate()

    def test_heuristic_rejects_endpoint(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind=BackendKind.HEURISTIC, model_id="m", endpoint="https://x").validate()

    def test_negative_retries_rejected(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind=BackendKind.HEURISTIC, model_id="m", max_retries=-1).validate()


class TestComplete:
    def test_http_wire_shape(self, exemplars, monkeypatch):
        monkeypatch.setenv("JUDGE_TOKEN", "sekrit")
        bundle = build_prompt(Strategy.MONO_L, "it", exemplars[Strategy.MONO_L], None, "Frase.")
        schema = output_schema(Strategy.MONO_L)
        seen = {}

        def transport(url, headers, payload, timeout):
            seen.update(url=url, headers=headers, payload=payload, timeout=timeout)
            return 200, chat_body('{"label":"NEUTRAL"}')

        raw = complete(http_config(), bundle, schema, transport=transport)
        assert raw == '{"label":"NEUTRAL"}'
        assert seen["url"] == "https://example.invalid/v1/chat/completions"
        assert seen["headers"]["Authorization"] == "Bearer sekrit"
        assert seen["payload"]["model"] == "judge-model"
        assert seen["payload"]["temperature"] == 0.0
        assert seen["payload"]["messages"][0]["role"] == "system"
        assert seen["payload"]["messages"][-1] == {"role": "user", "content": "Sentence: Frase."}
        assert len(seen["payload"]["messages"]) == 18
        response_format = seen["payload"]["response_format"]
        assert response_format["type"] == "json_schema"
        assert response_format["json_schema"]["schema"] == schema.definition
        assert seen["timeout"] == 5.0

    def test_unset_credential_fails_before_any_call(self, exemplars, monkeypatch):
        monkeypatch.delenv("JUDGE_TOKEN", raising=False)
        bundle = build_prompt(Strategy.MONO_L, "it", exemplars[Strategy.MONO_L], None, "Frase.")
        calls = []

        def transport(*args):
            calls.append(args)
            return 200, chat_body("{}")

        with pytest.raises(ConfigError, match="JUDGE_TOKEN"):
            complete(http_config(), bundle, output_schema(Strategy.MONO_L), transport=transport)
        assert calls == []

    @pytest.mark.parametrize("status,retryable", [(429, True), (503, True), (400, False), (401, False)])
    def test_status_classification(self, exemplars, monkeypatch, status, retryable):
        monkeypatch.setenv("JUDGE_TOKEN", "t")
        bundle = build_prompt(Strategy.MONO_L, "it", exemplars[Strategy.MONO_L], None, "Frase.")
        with pytest.raises(BackendFailure) as excinfo:
            complete(
                http_config(),
                bundle,
                output_schema(Strategy.MONO_L),
                transport=lambda *a: (status, "busy"),
            )
        assert excinfo.value.retryable is retryable
        assert excinfo.value.status == status

    def test_heuristic_backend_round_trips_the_query(self, exemplars):
        bundle = build_prompt(
            Strategy.CROSS_L,
            "it",
            exemplars[Strategy.CROSS_L],
            "The teachers explained the new rules.",
            "I professori hanno spiegato le nuove regole.",
        )
        raw = complete(HEURISTIC, bundle, output_schema(Strategy.CROSS_L))
        assert json.loads(raw) == {"label": "WRONGLY GENDERED"}


class TestJudge:
    def test_happy_path_single_attempt(self, exemplars, tmp_path):
        cache = ResponseCache(tmp_path / "cache.jsonl")
        outcome = judge(
            HEURISTIC,
            Strategy.MONO_L,
            "it",
            JudgeItem(id="nn-08", target="I cittadini meritano una risposta chiara.", ref=RefChoice.REF_G),
            exemplars[Strategy.MONO_L],
            cache,
        )
        assert outcome.status is OutcomeStatus.OK
        assert outcome.attempts == 1
        assert outcome.verdict.stated_label.wire == "GENDERED"
        assert len(cache) == 1

    def test_cache_hit_skips_backend(self, exemplars, tmp_path, monkeypatch):
        cache = ResponseCache(tmp_path / "cache.jsonl")
        item = JudgeItem(id="x", target="I cittadini meritano una risposta chiara.", ref=RefChoice.REF_G)
        first = judge(HEURISTIC, Strategy.MONO_L, "it", item, exemplars[Strategy.MONO_L], cache)

        calls = []
        original = client_mod.heuristic_judge
        monkeypatch.setattr(
            client_mod, "heuristic_judge", lambda *a, **k: calls.append(a) or original(*a, **k)
        )
        second = judge(HEURISTIC, Strategy.MONO_L, "it", item, exemplars[Strategy.MONO_L], cache)
        assert calls == []
        assert second == first
        assert second.raw_last == first.raw_last

    def test_no_cache_reads_still_writes(self, exemplars, tmp_path, monkeypatch):
        path = tmp_path / "cache.jsonl"
        cache = ResponseCache(path)
        item = JudgeItem(id="x", target="Frase neutra.", ref=RefChoice.REF_N)
        judge(HEURISTIC, Strategy.MONO_L, "it", item, exemplars[Strategy.MONO_L], cache)

        calls = []
        original = client_mod.heuristic_judge
        monkeypatch.setattr(
            client_mod, "heuristic_judge", lambda *a, **k: calls.append(a) or original(*a, **k)
        )
        judge(
            HEURISTIC, Strategy.MONO_L, "it", item, exemplars[Strategy.MONO_L], cache,
            use_cache_reads=False,
        )
        assert len(calls) == 1
        assert len(path.read_text().splitlines()) == 2

    def test_schema_violations_exhaust_retries(self, exemplars, monkeypatch):
        monkeypatch.setenv("JUDGE_TOKEN", "t")
        attempts = []

        def transport(url, headers, payload, timeout):
            attempts.append(1)
            return 200, chat_body("not json")

        outcome = judge(
            http_config(max_retries=2),
            Strategy.MONO_L,
            "it",
            JudgeItem(id="x", target="Frase.", ref=RefChoice.REF_G),
            exemplars[Strategy.MONO_L],
            cache=None,
            transport=transport,
            sleep=lambda s: None,
        )
        assert outcome.status is OutcomeStatus.INVALID_OUTPUT
        assert outcome.attempts == 3
        assert len(attempts) == 3
        assert outcome.verdict is None

    def test_retryable_failures_back_off_then_give_up(self, exemplars, monkeypatch):
        monkeypatch.setenv("JUDGE_TOKEN", "t")
        sleeps = []
        calls = []

        def transport(url, headers, payload, timeout):
            calls.append(1)
            return 429, "slow down"

        outcome = judge(
            http_config(max_retries=2),
            Strategy.MONO_L,
            "it",
            JudgeItem(id="x", target="Frase.", ref=RefChoice.REF_G),
            exemplars[Strategy.MONO_L],
            cache=None,
            transport=transport,
            sleep=sleeps.append,
        )
        assert outcome.status is OutcomeStatus.BACKEND_FAILURE
        assert outcome.attempts == 3
        assert len(calls) == 3
        assert len(sleeps) == 2
        assert sleeps[1] > sleeps[0] * 1.3  # exponential growth beats the jitter range

    def test_non_retryable_failure_stops_immediately(self, exemplars, monkeypatch):
        monkeypatch.setenv("JUDGE_TOKEN", "t")
        calls = []

        def transport(url, headers, payload, timeout):
            calls.append(1)
            return 401, "nope"

        outcome = judge(
            http_config(max_retries=3),
            Strategy.MONO_L,
            "it",
            JudgeItem(id="x", target="Frase.", ref=RefChoice.REF_G),
            exemplars[Strategy.MONO_L],
            cache=None,
            transport=transport,
            sleep=lambda s: None,
        )
        assert outcome.status is OutcomeStatus.BACKEND_FAILURE
        assert outcome.attempts == 1
        assert len(calls) == 1

    def test_recovers_after_one_invalid_response(self, exemplars, monkeypatch):
        monkeypatch.setenv("JUDGE_TOKEN", "t")
        responses = [chat_body('{"label":"MAYBE"}'), chat_body('{"label":"NEUTRAL"}')]

        def transport(url, headers, payload, timeout):
            return 200, responses.pop(0)

        outcome = judge(
            http_config(max_retries=2),
            Strategy.MONO_L,
            "it",
            JudgeItem(id="x", target="Frase.", ref=RefChoice.REF_G),
            exemplars[Strategy.MONO_L],
            cache=None,
            transport=transport,
            sleep=lambda s: None,
        )
        assert outcome.status is OutcomeStatus.OK
        assert outcome.attempts == 2
        assert outcome.verdict.stated_label.wire == "NEUTRAL"


class TestCacheKey:
    def test_prompt_bytes_change_key(self):
        base = dict(
            model_id="m", strategy=Strategy.MONO_L, language="it", entry_id="e", ref=RefChoice.REF_G
        )
        assert cache_key(**base, prompt_bytes=b"abc") != cache_key(**base, prompt_bytes=b"abd")
        assert cache_key(**base, prompt_bytes=b"abc") == cache_key(**base, prompt_bytes=b"abc")

    def test_identity_fields_change_key(self):
        key = cache_key("m", Strategy.MONO_L, "it", "e", RefChoice.REF_G, b"p")
        assert key != cache_key("m2", Strategy.MONO_L, "it", "e", RefChoice.REF_G, b"p")
        assert key != cache_key("m", Strategy.MONO_PL, "it", "e", RefChoice.REF_G, b"p")
        assert key != cache_key("m", Strategy.MONO_L, "it", "e", RefChoice.REF_N, b"p")
        assert key != cache_key("m", Strategy.MONO_L, "it", "e", None, b"p")

    def test_cache_survives_reload_and_torn_line(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = ResponseCache(path)
        cache.put("k1", {"status": "OK", "attempts": 1, "raw_last": "{}"})
        with open(path, "a", encoding="utf-8") as handle:
            handle.write('{"key": "k2", "status"')  # torn write
        reloaded = ResponseCache(path)
        assert reloaded.get("k1")["status"] == "OK"
        assert reloaded.get("k2") is None
