import json

import pytest

from promptclimb.t2i import (
    CriticParseError,
    GENERATION_WRAPPER,
    GenerationRefused,
    ImageRef,
    INVERT_CRITIC_TEMPLATE,
    INVERT_FIRST_ROUND,
    MockCritic,
    MockGenerator,
    T2I_CRITIC_TEMPLATE,
    T2I_FIRST_ROUND,
    customize,
    generate_image,
    invert_prompt,
    parse_critic_reply,
    run_query_file,
    t2i_optimize,
    validate_generative_ledger,
    words_of,
)

from conftest import FIXTURES, read_golden

QUERY = "there is less milk than orange juice"


class TestTemplatesMatchGoldens:
    def test_generation_wrapper(self):
        assert GENERATION_WRAPPER.format(prompt="a red fox in snow") == read_golden(
            "generation_wrapper.txt"
        )

    def test_t2i_critic(self):
        rendered = T2I_CRITIC_TEMPLATE.format(
            image="images/gen-002.png",
            query=QUERY,
            prompt="A kitchen scene with milk and orange juice on a table",
        )
        assert rendered == read_golden("t2i_critic.txt")

    def test_invert_first_round(self):
        rendered = INVERT_FIRST_ROUND.format(image="images/query-owl.png")
        assert rendered == read_golden("invert_first.txt")

    def test_invert_critic(self):
        rendered = INVERT_CRITIC_TEMPLATE.format(
            query_image="images/query-owl.png",
            generated_image="images/gen-003.png",
            prompt="a cartoon owl with round eyes",
        )
        assert rendered == read_golden("invert_critic.txt")


class TestGenerateImage:
    def test_wraps_prompt_and_binds_unwrapped(self):
        requests = []

        class SpyGenerator:
            def render(self, request, prompt, stream=None):
                requests.append(request)
                return ImageRef(id="g1", source="generated", payload=words_of(prompt))

        ref = generate_image(SpyGenerator(), "a red fox in snow")
        assert requests == ["Create this exact image without any changes to the prompt: a red fox in snow."]
        assert ref.prompt == "a red fox in snow"

    def test_mock_descriptor_is_prompt_word_set(self):
        ref = generate_image(MockGenerator(), "red fox in snow")
        assert ref.descriptor == frozenset({"red", "fox", "in", "snow"})

    def test_same_prompt_same_descriptor(self):
        gen = MockGenerator()
        a = generate_image(gen, "red fox in snow")
        b = generate_image(gen, "red fox in snow")
        assert a.descriptor == b.descriptor

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            generate_image(MockGenerator(), "")


class TestParseCriticReply:
    def test_plain_object(self):
        reply = parse_critic_reply('{"feedback":"milk too full","new_prompt":"less milk"}')
        assert reply.feedback == "milk too full"
        assert reply.new_prompt == "less milk"

    def test_missing_key_rejected(self):
        with pytest.raises(CriticParseError):
            parse_critic_reply('{"feedback":"x"}')

    def test_fixture_corpus(self):
        """Ten recorded reply shapes: fenced, prose-wrapped, noisy, broken."""
        lines = (FIXTURES / "critic_replies.jsonl").read_text().splitlines()
        assert len(lines) == 10
        for line in lines:
            case = json.loads(line)
            if case["ok"]:
                reply = parse_critic_reply(case["raw"])
                assert reply.feedback == case["feedback"]
                assert reply.new_prompt == case["new_prompt"]
            else:
                with pytest.raises(CriticParseError):
                    parse_critic_reply(case["raw"])


class TestT2IOptimize:
    def test_call_counts_and_gapless_rounds(self):
        class CountingGenerator(MockGenerator):
            def __init__(self):
                super().__init__()
                self.calls = 0

            def render(self, request, prompt, stream=None):
                self.calls += 1
                return super().render(request, prompt, stream)

        class CountingCritic(MockCritic):
            def __init__(self):
                super().__init__(seed=0)
                self.calls = 0

            def review(self, message, images, stream=None):
                self.calls += 1
                return super().review(message, images, stream)

        generator, critic = CountingGenerator(), CountingCritic()
        result = t2i_optimize(generator, critic, QUERY, rounds=3)
        assert generator.calls == 4  # initial expansion + one per critique round
        assert critic.calls == 3
        assert [e.round for e in result.entries] == [0, 1, 2, 3]
        validate_generative_ledger(result.entries)

    def test_round_zero_uses_first_round_request(self):
        result = t2i_optimize(MockGenerator(), MockCritic(seed=0), QUERY, rounds=1)
        assert result.entries[0].prompt == T2I_FIRST_ROUND.format(query=QUERY)

    def test_query_overlap_is_non_decreasing(self):
        result = t2i_optimize(MockGenerator(), MockCritic(seed=1), QUERY, rounds=3)
        query_words = words_of(QUERY)
        overlaps = [
            len(query_words & (e.image.descriptor or frozenset())) for e in result.entries
        ]
        assert overlaps == sorted(overlaps)

    def test_single_round(self):
        result = t2i_optimize(MockGenerator(), MockCritic(seed=0), QUERY, rounds=1)
        assert len(result.entries) == 2  # round 0 plus one critique cycle

    def test_generated_images_record_their_prompt(self):
        result = t2i_optimize(MockGenerator(), MockCritic(seed=0), QUERY, rounds=2)
        for entry in result.entries:
            assert entry.image.prompt == entry.prompt

    def test_unparseable_critic_keeps_prompt(self):
        class BrokenCritic:
            def review(self, message, images, stream=None):
                return "no structure here"

        result = t2i_optimize(MockGenerator(), BrokenCritic(), QUERY, rounds=2)
        prompts = [e.prompt for e in result.entries]
        assert prompts[0] == prompts[1] == prompts[2]
        assert all(e.extra.get("critic_reply_unparseable") for e in result.entries[1:])

    def test_refusal_keeps_previous_image(self):
        class PrudishGenerator(MockGenerator):
            def render(self, request, prompt, stream=None):
                if stream and stream.endswith("/gen/1"):
                    raise GenerationRefused("policy")
                return super().render(request, prompt, stream)

        result = t2i_optimize(PrudishGenerator(), MockCritic(seed=0), QUERY, rounds=2)
        assert result.entries[1].extra.get("generation_refused")
        assert result.entries[1].image.id == result.entries[0].image.id


class TestInvertPrompt:
    def query_image(self):
        return ImageRef(id="query-owl", source="user_query",
                        payload=words_of("a green cartoon owl with round eyes on a branch"))

    def test_ledger_round_count_equals_rounds(self):
        result = invert_prompt(MockGenerator(), MockCritic(seed=0), self.query_image(), rounds=3)
        assert [e.round for e in result.entries] == [0, 1, 2]

    def test_descriptor_distance_is_non_increasing(self):
        query = self.query_image()
        result = invert_prompt(MockGenerator(), MockCritic(seed=2), query, rounds=4)
        target = query.descriptor
        distances = [
            len(target - (e.image.descriptor or frozenset())) for e in result.entries
        ]
        assert distances == sorted(distances, reverse=True)
        assert distances[-1] < distances[0] or distances[0] == 0

    def test_final_prompt_is_reusable_verbatim(self):
        result = invert_prompt(MockGenerator(), MockCritic(seed=0), self.query_image(), rounds=2)
        assert result.final_prompt == result.entries[-1].prompt


class TestCustomize:
    def test_single_space_join(self):
        assert customize("a shiba inu on grass", "Make the dog swim in water.") == (
            "a shiba inu on grass Make the dog swim in water."
        )

    def test_rejects_empty_parts(self):
        with pytest.raises(ValueError):
            customize("p", "")
        with pytest.raises(ValueError):
            customize("  ", "edit")

    def test_customized_prompt_renders_through_the_wrapper(self):
        prompt = customize("a shiba inu on grass", "Make the dog swim in water.")
        ref = generate_image(MockGenerator(), prompt)
        assert ref.prompt == prompt


class TestQueryFileRunner:
    def test_per_query_directories(self, tmp_path):
        owl = tmp_path / "owl.txt"
        owl.write_text("green cartoon owl on a branch\n")
        queries = tmp_path / "queries.jsonl"
        queries.write_text(
            json.dumps({"type": "t2i", "text": QUERY}) + "\n"
            + json.dumps({"type": "invert", "image_path": str(owl)}) + "\n"
        )
        out_dirs = run_query_file(queries, tmp_path / "out", MockGenerator(), MockCritic(seed=0),
                                  rounds=2)
        assert [d.name for d in out_dirs] == ["q000_t2i", "q001_invert"]
        for out_dir in out_dirs:
            assert (out_dir / "ledger.jsonl").exists()
            assert (out_dir / "final_prompt.txt").read_text().strip()
            assert (out_dir / "final_image.txt").exists()
        rows = [json.loads(l) for l in (out_dirs[0] / "ledger.jsonl").read_text().splitlines()]
        assert [r["round"] for r in rows] == [0, 1, 2]

    def test_kind_filter(self, tmp_path):
        queries = tmp_path / "queries.jsonl"
        queries.write_text(json.dumps({"type": "t2i", "text": QUERY}) + "\n")
        out = run_query_file(queries, tmp_path / "out", MockGenerator(), MockCritic(seed=0),
                             rounds=1, kinds=("invert",))
        assert out == []
