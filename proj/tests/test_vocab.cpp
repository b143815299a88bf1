#include <catch2/catch_amalgamated.hpp>

#include "rio/vocab.hpp"

using namespace rio;

TEST_CASE("token id layout is a disjoint cover") {
  Vocab v;
  REQUIRE(v.size() == 47);
  REQUIRE(v.head_size() == 33);
  for (int id = 0; id < v.size(); ++id) {
    int kinds = int(v.is_acoustic(id)) + int(v.is_text(id)) + int(id == v.bos()) +
                int(id == v.sep()) + int(id == v.eos());
    REQUIRE(kinds == 1);
  }
}

TEST_CASE("output head indices round-trip") {
  Vocab v;
  for (int i = 0; i < v.head_size(); ++i) REQUIRE(v.output_index(v.output_token(i)) == i);
  REQUIRE(v.output_index(v.eos()) == v.eos_output());
  REQUIRE_THROWS_AS(v.output_index(v.sep()), RioError);
  REQUIRE_THROWS_AS(v.output_index(v.bos()), RioError);
  REQUIRE_THROWS_AS(v.output_token(v.head_size()), RioError);
}

TEST_CASE("prompt serialization round-trips") {
  Vocab v;
  Context ctx;
  ctx.prompt_text = {0, 3, 1};
  ctx.prompt_speech = {7, 22, 12};
  ctx.target_text = {5, 0};
  auto seq = build_prompt(v, ctx);
  REQUIRE(seq.size() == static_cast<size_t>(v.prompt_len()));
  REQUIRE(seq.front() == v.bos());
  REQUIRE(seq.back() == v.sep());
  Context back = parse_prompt(v, seq);
  REQUIRE(back.prompt_text == ctx.prompt_text);
  REQUIRE(back.prompt_speech == ctx.prompt_speech);
  REQUIRE(back.target_text == ctx.target_text);
}

TEST_CASE("prompt fields occupy fixed slots regardless of content length") {
  Vocab v{8, 4, 5};  // slot width 5 -> frame of 1 + 3*6 = 19 tokens
  REQUIRE(v.prompt_len() == 19);
  Context a{{0, 1}, {3}, {2}};
  Context b{{0, 1, 2, 3, 0}, {3, 4, 5, 6, 7}, {1, 0, 1, 0, 1}};
  auto sa = build_prompt(v, a);
  auto sb = build_prompt(v, b);
  REQUIRE(sa.size() == sb.size());
  // content is left-aligned: the same symbol lands at the same position
  REQUIRE(sa[1] == sb[1]);
  // each field keeps at least one SEP even at full content
  REQUIRE(sb[6] == v.sep());
  REQUIRE(sb[12] == v.sep());
  REQUIRE(sb.back() == v.sep());
  Context back = parse_prompt(v, sb);
  REQUIRE(back.prompt_speech == b.prompt_speech);
  // a sixth token no longer fits the slot
  Context over{{0, 1, 2, 3, 0, 1}, {3}, {2}};
  REQUIRE_THROWS_AS(build_prompt(v, over), RioError);
}

TEST_CASE("training sequence appends target and EOS after the prompt") {
  Vocab v;
  Context ctx;
  ctx.prompt_text = {1};
  ctx.prompt_speech = {9};
  ctx.target_text = {2, 4};
  std::vector<int> target = {14, 3, 14};
  auto prompt = build_prompt(v, ctx);
  auto seq = build_training_sequence(v, ctx, target);
  REQUIRE(seq.size() == prompt.size() + target.size() + 1);
  REQUIRE(std::equal(prompt.begin(), prompt.end(), seq.begin()));
  for (size_t i = 0; i < target.size(); ++i) REQUIRE(seq[prompt.size() + i] == target[i]);
  REQUIRE(seq.back() == v.eos());
}

TEST_CASE("malformed prompts are rejected") {
  Vocab v;
  REQUIRE_THROWS_AS(parse_prompt(v, {}), RioError);
  REQUIRE_THROWS_AS(parse_prompt(v, {v.sep(), v.sep(), v.sep()}), RioError);
  // missing final SEP
  REQUIRE_THROWS_AS(parse_prompt(v, {v.bos(), v.text_id(0), v.sep(), 3, v.sep(), v.text_id(1)}),
                    RioError);
  // trailing garbage after the frame
  auto seq = build_prompt(v, Context{{0}, {1}, {2}});
  seq.push_back(5);
  REQUIRE_THROWS_AS(parse_prompt(v, seq), RioError);
  // content resuming after a field's SEP padding
  auto holed = build_prompt(v, Context{{0}, {1}, {2}});
  holed[3] = 4;  // inside the first field's padding
  REQUIRE_THROWS_AS(parse_prompt(v, holed), RioError);
  // empty text fields
  REQUIRE_THROWS_AS(build_prompt(v, Context{{}, {1}, {2}}), RioError);
  REQUIRE_THROWS_AS(build_prompt(v, Context{{0}, {1}, {}}), RioError);
}
