#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "rio/world.hpp"

using namespace rio;

namespace {
// oracle tests run on a wide multi-duration world so every supported speaking
// rate is exercised, independent of the compact corpus defaults
const WorldParams& world() {
  static WorldParams w = [] {
    WorldParams p;
    p.acoustic_size = 32;
    p.text_size = 12;
    p.durations = {1, 2, 3};
    p.prompt_speech_len = 12;
    p.train_len_min = 8;
    p.train_len_max = 44;
    p.eval_len_min = 20;
    p.eval_len_max = 64;
    return p;
  }();
  return w;
}
}  // namespace

TEST_CASE("emission map renders duration-blocks of shifted codes") {
  auto w = world();
  auto s = emit(w, {0, 3, 1, 2}, Style{2, 7});
  REQUIRE(s == std::vector<int>{7, 7, 22, 22, 12, 12, 17, 17});
  REQUIRE(emit(w, {0}, Style{1, 31}) == std::vector<int>{31});
  REQUIRE(emit(w, {11}, Style{1, 30}) == std::vector<int>{(5 * 11 + 30) % 32});
}

TEST_CASE("style estimation recovers the generating style of clean renderings") {
  auto w = world();
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    Style style{w.durations[rng.below(w.durations.size())],
                static_cast<int>(rng.below(static_cast<uint64_t>(w.acoustic_size)))};
    int len = rng.range(4, 20);
    auto text = canonical_text(w, rng, len);
    auto speech = emit(w, text, style);
    StyleEstimate est = estimate_style(w, speech);
    CAPTURE(trial, style.duration, style.offset, len);
    REQUIRE(est.style.duration == style.duration);
    REQUIRE(est.style.offset == style.offset);
    REQUIRE(est.votes == static_cast<int>(speech.size()));
    REQUIRE(decode_text(w, speech) == text);
  }
}

TEST_CASE("ground truth scores perfectly under all three judges") {
  auto w = world();
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Style style{w.durations[rng.below(w.durations.size())],
                static_cast<int>(rng.below(static_cast<uint64_t>(w.acoustic_size)))};
    auto text = canonical_text(w, rng, rng.range(3, 16));
    auto speech = emit(w, text, style);
    REQUIRE(quality_score(w, speech, text) == 5.0);
    REQUIRE(wer_score(w, speech, text) == 0.0);
    REQUIRE(sim_score(w, speech, speech) == 1.0);
  }
}

TEST_CASE("quality penalties are nonnegative and sum to the clamped score") {
  auto w = world();
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> speech(rng.below(30));
    for (auto& v : speech) v = static_cast<int>(rng.below(static_cast<uint64_t>(w.acoustic_size)));
    auto text = canonical_text(w, rng, rng.range(1, 12));
    QualityScore q = quality_breakdown(w, speech, text);
    REQUIRE(q.style_penalty >= 0.0);
    REQUIRE(q.length_penalty >= 0.0);
    REQUIRE(q.repetition_penalty >= 0.0);
    REQUIRE(q.invalid_penalty >= 0.0);
    double raw =
        5.0 - q.style_penalty - q.length_penalty - q.repetition_penalty - q.invalid_penalty;
    REQUIRE(q.mos == std::clamp(raw, 1.0, 5.0));
  }
}

TEST_CASE("empty speech saturates quality at the floor") {
  auto w = world();
  REQUIRE(quality_score(w, {}, {0, 4, 2, 8}) == 1.0);
  REQUIRE_THROWS_AS(quality_score(w, {1, 2}, {}), RioError);
}

TEST_CASE("half-shifted second half: pinned quality regression anchor") {
  auto w = world();
  // clean rendering of [0,3,1,2] at duration 2, offset 7, with the second
  // half emitted at offset 8 instead
  std::vector<int> speech = {7, 7, 22, 22, 13, 13, 18, 18};
  // frozen from an independent reference implementation of the scorer
  REQUIRE(quality_score(w, speech, {0, 3, 1, 2}) ==
          Catch::Approx(4.9807389066887877).epsilon(0).margin(1e-9));
}

TEST_CASE("appending random tokens never improves quality") {
  auto w = world();
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    Style style{w.durations[rng.below(w.durations.size())],
                static_cast<int>(rng.below(static_cast<uint64_t>(w.acoustic_size)))};
    auto text = canonical_text(w, rng, rng.range(3, 14));
    auto speech = emit(w, text, style);
    double base = quality_score(w, speech, text);
    int k = rng.range(1, 2 * static_cast<int>(speech.size()));
    for (int i = 0; i < k; ++i)
      speech.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(w.acoustic_size))));
    REQUIRE(quality_score(w, speech, text) <= base);
  }
}

TEST_CASE("word error rate arithmetic") {
  auto w = world();
  std::vector<int> text = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto speech = emit(w, text, Style{1, 0});
  REQUIRE(wer_score(w, speech, text) == 0.0);
  SECTION("empty speech is all deletions") { REQUIRE(wer_score(w, {}, text) == 100.0); }
  SECTION("one substituted block costs one edit") {
    speech[4] = (5 * 11) % 32;  // decodes to symbol 11 instead of 4
    REQUIRE(decode_text(w, speech) == std::vector<int>{0, 1, 2, 3, 11, 5, 6, 7, 8, 9});
    REQUIRE(wer_score(w, speech, text) == 10.0);
  }
  SECTION("zero error iff decode matches") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<int> s(rng.below(24));
      for (auto& v : s) v = static_cast<int>(rng.below(static_cast<uint64_t>(w.acoustic_size)));
      bool zero = wer_score(w, s, text) == 0.0;
      REQUIRE(zero == (decode_text(w, s) == text));
    }
  }
  SECTION("edit distance is symmetric") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<int> a(rng.below(12)), b(rng.below(12));
      for (auto& v : a) v = rng.range(0, 5);
      for (auto& v : b) v = rng.range(0, 5);
      REQUIRE(levenshtein(a, b) == levenshtein(b, a));
    }
  }
}

TEST_CASE("voice match extremes and pinned overlap anchor") {
  auto w = world();
  Rng rng(11);
  auto text = canonical_text(w, rng, 8);
  SECTION("identical sequences match fully") {
    auto s = emit(w, text, Style{1, 3});
    REQUIRE(sim_score(w, s, s) == 1.0);
  }
  SECTION("same offset, different speaking rate still matches") {
    REQUIRE(sim_score(w, emit(w, text, Style{1, 9}), emit(w, text, Style{3, 9})) == 1.0);
  }
  SECTION("maximally distant offsets do not match") {
    REQUIRE(sim_score(w, emit(w, text, Style{1, 3}), emit(w, text, Style{1, 19})) == 0.0);
  }
  SECTION("half the positions off by one code: overlap is exactly one half") {
    // blocks (7,8),(22,23),(12,13),(17,18): majority decodes cleanly at
    // duration 2 offset 7, the second position of each block implies offset 8
    std::vector<int> jittered = {7, 8, 22, 23, 12, 13, 17, 18};
    std::vector<int> reference = {7, 7, 22, 22, 12, 12, 17, 17};
    REQUIRE(sim_score(w, jittered, reference) == 0.5);
  }
  SECTION("empty inputs are rejected") {
    auto s = emit(w, text, Style{1, 3});
    REQUIRE_THROWS_AS(sim_score(w, {}, s), RioError);
    REQUIRE_THROWS_AS(sim_score(w, s, {}), RioError);
  }
}

TEST_CASE("canonical texts contain the anchor symbol and never stutter") {
  auto w = world();
  Rng rng(31337);
  for (int trial = 0; trial < 500; ++trial) {
    auto text = canonical_text(w, rng, rng.range(1, 30));
    REQUIRE(std::find(text.begin(), text.end(), 0) != text.end());
    for (size_t i = 1; i < text.size(); ++i) REQUIRE(text[i] != text[i - 1]);
    for (int t : text) REQUIRE((t >= 0 && t < w.text_size));
  }
}

TEST_CASE("enrollment texts cover the alphabet without stuttering") {
  auto w = world();
  Rng rng(4242);
  for (int trial = 0; trial < 200; ++trial) {
    int len = rng.range(1, 2 * w.text_size);
    auto text = enrollment_text(w, rng, len);
    REQUIRE(static_cast<int>(text.size()) == len);
    REQUIRE(std::find(text.begin(), text.end(), 0) != text.end());
    for (size_t i = 1; i < text.size(); ++i) REQUIRE(text[i] != text[i - 1]);
    for (int t : text) REQUIRE((t >= 0 && t < w.text_size));
    if (len >= w.text_size) {
      // sampling without replacement: a full-length enrollment shows every symbol
      std::set<int> seen(text.begin(), text.begin() + w.text_size);
      REQUIRE(static_cast<int>(seen.size()) == w.text_size);
    }
  }
}

TEST_CASE("default world: fixed frame geometry and full-coverage enrollments") {
  WorldParams w;
  REQUIRE(w.durations == std::vector<int>{1});
  Vocab v = w.vocab();
  REQUIRE(v.field_slot == std::max({w.prompt_speech_len, w.train_len_max, w.eval_len_max}));
  REQUIRE(v.prompt_len() == 1 + 3 * (v.field_slot + 1));
  auto pairs = gen_corpus(w, 12, 9, Split::train);
  for (const auto& p : pairs) {
    // single-duration default: one enrollment symbol per code, whole alphabet shown
    REQUIRE(p.context.prompt_text.size() == static_cast<size_t>(w.prompt_speech_len));
    std::set<int> seen(p.context.prompt_text.begin(), p.context.prompt_text.end());
    REQUIRE(static_cast<int>(seen.size()) == w.text_size);
    REQUIRE(build_prompt(v, p.context).size() == static_cast<size_t>(v.prompt_len()));
  }
}

TEST_CASE("corpus generation: structure, splits, determinism") {
  auto w = world();
  auto pairs = gen_corpus(w, 40, 3, Split::pool);
  REQUIRE(pairs.size() == 40);
  std::set<std::pair<int, int>> train_styles, eval_styles;
  for (const auto& s : styles_in_split(w, Split::train)) train_styles.insert({s.duration, s.offset});
  for (const auto& s : styles_in_split(w, Split::eval)) eval_styles.insert({s.duration, s.offset});
  for (const auto& p : pairs) {
    // ground-truth invariants
    REQUIRE(p.context.prompt_speech == emit(w, p.context.prompt_text, p.style));
    REQUIRE(p.target_speech == emit(w, p.context.target_text, p.style));
    REQUIRE(p.context.prompt_speech.size() == static_cast<size_t>(w.prompt_speech_len));
    REQUIRE(quality_score(w, p.target_speech, p.context.target_text) == 5.0);
    REQUIRE(wer_score(w, p.target_speech, p.context.target_text) == 0.0);
    // speaker disjointness across splits
    REQUIRE(train_styles.count({p.style.duration, p.style.offset}) == 0);
    REQUIRE(eval_styles.count({p.style.duration, p.style.offset}) == 0);
    // length window for non-train splits
    auto L = p.target_speech.size();
    REQUIRE(L >= static_cast<size_t>(w.eval_len_min));
    REQUIRE(L <= static_cast<size_t>(w.eval_len_max));
  }
  SECTION("same seed reproduces byte-identically; extending is prefix-stable") {
    auto again = gen_corpus(w, 40, 3, Split::pool);
    REQUIRE(again.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
      REQUIRE(again[i].target_speech == pairs[i].target_speech);
      REQUIRE(again[i].context.prompt_speech == pairs[i].context.prompt_speech);
      REQUIRE(again[i].seed == pairs[i].seed);
    }
    auto longer = gen_corpus(w, 60, 3, Split::pool);
    for (size_t i = 0; i < pairs.size(); ++i)
      REQUIRE(longer[i].target_speech == pairs[i].target_speech);
  }
  SECTION("different seeds differ") {
    auto other = gen_corpus(w, 40, 4, Split::pool);
    bool any_diff = false;
    for (size_t i = 0; i < pairs.size(); ++i)
      any_diff |= other[i].target_speech != pairs[i].target_speech;
    REQUIRE(any_diff);
  }
}

TEST_CASE("corpus exhaustion and trivial sizes") {
  auto w = world();
  w.max_pairs_per_style = 2;
  REQUIRE_THROWS_AS(gen_corpus(w, 1000, 0, Split::eval), RioError);
  try {
    gen_corpus(w, 1000, 0, Split::eval);
  } catch (const RioError& e) {
    REQUIRE(e.kind() == ErrKind::exhaustion);
  }
  REQUIRE_THROWS_AS(gen_corpus(w, 0, 0, Split::eval), RioError);
  auto one = gen_corpus(world(), 1, 0, Split::train);
  REQUIRE(one.size() == 1);
}

TEST_CASE("a full-size sampling corpus generates cleanly") {
  auto pairs = gen_corpus(world(), 2000, 3, Split::train);
  REQUIRE(pairs.size() == 2000);
}
