#pragma once

#include <vector>

#include "rio/common.hpp"

namespace rio {

// ---------------------------------------------------------------------------
// Token layout. One flat id space shared by conditioning and output tokens:
//   [0, acoustic_size)                      acoustic codes
//   [acoustic_size, acoustic_size+text_size) text symbols
//   then BOS, SEP, EOS.
// The model's output head only ever predicts acoustic codes or EOS, so it has
// acoustic_size + 1 outputs.
// ---------------------------------------------------------------------------

struct Vocab {
  int acoustic_size = 32;
  int text_size = 12;
  // Width of one prompt field. Each of the three conditioning fields (prompt
  // text, prompt speech, target text) occupies exactly field_slot + 1
  // positions: the content followed by SEP padding (at least one SEP, so the
  // field terminator is always present). Fixing the frame keeps every
  // text-to-code correspondence at a constant positional offset, which a
  // small decoder can bind with one attention head; variable offsets it
  // cannot learn at this scale.
  int field_slot = 64;

  int text_base() const { return acoustic_size; }
  int bos() const { return acoustic_size + text_size; }
  int sep() const { return acoustic_size + text_size + 1; }
  int eos() const { return acoustic_size + text_size + 2; }
  int size() const { return acoustic_size + text_size + 3; }

  int head_size() const { return acoustic_size + 1; }
  int eos_output() const { return acoustic_size; }

  bool is_acoustic(int id) const { return id >= 0 && id < acoustic_size; }
  bool is_text(int id) const { return id >= text_base() && id < text_base() + text_size; }

  int text_id(int symbol) const {
    require(symbol >= 0 && symbol < text_size, ErrKind::precondition,
            "text symbol out of range: " + std::to_string(symbol));
    return text_base() + symbol;
  }
  int text_symbol(int id) const {
    require(is_text(id), ErrKind::precondition, "not a text id: " + std::to_string(id));
    return id - text_base();
  }

  /// Map a generated token to its output-head index (acoustic or EOS).
  int output_index(int id) const {
    if (is_acoustic(id)) return id;
    if (id == eos()) return eos_output();
    fail(ErrKind::precondition, "token " + std::to_string(id) + " is not a head output");
  }
  int output_token(int index) const {
    require(index >= 0 && index < head_size(), ErrKind::precondition,
            "head index out of range: " + std::to_string(index));
    return index == eos_output() ? eos() : index;
  }

  /// Serialized prompt length: BOS plus three fixed-width fields.
  int prompt_len() const { return 1 + 3 * (field_slot + 1); }
};

/// Conditioning for one generation: an enrollment (prompt text + prompt
/// speech in the same voice) plus the text we want rendered.
struct Context {
  std::vector<int> prompt_text;    // text symbols, not token ids
  std::vector<int> prompt_speech;  // acoustic token ids
  std::vector<int> target_text;    // text symbols
};

/// Prompt serialization: BOS, prompt text, SEP, prompt speech, SEP,
/// target text, SEP — with each field SEP-padded to the fixed slot width, so
/// the frame always spans v.prompt_len() positions. The continuation (target
/// speech, then EOS) is what the model is trained to produce after this
/// prefix.
inline std::vector<int> build_prompt(const Vocab& v, const Context& ctx) {
  require(!ctx.prompt_text.empty(), ErrKind::precondition, "empty prompt text");
  require(!ctx.target_text.empty(), ErrKind::precondition, "empty target text");
  std::vector<int> seq;
  seq.reserve(static_cast<size_t>(v.prompt_len()));
  seq.push_back(v.bos());
  auto pad_field = [&](size_t content, const char* what) {
    require(content <= static_cast<size_t>(v.field_slot), ErrKind::size_limit,
            std::string(what) + " exceeds the prompt field width (" +
                std::to_string(content) + " > " + std::to_string(v.field_slot) + ")");
    for (size_t n = content; n <= static_cast<size_t>(v.field_slot); ++n)
      seq.push_back(v.sep());
  };
  for (int s : ctx.prompt_text) seq.push_back(v.text_id(s));
  pad_field(ctx.prompt_text.size(), "prompt text");
  for (int a : ctx.prompt_speech) {
    require(v.is_acoustic(a), ErrKind::precondition,
            "prompt speech token out of range: " + std::to_string(a));
    seq.push_back(a);
  }
  pad_field(ctx.prompt_speech.size(), "prompt speech");
  for (int s : ctx.target_text) seq.push_back(v.text_id(s));
  pad_field(ctx.target_text.size(), "target text");
  return seq;
}

inline std::vector<int> build_training_sequence(const Vocab& v, const Context& ctx,
                                                const std::vector<int>& target_speech) {
  std::vector<int> seq = build_prompt(v, ctx);
  for (int a : target_speech) {
    require(v.is_acoustic(a), ErrKind::precondition,
            "target speech token out of range: " + std::to_string(a));
    seq.push_back(a);
  }
  seq.push_back(v.eos());
  return seq;
}

/// Inverse of build_prompt; validates the fixed three-field frame exactly.
inline Context parse_prompt(const Vocab& v, const std::vector<int>& seq) {
  require(seq.size() == static_cast<size_t>(v.prompt_len()), ErrKind::precondition,
          "prompt frame must span exactly " + std::to_string(v.prompt_len()) +
              " tokens, got " + std::to_string(seq.size()));
  require(seq.front() == v.bos(), ErrKind::precondition, "prompt must start with BOS");
  Context ctx;
  size_t i = 1;
  auto take_field = [&](int field) {
    std::vector<int> out;
    size_t end = i + static_cast<size_t>(v.field_slot) + 1;
    while (i < end && seq[i] != v.sep()) out.push_back(seq[i++]);
    require(i < end, ErrKind::precondition,
            "prompt field " + std::to_string(field) + " missing SEP terminator");
    for (; i < end; ++i)
      require(seq[i] == v.sep(), ErrKind::precondition,
              "prompt field " + std::to_string(field) + " has content after its SEP padding");
    return out;
  };
  for (int id : take_field(0)) ctx.prompt_text.push_back(v.text_symbol(id));
  for (int id : take_field(1)) {
    require(v.is_acoustic(id), ErrKind::precondition, "non-acoustic token in prompt speech");
    ctx.prompt_speech.push_back(id);
  }
  for (int id : take_field(2)) ctx.target_text.push_back(v.text_symbol(id));
  require(!ctx.prompt_text.empty() && !ctx.target_text.empty(), ErrKind::precondition,
          "prompt frame has empty text field");
  return ctx;
}

}  // namespace rio
