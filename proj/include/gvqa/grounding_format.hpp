// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "gvqa/core.hpp"

namespace gvqa {

// ---------------------------------------------------------------------------
// Output formats. The instruction strings are contract-fixed; prompts embed
// them verbatim after "Answer in the format".
// ---------------------------------------------------------------------------

enum class OutputFormat { kAnswerOnly, kGroundingOnly, kAnswerWithGrounding };

// "answer", "[<start>, <end>]", or "answer [<start>, <end>]".
const char* format_instruction(OutputFormat f);

// How segment endpoints appear in response text:
//   kScale100 — integers in [0, 100] (default),
//   kUnit     — two-decimal fractions in [0, 1] (ablation).
enum class TimeRepresentation { kScale100, kUnit };

// ---------------------------------------------------------------------------
// Prompt rendering.
// ---------------------------------------------------------------------------

struct PromptSpec {
  std::string system_text;  // may be empty; emitted on its own line when set
  std::string question;
  std::optional<TemporalSegment> referring_segment;
  OutputFormat output_format = OutputFormat::kAnswerOnly;
  // Word index in the question before which the <video> token is inserted
  // (0 = before the question).
  size_t video_token_position = 0;
  // When false, the format instruction is omitted entirely (template
  // ablation). Grounding then degrades to metric zeros, never to crashes.
  bool use_template = true;
};

// Deterministic prompt text. Contains exactly one <video> token and, when
// use_template is set, the literal "Answer in the format <fmt>".
std::string render_prompt(const PromptSpec& spec);

// Insert a temporal reference into a question: "What is happening" + [25, 73]
// -> "What is happening in [25, 73]". A trailing '?' stays trailing.
std::string inject_referring(const std::string& question, const TemporalSegment& seg);

// Render "[s, e]" in the given representation.
std::string segment_to_text(const TemporalSegment& seg,
                            TimeRepresentation rep = TimeRepresentation::kScale100);

// ---------------------------------------------------------------------------
// Response parsing / serialization.
//
// Grounding suffix grammar: '[' WS* INT WS* ',' WS* INT WS* ']' with
// INT in 0..100 (kScale100) or two fixed-point decimals in [0, 1] (kUnit).
// ---------------------------------------------------------------------------

// Total over all strings; never throws. Scans for the last grammar-matching
// bracket pair followed only by whitespace/punctuation. A pair whose values
// violate 0 <= start <= end <= max yields kMalformed with the verbatim text
// as the answer; no pair at all yields kAnswerOnly.
GroundedAnswer parse_response(const std::string& text,
                              TimeRepresentation rep = TimeRepresentation::kScale100);

// Exact inverse of parse_response on well-formed inputs. Throws DomainError
// when the format requires a field the answer does not carry.
std::string serialize(const GroundedAnswer& ga, OutputFormat format,
                      TimeRepresentation rep = TimeRepresentation::kScale100);

}  // namespace gvqa
