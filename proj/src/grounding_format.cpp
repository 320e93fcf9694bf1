// SPDX-License-Identifier: Apache-2.0
#include "gvqa/grounding_format.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <vector>

namespace gvqa {

const char* format_instruction(OutputFormat f) {
  switch (f) {
    case OutputFormat::kAnswerOnly: return "answer";
    case OutputFormat::kGroundingOnly: return "[<start>, <end>]";
    case OutputFormat::kAnswerWithGrounding: return "answer [<start>, <end>]";
  }
  return "answer";
}

std::string segment_to_text(const TemporalSegment& seg, TimeRepresentation rep) {
  char buf[48];
  if (rep == TimeRepresentation::kScale100) {
    std::snprintf(buf, sizeof(buf), "[%d, %d]", seg.start, seg.end);
  } else {
    std::snprintf(buf, sizeof(buf), "[%.2f, %.2f]", seg.start / 100.0, seg.end / 100.0);
  }
  return buf;
}

std::string inject_referring(const std::string& question, const TemporalSegment& seg) {
  std::string body = question;
  bool had_qmark = false;
  while (!body.empty() && (std::isspace(static_cast<unsigned char>(body.back())) ||
                           body.back() == '?')) {
    had_qmark = had_qmark || body.back() == '?';
    body.pop_back();
  }
  body += " in " + segment_to_text(seg);
  if (had_qmark) body += "?";
  return body;
}

std::string render_prompt(const PromptSpec& spec) {
  if (spec.question.empty()) throw DomainError("render_prompt: question must be non-empty");

  std::string question = spec.question;
  if (spec.referring_segment) question = inject_referring(question, *spec.referring_segment);

  // Place the <video> token before the word at video_token_position.
  std::string body;
  if (spec.video_token_position == 0) {
    body = "<video> " + question;
  } else {
    std::istringstream in(question);
    std::string word;
    std::vector<std::string> words;
    while (in >> word) words.push_back(word);
    const size_t pos = std::min(spec.video_token_position, words.size());
    for (size_t i = 0; i < words.size(); ++i) {
      if (i == pos) body += "<video> ";
      body += words[i];
      if (i + 1 < words.size()) body += ' ';
    }
    if (pos >= words.size()) body += " <video>";
  }

  std::string out;
  if (!spec.system_text.empty()) out += spec.system_text + "\n";
  out += "USER: " + body;
  if (spec.use_template) {
    out += std::string(" Answer in the format ") + format_instruction(spec.output_format);
  }
  out += "\nASSISTANT:";
  return out;
}

namespace {

bool is_trailing_filler(char c) {
  return std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == ',' || c == '!' ||
         c == '?' || c == ';' || c == ':';
}

// Attempt to parse one bracket group starting at text[open] == '['.
// On grammar match, fills the values and the index one past ']'.
struct BracketMatch {
  size_t begin = 0;
  size_t end = 0;  // one past ']'
  double a = 0.0;
  double b = 0.0;
};

bool match_number(const std::string& s, size_t& i, bool allow_decimal, double& out) {
  size_t j = i;
  size_t digits = 0;
  while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
    ++j;
    ++digits;
  }
  if (digits == 0 || digits > 9) return false;
  size_t int_end = j;
  bool has_frac = false;
  if (allow_decimal && j < s.size() && s[j] == '.') {
    size_t k = j + 1;
    size_t frac = 0;
    while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
      ++k;
      ++frac;
    }
    if (frac >= 1 && frac <= 9) {
      has_frac = true;
      j = k;
    }
  }
  (void)int_end;
  (void)has_frac;
  out = std::strtod(s.substr(i, j - i).c_str(), nullptr);
  i = j;
  return true;
}

bool match_bracket(const std::string& s, size_t open, bool allow_decimal, BracketMatch& m) {
  size_t i = open + 1;
  auto skip_ws = [&] {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  };
  skip_ws();
  double a = 0.0, b = 0.0;
  if (!match_number(s, i, allow_decimal, a)) return false;
  skip_ws();
  if (i >= s.size() || s[i] != ',') return false;
  ++i;
  skip_ws();
  if (!match_number(s, i, allow_decimal, b)) return false;
  skip_ws();
  if (i >= s.size() || s[i] != ']') return false;
  m = BracketMatch{open, i + 1, a, b};
  return true;
}

std::string trimmed(const std::string& s, size_t begin, size_t end) {
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

}  // namespace

GroundedAnswer parse_response(const std::string& text, TimeRepresentation rep) {
  const bool unit = rep == TimeRepresentation::kUnit;

  // Find the last grammar-matching bracket pair that is followed only by
  // whitespace/punctuation.
  std::optional<BracketMatch> last;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '[') continue;
    BracketMatch m;
    if (!match_bracket(text, i, unit, m)) continue;
    bool tail_ok = true;
    for (size_t j = m.end; j < text.size(); ++j) {
      if (!is_trailing_filler(text[j])) {
        tail_ok = false;
        break;
      }
    }
    if (tail_ok) last = m;
  }

  GroundedAnswer ga;
  if (!last) {
    ga.answer = trimmed(text, 0, text.size());
    ga.parse_status = ParseStatus::kAnswerOnly;
    return ga;
  }

  long long s_unit, e_unit;
  bool in_range;
  if (unit) {
    in_range = last->a >= 0.0 && last->a <= last->b && last->b <= 1.0;
    s_unit = std::llround(100.0 * last->a);
    e_unit = std::llround(100.0 * last->b);
  } else {
    in_range = last->a >= 0.0 && last->a <= last->b && last->b <= 100.0 &&
               last->a == std::floor(last->a) && last->b == std::floor(last->b);
    s_unit = static_cast<long long>(last->a);
    e_unit = static_cast<long long>(last->b);
  }
  if (!in_range || s_unit > e_unit) {
    ga.answer = text;  // verbatim, brackets included
    ga.parse_status = ParseStatus::kMalformed;
    return ga;
  }

  ga.answer = trimmed(text, 0, last->begin);
  ga.segment = TemporalSegment(static_cast<int>(s_unit), static_cast<int>(e_unit));
  ga.parse_status = ParseStatus::kOk;
  return ga;
}

std::string serialize(const GroundedAnswer& ga, OutputFormat format, TimeRepresentation rep) {
  switch (format) {
    case OutputFormat::kAnswerOnly:
      return ga.answer;
    case OutputFormat::kGroundingOnly:
      if (!ga.segment) throw DomainError("serialize: grounding-only format requires a segment");
      return segment_to_text(*ga.segment, rep);
    case OutputFormat::kAnswerWithGrounding:
      if (!ga.segment) throw DomainError("serialize: joint format requires a segment");
      if (ga.answer.empty()) throw DomainError("serialize: joint format requires an answer");
      return ga.answer + " " + segment_to_text(*ga.segment, rep);
  }
  throw DomainError("serialize: unknown format");
}

}  // namespace gvqa
