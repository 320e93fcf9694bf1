// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gvqa {

// Error raised when an operation's preconditions are violated.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when training-side code touches evaluation-only annotations.
class WeakSupervisionViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// TemporalSegment — integer interval on the normalized [0, 100] timeline.
// ---------------------------------------------------------------------------

struct TemporalSegment {
  int start = 0;
  int end = 0;

  TemporalSegment() = default;
  TemporalSegment(int s, int e) : start(s), end(e) {
    if (s < 0 || e > 100 || s > e) {
      throw DomainError("TemporalSegment requires 0 <= start <= end <= 100, got [" +
                        std::to_string(s) + ", " + std::to_string(e) + "]");
    }
  }

  int length() const { return end - start; }

  bool operator==(const TemporalSegment& other) const {
    return start == other.start && end == other.end;
  }
  bool operator!=(const TemporalSegment& other) const { return !(*this == other); }
};

// Seconds -> [0, 100] timeline units. Rounds half away from zero, clamps.
inline TemporalSegment normalize_segment(double start_s, double end_s, double duration_s) {
  if (!(duration_s > 0.0)) throw DomainError("normalize_segment: duration must be > 0");
  if (!(start_s >= 0.0 && start_s <= end_s && end_s <= duration_s)) {
    throw DomainError("normalize_segment: requires 0 <= start <= end <= duration");
  }
  auto unit = [duration_s](double t) {
    long long u = std::llround(100.0 * t / duration_s);  // half away from zero
    if (u < 0) u = 0;
    if (u > 100) u = 100;
    return static_cast<int>(u);
  };
  return TemporalSegment(unit(start_s), unit(end_s));
}

// [0, 100] timeline units -> seconds. Exact linear scaling.
inline std::pair<double, double> denormalize_segment(const TemporalSegment& seg,
                                                     double duration_s) {
  if (!(duration_s > 0.0)) throw DomainError("denormalize_segment: duration must be > 0");
  return {seg.start * duration_s / 100.0, seg.end * duration_s / 100.0};
}

// ---------------------------------------------------------------------------
// VideoRecord — raw video at desk scale: one feature vector per frame.
// ---------------------------------------------------------------------------

struct VideoRecord {
  std::string video_id;
  double duration_seconds = 0.0;
  std::vector<std::vector<float>> frames;  // [frame_count][feature_dim]

  size_t frame_count() const { return frames.size(); }
  size_t feature_dim() const { return frames.empty() ? 0 : frames.front().size(); }

  void validate() const {
    if (!(duration_seconds > 0.0)) throw DomainError("VideoRecord: duration must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Evaluation-access guard.
//
// Ground-truth segments exist only to score predictions. Training and
// pseudo-labeling run inside a TrainingPhaseGuard; reading gt_segment while
// a guard is active throws, and every read is counted so tests can assert
// that a whole training run performed zero reads.
// ---------------------------------------------------------------------------

class TrainingPhaseGuard {
 public:
  TrainingPhaseGuard() { ++depth(); }
  ~TrainingPhaseGuard() { --depth(); }
  TrainingPhaseGuard(const TrainingPhaseGuard&) = delete;
  TrainingPhaseGuard& operator=(const TrainingPhaseGuard&) = delete;

  static bool active() { return depth() > 0; }

 private:
  static int& depth() {
    thread_local int d = 0;
    return d;
  }
};

namespace detail {
inline std::atomic<uint64_t>& gt_read_counter() {
  static std::atomic<uint64_t> n{0};
  return n;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// QAItem — one question with its ground-truth answer and, for evaluation
// only, the annotated grounding window.
// ---------------------------------------------------------------------------

enum class QuestionType { kWhy, kHow, kPresent, kPast, kFuture, kOther };

const char* to_string(QuestionType t);
std::optional<QuestionType> question_type_from_string(const std::string& s);

class QAItem {
 public:
  std::string video_id;
  std::string question;
  std::string gt_answer;
  std::optional<std::vector<std::string>> options;  // exactly 5 when present
  QuestionType question_type = QuestionType::kOther;

  void validate() const {
    if (options) {
      if (options->size() != 5) {
        throw DomainError("QAItem: options must have exactly 5 entries");
      }
      bool found = false;
      for (const auto& o : *options) found = found || (o == gt_answer);
      if (!found) throw DomainError("QAItem: gt_answer must equal one of the options");
    }
  }

  // Evaluation-side view of the annotated segment. Throws inside a
  // TrainingPhaseGuard; every successful read is counted.
  const std::optional<TemporalSegment>& gt_segment_for_eval() const {
    if (TrainingPhaseGuard::active()) {
      throw WeakSupervisionViolation(
          "gt_segment read during a training phase (weak-supervision contract)");
    }
    detail::gt_read_counter().fetch_add(1, std::memory_order_relaxed);
    return gt_segment_;
  }

  bool has_gt_segment_annotation() const { return gt_segment_.has_value(); }
  void set_gt_segment(std::optional<TemporalSegment> seg) { gt_segment_ = std::move(seg); }

  static uint64_t gt_segment_read_count() {
    return detail::gt_read_counter().load(std::memory_order_relaxed);
  }

 private:
  std::optional<TemporalSegment> gt_segment_;
};

// ---------------------------------------------------------------------------
// GroundedAnswer — the decoder's output contract.
// ---------------------------------------------------------------------------

enum class ParseStatus { kOk, kAnswerOnly, kMalformed };

const char* to_string(ParseStatus s);

struct GroundedAnswer {
  std::string answer;
  std::optional<TemporalSegment> segment;
  ParseStatus parse_status = ParseStatus::kAnswerOnly;

  bool operator==(const GroundedAnswer& o) const {
    return answer == o.answer && segment == o.segment && parse_status == o.parse_status;
  }
};

inline const char* to_string(QuestionType t) {
  switch (t) {
    case QuestionType::kWhy: return "why";
    case QuestionType::kHow: return "how";
    case QuestionType::kPresent: return "present";
    case QuestionType::kPast: return "past";
    case QuestionType::kFuture: return "future";
    case QuestionType::kOther: return "other";
  }
  return "other";
}

inline std::optional<QuestionType> question_type_from_string(const std::string& s) {
  if (s == "why") return QuestionType::kWhy;
  if (s == "how") return QuestionType::kHow;
  if (s == "present") return QuestionType::kPresent;
  if (s == "past") return QuestionType::kPast;
  if (s == "future") return QuestionType::kFuture;
  if (s == "other") return QuestionType::kOther;
  // NExT-GQA style two-letter codes.
  if (s == "CW") return QuestionType::kWhy;
  if (s == "CH") return QuestionType::kHow;
  if (s == "TC") return QuestionType::kPresent;
  if (s == "TP") return QuestionType::kPast;
  if (s == "TN") return QuestionType::kFuture;
  if (s == "DC" || s == "DL" || s == "DO" || s == "DB") return QuestionType::kOther;
  return std::nullopt;
}

inline const char* to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::kOk: return "ok";
    case ParseStatus::kAnswerOnly: return "answer_only";
    case ParseStatus::kMalformed: return "malformed";
  }
  return "malformed";
}

}  // namespace gvqa
