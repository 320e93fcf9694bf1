// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gvqa/core.hpp"
#include "gvqa/judge.hpp"

namespace gvqa {

// ---------------------------------------------------------------------------
// Interval metrics on the [0, 100] integer timeline.
// ---------------------------------------------------------------------------

// Intersection over union. Zero-length conventions: identical points -> 1,
// otherwise a measure-zero union scores 0.
double iou(const TemporalSegment& a, const TemporalSegment& b);

// Intersection over prediction: |pred ∩ gt| / |pred|. A zero-length
// prediction scores 1 if the point lies inside gt, else 0.
double iop(const TemporalSegment& pred, const TemporalSegment& gt);

// ---------------------------------------------------------------------------
// Evaluation records and reports.
// ---------------------------------------------------------------------------

struct PredictionRecord {
  size_t qa_item_ref = 0;  // index into the item list
  std::string video_id;
  GroundedAnswer grounded;
  std::optional<int> chosen_option_index;       // cached option retrieval
  std::optional<JudgeVerdict> open_verdict;     // cached open judging
};

// Boundary statistics for one set of segments (predictions or ground truth).
struct BoundaryStats {
  double mean_center = 0.0;
  double mean_length = 0.0;
  double pct_start_at_0 = 0.0;
  double pct_end_at_100 = 0.0;
};

struct ErrorStats {
  // Early/late classification with a margin of 10 timeline units
  // (10% of the video).
  double pct_early_start = 0.0;
  double pct_late_start = 0.0;
  double pct_early_end = 0.0;
  double pct_late_end = 0.0;
  double mae_start = 0.0;
  double mae_end = 0.0;
  double mae_center = 0.0;
  BoundaryStats pred;
  BoundaryStats gt;
  size_t n = 0;
};

enum class LengthBucket { kShort, kMedium, kLong };  // <30, 30..70, >70 units

const char* to_string(LengthBucket b);
LengthBucket length_bucket(const TemporalSegment& gt);

struct MetricsReport {
  double m_iou = 0.0;
  double m_iop = 0.0;
  double iou_at_05 = 0.0;
  double iop_at_05 = 0.0;
  double acc_qa = 0.0;
  double acc_gqa = 0.0;
  double open_acc_gqa = 0.0;
  size_t n_items = 0;
  size_t n_grounded_items = 0;  // items carrying a gt segment
  size_t judge_failures = 0;
  std::map<std::string, MetricsReport> by_question_type;
  std::map<std::string, double> by_length_bucket;  // bucket -> mIoU
  ErrorStats error_stats;

  // Flat "key = value" text record; fractions reported as percentages.
  std::string to_flat_text() const;
  // Structured JSON with raw fractions.
  std::string to_json() const;
};

// Scores predictions against items. Items with a gt segment participate in
// grounding metrics; missing or malformed predicted segments score
// IoU = IoP = 0. Judge failures mark the item incorrect, never drop it.
MetricsReport evaluate(const std::vector<PredictionRecord>& preds,
                       const std::vector<QAItem>& items, Judge& judge);

// Endpoint error analysis over items where both gt and predicted segments
// exist. Throws DomainError when that subset is empty.
ErrorStats error_analysis(const std::vector<PredictionRecord>& preds,
                          const std::vector<QAItem>& items);

}  // namespace gvqa
