// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gvqa/core.hpp"
#include "gvqa/data.hpp"
#include "gvqa/judge.hpp"

namespace gvqa {

// ---------------------------------------------------------------------------
// Segment sampling
// ---------------------------------------------------------------------------

struct SegmentSamplingPolicy {
  int segments_per_video = 6;
  double min_length_frac = 0.1;
  double max_length_frac = 0.8;
  uint64_t seed = 0;

  void validate() const;
};

// Lengths uniform in the fraction range, starts uniform over feasible
// positions. Deterministic per (seed, video_id), independent of call order.
std::vector<TemporalSegment> sample_segments(const SegmentSamplingPolicy& policy,
                                             const VideoRecord& video);

// ---------------------------------------------------------------------------
// Pseudo labels
// ---------------------------------------------------------------------------

struct PseudoLabel {
  std::string video_id;
  TemporalSegment segment;
  std::string description;
  std::string grounding_question;
  std::string referring_question;
  std::string referring_answer;  // filled by the consistency filter
  std::optional<std::string> gt_answer;
  double consistency_score = 0.0;
  bool accepted = false;
  std::string reject_reason;  // audit trail for rejected labels
};

// What the pseudo-label pipeline needs from a trained model: captioning a
// cropped segment and answering a question over the full video.
class GroundedQaModel {
 public:
  virtual ~GroundedQaModel() = default;
  virtual std::string caption_segment(const VideoRecord& video, const TemporalSegment& seg) = 0;
  virtual std::string answer_referring(const VideoRecord& video, const std::string& question) = 0;
  // Timeline positions the model can resolve, ascending, including 0 and 100.
  // Pseudo-label segments snap to this grid when non-empty; empty means full
  // [0, 100] resolution.
  virtual std::vector<int> timeline_fences() const { return {}; }
};

// Referring question for a segment: "What is happening in [s, e]?".
std::string make_referring_question(const TemporalSegment& seg);

struct PairTexts {
  std::string grounding_question;
  std::string referring_question;
  std::optional<std::string> matched_gt_answer;
};

// Referring question is templated; the grounding question comes from the
// video's QA annotations when the judge matches the description to an
// annotated answer, else the generic captioning question.
PairTexts build_pairs(const TemporalSegment& seg, const std::string& description,
                      const std::vector<QAItem>& qa_items_for_video, Judge& judge);

// Full pseudo-label pass over one split: sample segments, caption each,
// attach question pairs. Runs under a TrainingPhaseGuard; never touches
// gt_segment. Segments whose caption comes back empty are dropped.
std::vector<PseudoLabel> make_pseudo_labels(GroundedQaModel& model, const DatasetManifest& data,
                                            const SegmentSamplingPolicy& policy, Judge& judge);

// ---------------------------------------------------------------------------
// Consistency filter
// ---------------------------------------------------------------------------

struct FilterResult {
  std::vector<PseudoLabel> accepted;
  std::vector<PseudoLabel> rejected;  // reject_reason filled
};

// Asks the model each label's referring question and accepts the label only
// when the answer matches the description and, when a gt answer is attached,
// the description matches it too. Judge failures reject, never accept.
FilterResult consistency_filter(GroundedQaModel& model, const std::vector<PseudoLabel>& labels,
                                const DatasetManifest& data, Judge& judge);

// ---------------------------------------------------------------------------
// Label store: schema-versioned line-delimited JSON.
// ---------------------------------------------------------------------------

void save_labels(const std::string& path, const std::vector<PseudoLabel>& labels);
std::vector<PseudoLabel> load_labels(const std::string& path);

}  // namespace gvqa
