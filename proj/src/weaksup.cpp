// SPDX-License-Identifier: Apache-2.0
#include "gvqa/weaksup.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gvqa/grounding_format.hpp"
#include "gvqa/prompt_assets.hpp"
#include "gvqa/rng.hpp"

namespace gvqa {

void SegmentSamplingPolicy::validate() const {
  if (segments_per_video < 1) throw DomainError("segments_per_video must be positive");
  if (!(min_length_frac > 0.0) || !(max_length_frac <= 1.0) ||
      !(min_length_frac <= max_length_frac)) {
    throw DomainError("segment length fractions must satisfy 0 < min <= max <= 1");
  }
}

std::vector<TemporalSegment> sample_segments(const SegmentSamplingPolicy& policy,
                                             const VideoRecord& video) {
  policy.validate();
  Rng rng = Rng(policy.seed).fork(fnv1a64(video.video_id));
  const int min_len = static_cast<int>(std::llround(100.0 * policy.min_length_frac));
  const int max_len = static_cast<int>(std::llround(100.0 * policy.max_length_frac));
  std::vector<TemporalSegment> out;
  out.reserve(static_cast<size_t>(policy.segments_per_video));
  for (int i = 0; i < policy.segments_per_video; ++i) {
    const int len = std::max(1, static_cast<int>(rng.uniform_int(min_len, max_len)));
    const int start = static_cast<int>(rng.uniform_int(0, 100 - len));
    out.push_back(TemporalSegment{start, start + len});
  }
  return out;
}

std::string make_referring_question(const TemporalSegment& seg) {
  return inject_referring(prompts::kCaptionQuestion, seg);
}

PairTexts build_pairs(const TemporalSegment& seg, const std::string& description,
                      const std::vector<QAItem>& qa_items_for_video, Judge& judge) {
  if (description.empty()) throw DomainError("build_pairs requires a non-empty description");
  PairTexts out;
  out.referring_question = make_referring_question(seg);
  out.grounding_question = prompts::kCaptionQuestion;
  for (const QAItem& item : qa_items_for_video) {
    bool match = false;
    try {
      match = judge.judge_open(item.question, description, item.gt_answer).match;
    } catch (const JudgeError&) {
      match = false;  // unreachable annotation is the same as no match
    }
    if (match) {
      out.grounding_question = item.question;
      out.matched_gt_answer = item.gt_answer;
      break;
    }
  }
  return out;
}

std::vector<PseudoLabel> make_pseudo_labels(GroundedQaModel& model, const DatasetManifest& data,
                                            const SegmentSamplingPolicy& policy, Judge& judge) {
  TrainingPhaseGuard guard;
  std::vector<PseudoLabel> out;
  const std::vector<int> fences = model.timeline_fences();
  const auto snap = [&fences](int v) {
    int best = fences.front();
    for (int f : fences) {
      if (std::abs(f - v) < std::abs(best - v)) best = f;
    }
    return best;
  };

  // Manifest videos are ordered by id, so output order is reproducible.
  for (const auto& [video_id, source] : data.videos) {
    const VideoRecord video = load_video(data, video_id);
    std::vector<QAItem> video_items;
    for (const QAItem& item : data.items) {
      if (item.video_id == video_id) video_items.push_back(item);
    }
    std::vector<TemporalSegment> proposals = sample_segments(policy, video);
    if (!fences.empty()) {
      // Snapping keeps proposals at positions the model can actually express;
      // degenerate and duplicate windows collapse away.
      std::set<std::pair<int, int>> seen;
      std::vector<TemporalSegment> snapped;
      for (const TemporalSegment& seg : proposals) {
        TemporalSegment s{snap(seg.start), snap(seg.end)};
        if (s.end <= s.start) {
          const auto it = std::upper_bound(fences.begin(), fences.end(), s.start);
          if (it == fences.end()) continue;
          s.end = *it;
        }
        if (seen.insert({s.start, s.end}).second) snapped.push_back(s);
      }
      proposals = std::move(snapped);
    }
    for (const TemporalSegment& seg : proposals) {
      const std::string description = model.caption_segment(video, seg);
      // A label must name an event; windows the model describes as empty
      // carry no grounding signal.
      if (description.empty() || description == "nothing") continue;
      const PairTexts pair = build_pairs(seg, description, video_items, judge);
      PseudoLabel label;
      label.video_id = video_id;
      label.segment = seg;
      label.description = description;
      label.grounding_question = pair.grounding_question;
      label.referring_question = pair.referring_question;
      label.gt_answer = pair.matched_gt_answer;
      out.push_back(std::move(label));
    }
  }
  return out;
}

FilterResult consistency_filter(GroundedQaModel& model, const std::vector<PseudoLabel>& labels,
                                const DatasetManifest& data, Judge& judge) {
  TrainingPhaseGuard guard;
  FilterResult result;
  for (PseudoLabel label : labels) {
    const VideoRecord video = load_video(data, label.video_id);
    label.referring_answer = model.answer_referring(video, label.referring_question);
    try {
      label.consistency_score =
          judge.similarity(label.referring_question, label.referring_answer, label.description);
      const bool self_consistent =
          !label.referring_answer.empty() &&
          judge.judge_open(label.referring_question, label.referring_answer, label.description)
              .match;
      bool gt_consistent = true;
      if (label.gt_answer.has_value()) {
        gt_consistent =
            judge.judge_open(label.grounding_question, label.description, *label.gt_answer).match;
      }
      label.accepted = self_consistent && gt_consistent;
      if (!label.accepted) {
        label.reject_reason = self_consistent ? "description contradicts annotation"
                                              : "answer does not match description";
      }
    } catch (const JudgeError& e) {
      label.accepted = false;
      label.consistency_score = 0.0;
      label.reject_reason = std::string("judge failure: ") + e.what();
    }
    (label.accepted ? result.accepted : result.rejected).push_back(std::move(label));
  }
  return result;
}

namespace {

constexpr int kLabelSchemaVersion = 1;

nlohmann::ordered_json label_to_json(const PseudoLabel& label) {
  nlohmann::ordered_json j;
  j["video_id"] = label.video_id;
  j["segment"] = {label.segment.start, label.segment.end};
  j["description"] = label.description;
  j["grounding_question"] = label.grounding_question;
  j["referring_question"] = label.referring_question;
  j["referring_answer"] = label.referring_answer;
  if (label.gt_answer.has_value()) j["gt_answer"] = *label.gt_answer;
  j["consistency_score"] = label.consistency_score;
  j["accepted"] = label.accepted;
  if (!label.reject_reason.empty()) j["reject_reason"] = label.reject_reason;
  return j;
}

PseudoLabel label_from_json(const nlohmann::json& j) {
  PseudoLabel label;
  label.video_id = j.at("video_id").get<std::string>();
  const auto& seg = j.at("segment");
  if (!seg.is_array() || seg.size() != 2) throw DomainError("label segment must be [start, end]");
  label.segment = TemporalSegment{seg[0].get<int>(), seg[1].get<int>()};
  label.description = j.at("description").get<std::string>();
  label.grounding_question = j.at("grounding_question").get<std::string>();
  label.referring_question = j.at("referring_question").get<std::string>();
  label.referring_answer = j.value("referring_answer", std::string());
  if (j.contains("gt_answer")) label.gt_answer = j.at("gt_answer").get<std::string>();
  label.consistency_score = j.value("consistency_score", 0.0);
  label.accepted = j.value("accepted", false);
  label.reject_reason = j.value("reject_reason", std::string());
  return label;
}

}  // namespace

void save_labels(const std::string& path, const std::vector<PseudoLabel>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open label file for writing: " + path);
  nlohmann::ordered_json header;
  header["schema_version"] = kLabelSchemaVersion;
  header["kind"] = "pseudo_labels";
  header["count"] = labels.size();
  out << header.dump() << "\n";
  for (const PseudoLabel& label : labels) out << label_to_json(label).dump() << "\n";
  if (!out) throw DomainError("write failed: " + path);
}

std::vector<PseudoLabel> load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open label file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DomainError("label file is empty: " + path);
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("kind", std::string()) != "pseudo_labels") {
    throw DomainError("not a pseudo label file: " + path);
  }
  if (header.value("schema_version", 0) != kLabelSchemaVersion) {
    throw DomainError("unsupported label schema version in " + path);
  }
  std::vector<PseudoLabel> labels;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DomainError(path + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      labels.push_back(label_from_json(j));
    } catch (const std::exception& e) {
      throw DomainError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return labels;
}

}  // namespace gvqa
