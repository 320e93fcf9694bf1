// SPDX-License-Identifier: Apache-2.0
#include "gvqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace gvqa {

double iou(const TemporalSegment& a, const TemporalSegment& b) {
  const int inter_lo = std::max(a.start, b.start);
  const int inter_hi = std::min(a.end, b.end);
  const int inter = std::max(0, inter_hi - inter_lo);
  const int uni = (a.end - a.start) + (b.end - b.start) - inter;
  if (uni == 0) {
    // Both segments are points. Identical points match perfectly; distinct
    // points share nothing.
    return a.start == b.start ? 1.0 : 0.0;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double iop(const TemporalSegment& pred, const TemporalSegment& gt) {
  if (pred.length() == 0) {
    // A point prediction is "inside" iff it lies within the gt window.
    return (pred.start >= gt.start && pred.start <= gt.end) ? 1.0 : 0.0;
  }
  const int inter_lo = std::max(pred.start, gt.start);
  const int inter_hi = std::min(pred.end, gt.end);
  const int inter = std::max(0, inter_hi - inter_lo);
  return static_cast<double>(inter) / static_cast<double>(pred.length());
}

const char* to_string(LengthBucket b) {
  switch (b) {
    case LengthBucket::kShort: return "short";
    case LengthBucket::kMedium: return "medium";
    case LengthBucket::kLong: return "long";
  }
  return "medium";
}

LengthBucket length_bucket(const TemporalSegment& gt) {
  const int len = gt.length();
  if (len < 30) return LengthBucket::kShort;
  if (len <= 70) return LengthBucket::kMedium;
  return LengthBucket::kLong;
}

namespace {

// Per-prediction scoring resolved once so every aggregation below is pure
// arithmetic and the judge is consulted exactly once per row.
struct RowScore {
  bool has_gt = false;
  bool has_pred_seg = false;
  TemporalSegment gt_seg;
  TemporalSegment pred_seg;
  double v_iou = 0.0;
  double v_iop = 0.0;
  bool qa_correct = false;
  bool open_match = false;
  bool judge_failed = false;
  QuestionType type = QuestionType::kOther;
};

std::vector<RowScore> score_rows(const std::vector<PredictionRecord>& preds,
                                 const std::vector<QAItem>& items, Judge* judge) {
  std::vector<RowScore> rows;
  rows.reserve(preds.size());
  for (const auto& pred : preds) {
    if (pred.qa_item_ref >= items.size()) {
      throw DomainError("evaluate: prediction references item " +
                        std::to_string(pred.qa_item_ref) + " but only " +
                        std::to_string(items.size()) + " items were given");
    }
    const QAItem& item = items[pred.qa_item_ref];
    RowScore row;
    row.type = item.question_type;

    const auto& gt = item.gt_segment_for_eval();
    if (gt) {
      row.has_gt = true;
      row.gt_seg = *gt;
      if (pred.grounded.segment) {
        row.has_pred_seg = true;
        row.pred_seg = *pred.grounded.segment;
        row.v_iou = iou(row.pred_seg, row.gt_seg);
        row.v_iop = iop(row.pred_seg, row.gt_seg);
      }
      // Missing or malformed predictions keep IoU = IoP = 0.
    }

    if (judge) {
      if (item.options) {
        try {
          int idx = pred.chosen_option_index
                        ? *pred.chosen_option_index
                        : judge->retrieve_option(item.question, pred.grounded.answer,
                                                 *item.options);
          if (idx < 0 || idx > 4) throw JudgeError("option index out of range");
          row.qa_correct = (*item.options)[static_cast<size_t>(idx)] == item.gt_answer;
        } catch (const JudgeError&) {
          row.judge_failed = true;
        }
      }
      if (pred.grounded.answer.empty()) {
        row.open_match = false;
      } else {
        try {
          const JudgeVerdict v =
              pred.open_verdict ? *pred.open_verdict
                                : judge->judge_open(item.question, pred.grounded.answer,
                                                    item.gt_answer);
          row.open_match = v.match;
        } catch (const JudgeError&) {
          row.judge_failed = true;
        }
      }
      // Without options the open verdict doubles as answer accuracy.
      if (!item.options) row.qa_correct = row.open_match;
    }
    rows.push_back(row);
  }
  return rows;
}

MetricsReport aggregate(const std::vector<RowScore>& rows) {
  MetricsReport r;
  r.n_items = rows.size();
  double sum_iou = 0.0, sum_iop = 0.0;
  size_t iou_hits = 0, iop_hits = 0;
  size_t qa = 0, gqa = 0, open_gqa = 0;
  for (const auto& row : rows) {
    if (row.has_gt) {
      ++r.n_grounded_items;
      sum_iou += row.v_iou;
      sum_iop += row.v_iop;
      if (row.v_iou >= 0.5) ++iou_hits;
      if (row.v_iop >= 0.5) ++iop_hits;
    }
    if (row.judge_failed) ++r.judge_failures;
    if (row.qa_correct) ++qa;
    if (row.qa_correct && row.has_gt && row.v_iop >= 0.5) ++gqa;
    if (row.open_match && row.has_gt && row.v_iop >= 0.5) ++open_gqa;
  }
  if (r.n_grounded_items > 0) {
    r.m_iou = sum_iou / static_cast<double>(r.n_grounded_items);
    r.m_iop = sum_iop / static_cast<double>(r.n_grounded_items);
    r.iou_at_05 = static_cast<double>(iou_hits) / static_cast<double>(r.n_grounded_items);
    r.iop_at_05 = static_cast<double>(iop_hits) / static_cast<double>(r.n_grounded_items);
  }
  if (r.n_items > 0) {
    r.acc_qa = static_cast<double>(qa) / static_cast<double>(r.n_items);
    r.acc_gqa = static_cast<double>(gqa) / static_cast<double>(r.n_items);
    r.open_acc_gqa = static_cast<double>(open_gqa) / static_cast<double>(r.n_items);
  }
  return r;
}

ErrorStats error_stats_from(const std::vector<RowScore>& rows) {
  ErrorStats e;
  double sum_abs_start = 0.0, sum_abs_end = 0.0, sum_abs_center = 0.0;
  size_t early_start = 0, late_start = 0, early_end = 0, late_end = 0;
  double pred_center = 0.0, pred_length = 0.0, gt_center = 0.0, gt_length = 0.0;
  size_t pred_at0 = 0, pred_at100 = 0, gt_at0 = 0, gt_at100 = 0;
  constexpr int kMargin = 10;  // 10% of the timeline
  for (const auto& row : rows) {
    if (!row.has_gt || !row.has_pred_seg) continue;
    ++e.n;
    const auto& p = row.pred_seg;
    const auto& g = row.gt_seg;
    if (p.start < g.start - kMargin) ++early_start;
    if (p.start > g.start + kMargin) ++late_start;
    if (p.end < g.end - kMargin) ++early_end;
    if (p.end > g.end + kMargin) ++late_end;
    sum_abs_start += std::abs(p.start - g.start);
    sum_abs_end += std::abs(p.end - g.end);
    sum_abs_center += std::abs((p.start + p.end) / 2.0 - (g.start + g.end) / 2.0);
    pred_center += (p.start + p.end) / 2.0;
    pred_length += p.length();
    gt_center += (g.start + g.end) / 2.0;
    gt_length += g.length();
    if (p.start == 0) ++pred_at0;
    if (p.end == 100) ++pred_at100;
    if (g.start == 0) ++gt_at0;
    if (g.end == 100) ++gt_at100;
  }
  if (e.n == 0) return e;
  const double n = static_cast<double>(e.n);
  e.pct_early_start = early_start / n;
  e.pct_late_start = late_start / n;
  e.pct_early_end = early_end / n;
  e.pct_late_end = late_end / n;
  e.mae_start = sum_abs_start / n;
  e.mae_end = sum_abs_end / n;
  e.mae_center = sum_abs_center / n;
  e.pred = {pred_center / n, pred_length / n, pred_at0 / n, pred_at100 / n};
  e.gt = {gt_center / n, gt_length / n, gt_at0 / n, gt_at100 / n};
  return e;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void flat_boundary(std::string& out, const std::string& prefix, const BoundaryStats& b) {
  out += prefix + ".mean_center = " + fmt2(b.mean_center) + "\n";
  out += prefix + ".mean_length = " + fmt2(b.mean_length) + "\n";
  out += prefix + ".pct_start_at_0 = " + fmt2(100.0 * b.pct_start_at_0) + "\n";
  out += prefix + ".pct_end_at_100 = " + fmt2(100.0 * b.pct_end_at_100) + "\n";
}

nlohmann::ordered_json boundary_json(const BoundaryStats& b) {
  return {{"mean_center", b.mean_center},
          {"mean_length", b.mean_length},
          {"pct_start_at_0", b.pct_start_at_0},
          {"pct_end_at_100", b.pct_end_at_100}};
}

}  // namespace

std::string MetricsReport::to_flat_text() const {
  std::string out;
  out += "n_items = " + std::to_string(n_items) + "\n";
  out += "n_grounded_items = " + std::to_string(n_grounded_items) + "\n";
  out += "judge_failures = " + std::to_string(judge_failures) + "\n";
  out += "mIoU = " + fmt2(100.0 * m_iou) + "\n";
  out += "mIoP = " + fmt2(100.0 * m_iop) + "\n";
  out += "IoU@0.5 = " + fmt2(100.0 * iou_at_05) + "\n";
  out += "IoP@0.5 = " + fmt2(100.0 * iop_at_05) + "\n";
  out += "acc_QA = " + fmt2(100.0 * acc_qa) + "\n";
  out += "acc_GQA = " + fmt2(100.0 * acc_gqa) + "\n";
  out += "open_acc_GQA = " + fmt2(100.0 * open_acc_gqa) + "\n";
  for (const auto& [bucket, miou] : by_length_bucket) {
    out += "mIoU." + bucket + " = " + fmt2(100.0 * miou) + "\n";
  }
  for (const auto& [type, sub] : by_question_type) {
    out += "type." + type + ".n_items = " + std::to_string(sub.n_items) + "\n";
    out += "type." + type + ".acc_QA = " + fmt2(100.0 * sub.acc_qa) + "\n";
    out += "type." + type + ".acc_GQA = " + fmt2(100.0 * sub.acc_gqa) + "\n";
    out += "type." + type + ".mIoU = " + fmt2(100.0 * sub.m_iou) + "\n";
    out += "type." + type + ".mIoP = " + fmt2(100.0 * sub.m_iop) + "\n";
  }
  out += "err.n = " + std::to_string(error_stats.n) + "\n";
  if (error_stats.n > 0) {
    out += "err.pct_early_start = " + fmt2(100.0 * error_stats.pct_early_start) + "\n";
    out += "err.pct_late_start = " + fmt2(100.0 * error_stats.pct_late_start) + "\n";
    out += "err.pct_early_end = " + fmt2(100.0 * error_stats.pct_early_end) + "\n";
    out += "err.pct_late_end = " + fmt2(100.0 * error_stats.pct_late_end) + "\n";
    out += "err.mae_start = " + fmt2(error_stats.mae_start) + "\n";
    out += "err.mae_end = " + fmt2(error_stats.mae_end) + "\n";
    out += "err.mae_center = " + fmt2(error_stats.mae_center) + "\n";
    flat_boundary(out, "err.pred", error_stats.pred);
    flat_boundary(out, "err.gt", error_stats.gt);
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_items"] = n_items;
  j["n_grounded_items"] = n_grounded_items;
  j["judge_failures"] = judge_failures;
  j["m_iou"] = m_iou;
  j["m_iop"] = m_iop;
  j["iou_at_05"] = iou_at_05;
  j["iop_at_05"] = iop_at_05;
  j["acc_qa"] = acc_qa;
  j["acc_gqa"] = acc_gqa;
  j["open_acc_gqa"] = open_acc_gqa;
  j["by_length_bucket"] = nlohmann::ordered_json::object();
  for (const auto& [bucket, miou] : by_length_bucket) j["by_length_bucket"][bucket] = miou;
  j["by_question_type"] = nlohmann::ordered_json::object();
  for (const auto& [type, sub] : by_question_type) {
    j["by_question_type"][type] = {{"n_items", sub.n_items},
                                   {"acc_qa", sub.acc_qa},
                                   {"acc_gqa", sub.acc_gqa},
                                   {"m_iou", sub.m_iou},
                                   {"m_iop", sub.m_iop},
                                   {"open_acc_gqa", sub.open_acc_gqa}};
  }
  j["error_stats"] = {{"n", error_stats.n},
                      {"pct_early_start", error_stats.pct_early_start},
                      {"pct_late_start", error_stats.pct_late_start},
                      {"pct_early_end", error_stats.pct_early_end},
                      {"pct_late_end", error_stats.pct_late_end},
                      {"mae_start", error_stats.mae_start},
                      {"mae_end", error_stats.mae_end},
                      {"mae_center", error_stats.mae_center},
                      {"pred", boundary_json(error_stats.pred)},
                      {"gt", boundary_json(error_stats.gt)}};
  return j.dump(2);
}

MetricsReport evaluate(const std::vector<PredictionRecord>& preds,
                       const std::vector<QAItem>& items, Judge& judge) {
  if (preds.size() != items.size()) {
    throw DomainError("evaluate: got " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(items.size()) + " items");
  }
  const auto rows = score_rows(preds, items, &judge);
  MetricsReport report = aggregate(rows);

  std::map<std::string, std::vector<RowScore>> by_type;
  for (const auto& row : rows) by_type[to_string(row.type)].push_back(row);
  for (const auto& [type, subset] : by_type) {
    report.by_question_type[type] = aggregate(subset);
  }

  std::map<std::string, std::pair<double, size_t>> bucket_sums;
  for (const auto& row : rows) {
    if (!row.has_gt) continue;
    auto& [sum, n] = bucket_sums[to_string(length_bucket(row.gt_seg))];
    sum += row.v_iou;
    ++n;
  }
  for (const auto& [bucket, sum_n] : bucket_sums) {
    report.by_length_bucket[bucket] = sum_n.first / static_cast<double>(sum_n.second);
  }

  report.error_stats = error_stats_from(rows);
  return report;
}

ErrorStats error_analysis(const std::vector<PredictionRecord>& preds,
                          const std::vector<QAItem>& items) {
  const auto rows = score_rows(preds, items, nullptr);
  ErrorStats e = error_stats_from(rows);
  if (e.n == 0) {
    throw DomainError("error_analysis: no prediction/gt segment pairs to analyze");
  }
  return e;
}

}  // namespace gvqa
