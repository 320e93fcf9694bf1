// SPDX-License-Identifier: Apache-2.0
#include "gvqa/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

#include "gvqa/prompt_assets.hpp"
#include "gvqa/rng.hpp"

namespace gvqa {

Tokenizer build_tokenizer(const DatasetManifest& data) {
  std::vector<std::string> texts;
  texts.push_back(prompts::kSystem);
  texts.push_back(prompts::kCaptionQuestion);
  texts.push_back("USER: ASSISTANT: then frames in nothing happens");
  texts.push_back(format_instruction(OutputFormat::kAnswerOnly));
  texts.push_back(format_instruction(OutputFormat::kGroundingOnly));
  texts.push_back(format_instruction(OutputFormat::kAnswerWithGrounding));
  for (const auto& [vid, src] : data.videos) texts.push_back(src.caption);
  for (const QAItem& item : data.items) {
    texts.push_back(item.question);
    texts.push_back(item.gt_answer);
    if (item.options) {
      for (const std::string& opt : *item.options) texts.push_back(opt);
    }
  }
  return Tokenizer::build(texts);
}

Pipeline::Pipeline(ModelState& state, const Tokenizer& tokenizer, VisionEncoder encoder,
                   const DatasetManifest& data, PipelineOptions opts)
    : state_(&state),
      tokenizer_(&tokenizer),
      encoder_(std::move(encoder)),
      data_(&data),
      opts_(opts),
      features_(data, encoder_, state.connector_cfg) {
  if (encoder_.out_dim() != state.connector_cfg.feature_dim) {
    throw DomainError("pipeline: encoder output dim does not match connector input dim");
  }
}

std::vector<std::vector<double>> Pipeline::visual_for(const VideoRecord& video, bool cache_by_id) {
  if (cache_by_id) {
    const auto& feats = features_.get(video.video_id);
    return connector_forward(feats.first, feats.second, state_->connector_mode,
                             state_->connector_cfg, state_->params, nullptr);
  }
  const FrameFeatures dense =
      encoder_.encode(sample_frames(video, state_->connector_cfg.dense_frames));
  const FrameFeatures sparse =
      encoder_.encode(sample_frames(video, state_->connector_cfg.sparse_frames));
  return connector_forward(dense, sparse, state_->connector_mode, state_->connector_cfg,
                           state_->params, nullptr);
}

std::string Pipeline::decorate(const std::string& prompt, const VideoRecord& video) const {
  if (!opts_.frame_indices_in_prompt) return prompt;
  return insert_prompt_note(
      prompt, frame_index_note(state_->connector_cfg, state_->connector_mode,
                               video.frames.size()));
}

std::string Pipeline::generate(const VideoRecord& video, const std::string& question,
                               OutputFormat fmt) {
  PromptSpec spec;
  spec.system_text = prompts::kSystem;
  spec.question = question;
  spec.output_format = fmt;
  spec.use_template = opts_.use_template;
  const std::string prompt = decorate(render_prompt(spec), video);
  // Cache only manifest-resident full videos; crops get fresh features.
  const auto it = data_->videos.find(video.video_id);
  const bool full =
      it != data_->videos.end() &&
      video.frames.size() == static_cast<size_t>(data_->frames_per_video);
  const std::vector<std::vector<double>> visual = visual_for(video, full);
  return greedy_decode(state_->decoder_cfg, state_->params, *tokenizer_, prompt, visual,
                       opts_.max_new_tokens,
                       visual_layout(state_->connector_cfg, state_->connector_mode, *tokenizer_));
}

std::string Pipeline::caption_segment(const VideoRecord& video, const TemporalSegment& seg) {
  return generate(crop_video(video, seg), prompts::kCaptionQuestion, OutputFormat::kAnswerOnly);
}

std::vector<int> Pipeline::timeline_fences() const {
  return branch_fences(state_->connector_cfg.tokens_per_branch());
}

std::string Pipeline::answer_referring(const VideoRecord& video, const std::string& question) {
  return generate(video, question, OutputFormat::kAnswerOnly);
}

std::vector<PredictionRecord> Pipeline::predict(const std::vector<QAItem>& items) {
  std::vector<PredictionRecord> out;
  out.reserve(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    const VideoRecord video = load_video(*data_, items[i].video_id);
    const std::string text =
        generate(video, items[i].question, OutputFormat::kAnswerWithGrounding);
    PredictionRecord rec;
    rec.qa_item_ref = i;
    rec.video_id = items[i].video_id;
    rec.grounded = parse_response(text, opts_.representation);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PredictionRecord> randomize_segments(const std::vector<PredictionRecord>& preds,
                                                 uint64_t seed) {
  Rng rng(seed);
  std::vector<PredictionRecord> out = preds;
  for (PredictionRecord& rec : out) {
    if (!rec.grounded.segment) continue;
    const int len = rec.grounded.segment->end - rec.grounded.segment->start;
    const int start = rng.uniform_int(0, 100 - len);
    rec.grounded.segment = TemporalSegment{start, start + len};
  }
  return out;
}

namespace {

constexpr int kPredictionSchemaVersion = 1;

ParseStatus parse_status_from_string(const std::string& s) {
  if (s == "ok") return ParseStatus::kOk;
  if (s == "answer_only") return ParseStatus::kAnswerOnly;
  if (s == "malformed") return ParseStatus::kMalformed;
  throw DomainError("unknown parse status: " + s);
}

}  // namespace

void save_predictions(const std::string& path, const std::vector<PredictionRecord>& preds,
                      TimeRepresentation rep) {
  (void)rep;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open predictions file for writing: " + path);
  nlohmann::ordered_json header;
  header["schema_version"] = kPredictionSchemaVersion;
  header["kind"] = "predictions";
  header["count"] = preds.size();
  out << header.dump() << "\n";
  for (const PredictionRecord& rec : preds) {
    nlohmann::ordered_json j;
    j["qa_item_ref"] = rec.qa_item_ref;
    j["video_id"] = rec.video_id;
    j["answer"] = rec.grounded.answer;
    if (rec.grounded.segment) {
      j["segment"] = {rec.grounded.segment->start, rec.grounded.segment->end};
    }
    j["parse_status"] = to_string(rec.grounded.parse_status);
    if (rec.chosen_option_index) j["chosen_option_index"] = *rec.chosen_option_index;
    if (rec.open_verdict) {
      j["open_match"] = rec.open_verdict->match;
      if (rec.open_verdict->score) j["open_score"] = *rec.open_verdict->score;
    }
    out << j.dump() << "\n";
  }
  if (!out) throw DomainError("write failed: " + path);
}

std::vector<PredictionRecord> load_predictions(const std::string& path, TimeRepresentation rep) {
  (void)rep;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open predictions file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DomainError("predictions file is empty: " + path);
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("kind", std::string()) != "predictions") {
    throw DomainError("not a predictions file: " + path);
  }
  if (header.value("schema_version", 0) != kPredictionSchemaVersion) {
    throw DomainError("unsupported predictions schema version in " + path);
  }
  std::vector<PredictionRecord> preds;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DomainError(path + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      PredictionRecord rec;
      rec.qa_item_ref = j.at("qa_item_ref").get<size_t>();
      rec.video_id = j.at("video_id").get<std::string>();
      rec.grounded.answer = j.at("answer").get<std::string>();
      if (j.contains("segment")) {
        const auto& seg = j.at("segment");
        if (!seg.is_array() || seg.size() != 2) {
          throw DomainError("segment must be [start, end]");
        }
        rec.grounded.segment = TemporalSegment{seg[0].get<int>(), seg[1].get<int>()};
      }
      rec.grounded.parse_status =
          parse_status_from_string(j.at("parse_status").get<std::string>());
      if (j.contains("chosen_option_index")) {
        rec.chosen_option_index = j.at("chosen_option_index").get<int>();
      }
      if (j.contains("open_match")) {
        JudgeVerdict verdict;
        verdict.match = j.at("open_match").get<bool>();
        if (j.contains("open_score")) verdict.score = j.at("open_score").get<int>();
        rec.open_verdict = verdict;
      }
      preds.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw DomainError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return preds;
}

}  // namespace gvqa
