// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gvqa/data.hpp"
#include "gvqa/grounding_format.hpp"
#include "gvqa/metrics.hpp"
#include "gvqa/model.hpp"
#include "gvqa/tokenizer.hpp"
#include "gvqa/training.hpp"
#include "gvqa/weaksup.hpp"

namespace gvqa {

// Vocabulary from everything the model will ever read or write for a split:
// prompt scaffold, questions, answers, options, captions.
Tokenizer build_tokenizer(const DatasetManifest& data);

struct PipelineOptions {
  TimeRepresentation representation = TimeRepresentation::kScale100;
  bool use_template = true;
  bool frame_indices_in_prompt = false;
  int max_new_tokens = 24;
};

// Inference-side assembly: frames -> encoder -> connector -> decoder. Also
// the model view handed to the pseudo-label pipeline.
class Pipeline : public GroundedQaModel {
 public:
  Pipeline(ModelState& state, const Tokenizer& tokenizer, VisionEncoder encoder,
           const DatasetManifest& data, PipelineOptions opts);

  // Full generation for one question over one video.
  std::string generate(const VideoRecord& video, const std::string& question, OutputFormat fmt);

  std::string caption_segment(const VideoRecord& video, const TemporalSegment& seg) override;
  std::string answer_referring(const VideoRecord& video, const std::string& question) override;
  std::vector<int> timeline_fences() const override;

  // Grounded-format predictions for the split's items, in item order.
  std::vector<PredictionRecord> predict(const std::vector<QAItem>& items);

  FeatureCache& features() { return features_; }
  const PipelineOptions& options() const { return opts_; }
  const VisionEncoder& encoder() const { return encoder_; }

 private:
  std::vector<std::vector<double>> visual_for(const VideoRecord& video, bool cache_by_id);
  std::string decorate(const std::string& prompt, const VideoRecord& video) const;

  ModelState* state_;
  const Tokenizer* tokenizer_;
  VisionEncoder encoder_;
  const DatasetManifest* data_;
  PipelineOptions opts_;
  FeatureCache features_;
};

// Same predictions with each predicted segment re-placed uniformly at random,
// length preserved: the chance-placement reference for grounding quality.
std::vector<PredictionRecord> randomize_segments(const std::vector<PredictionRecord>& preds,
                                                 uint64_t seed);

// Line-delimited JSON interchange, schema-versioned header first.
void save_predictions(const std::string& path, const std::vector<PredictionRecord>& preds,
                      TimeRepresentation rep = TimeRepresentation::kScale100);
std::vector<PredictionRecord> load_predictions(const std::string& path,
                                               TimeRepresentation rep = TimeRepresentation::kScale100);

}  // namespace gvqa
