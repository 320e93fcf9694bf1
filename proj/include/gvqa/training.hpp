// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gvqa/core.hpp"
#include "gvqa/data.hpp"
#include "gvqa/grounding_format.hpp"
#include "gvqa/model.hpp"
#include "gvqa/weaksup.hpp"

namespace gvqa {

// Raised when a stage must stop (non-finite loss). Parameters are restored to
// the last state that produced a finite loss before this is thrown.
struct TrainingError : DomainError {
  using DomainError::DomainError;
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

// kTextPretrain gives the decoder its language behavior before any video is
// seen; the later stages follow the connector-first curriculum.
enum class Stage { kTextPretrain, kAlign, kGround, kConsist };

const char* to_string(Stage s);

struct StageConfig {
  Stage stage = Stage::kAlign;
  double learning_rate = 0.0;  // peak; scheduled by warmup + cosine
  int batch_size = 0;
  int epochs = 1;
  double warmup_ratio = 0.03;
  std::string schedule = "cosine";
  double weight_decay = 0.0;
  int max_sequence_length = 2048;
  uint64_t seed = 1;
  // When non-empty, inserted after the <video> token of every video-backed
  // prompt (the frame-indices-in-prompt ablation).
  std::string prompt_note;

  // Fixed per stage: text pretraining touches embedder and decoder, alignment
  // only the connector, grounding stages connector and decoder.
  std::vector<ParamGroup> trainable() const;
  void validate() const;

  // Reference hyperparameters for the full-scale backend (not runnable here).
  static StageConfig full_scale(Stage s);
  // Desk preset sized for the synthetic corpus; same learning-rate ratio
  // between alignment and grounding stages as the full-scale recipe.
  static StageConfig desk(Stage s);
};

// ---------------------------------------------------------------------------
// Optimizer: AdamW with decoupled weight decay and a closed-form
// warmup-then-cosine schedule. Frozen groups are skipped entirely, moments
// included, so freezing is bit-exact.
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int total_steps = 1;
  double warmup_ratio = 0.03;
};

// Learning rate at a zero-based step index: linear warmup to peak_lr over
// max(1, round(warmup_ratio * total_steps)) steps, then cosine decay to zero.
double lr_at(const OptimizerConfig& cfg, int step);

class AdamW {
 public:
  AdamW(const ParamSet& params, OptimizerConfig cfg);

  // Applies one update from the accumulated gradients; does not clear them.
  void step(ModelState& state);

  int steps_taken() const { return t_; }
  double last_lr() const { return last_lr_; }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
  double last_lr_ = 0.0;
};

// ---------------------------------------------------------------------------
// Stage runner
// ---------------------------------------------------------------------------

// One prompt/target pair. video_id empty means a text-only sample.
struct TrainSample {
  std::string video_id;
  std::string prompt_text;
  std::string target_text;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::string stage;
  double wall_s = 0.0;
};

using TrainLog = std::vector<TrainLogEntry>;

void save_train_log(const std::string& path, const TrainLog& log);

// Sampled and vision-encoded frames per video, computed once. The encoder is
// fixed, so entries stay valid for a whole run.
class FeatureCache {
 public:
  FeatureCache(const DatasetManifest& data, const VisionEncoder& encoder,
               const ConnectorConfig& cfg);

  const std::pair<FrameFeatures, FrameFeatures>& get(const std::string& video_id);  // dense, sparse

 private:
  const DatasetManifest* data_;
  const VisionEncoder* encoder_;
  ConnectorConfig cfg_;
  std::map<std::string, std::pair<FrameFeatures, FrameFeatures>> cache_;
};

struct StageResult {
  double final_loss = 0.0;
  int steps = 0;
  TrainLog log;
};

// Runs one stage over the samples: shuffled epochs, mean-of-batch gradients,
// AdamW update per batch. Sets the stage's freeze mask, appends its tag to
// stage_history on success, and restores the last finite-loss parameters
// before raising TrainingError on a non-finite batch loss. Runs under a
// TrainingPhaseGuard.
StageResult run_stage(ModelState& state, const StageConfig& cfg,
                      const std::vector<TrainSample>& samples, const Tokenizer& tokenizer,
                      FeatureCache& features);

// True when `tag` appears in the state's stage history.
bool has_stage(const ModelState& state, const std::string& tag);

// Timeline positions of the frames the active branch samples, rendered as
// "frames [3, 9, ...]".
std::string frame_index_note(const ConnectorConfig& cfg, ConnectorMode mode, size_t frame_count);

// Returns the prompt with the note inserted right after its <video> token;
// prompts without one come back unchanged.
std::string insert_prompt_note(const std::string& prompt, const std::string& note);

// ---------------------------------------------------------------------------
// Sample builders
// ---------------------------------------------------------------------------

// Text-only curriculum built from fence worlds: contexts that interleave
// timeline numbers with event words, the shape visual rows take in the
// decoder input. Captioning, QA, referring extraction, and grounded emission
// are all posed over such contexts, so locating content always means reading
// between fences and grounding always means copying the adjacent numbers.
std::vector<TrainSample> make_text_pretrain_samples(const DatasetManifest& data, uint64_t seed,
                                                    TimeRepresentation rep, bool use_template);

// Caption and answer-only QA prompts over full videos; no temporal content.
std::vector<TrainSample> make_align_samples(const DatasetManifest& data, bool use_template);

// Referring and grounded-answer pairs from pseudo labels (unfiltered), plus
// fence-world replay drawn from the split's captions.
std::vector<TrainSample> make_ground_samples(const std::vector<PseudoLabel>& labels,
                                             const DatasetManifest& data, uint64_t seed,
                                             TimeRepresentation rep, bool use_template);

// Same pair construction over accepted labels only, optionally mixed with the
// split's answer-only QA prompts.
std::vector<TrainSample> make_consist_samples(const DatasetManifest& data,
                                              const std::vector<PseudoLabel>& accepted,
                                              uint64_t seed, TimeRepresentation rep,
                                              bool use_template, bool mix_qa);

// ---------------------------------------------------------------------------
// Stage wrappers: enforce ordering via stage history tags, then delegate to
// run_stage. Tags: "text_pretrain", "align", "ground", "consist".
// ---------------------------------------------------------------------------

StageResult run_text_pretrain(ModelState& state, const StageConfig& cfg,
                              const DatasetManifest& data, const Tokenizer& tokenizer,
                              FeatureCache& features, TimeRepresentation rep, bool use_template);

StageResult run_align(ModelState& state, const StageConfig& cfg, const DatasetManifest& data,
                      const Tokenizer& tokenizer, FeatureCache& features, bool use_template);

StageResult run_ground(ModelState& state, const StageConfig& cfg, const DatasetManifest& data,
                       const std::vector<PseudoLabel>& labels, const Tokenizer& tokenizer,
                       FeatureCache& features, TimeRepresentation rep, bool use_template);

StageResult run_consist(ModelState& state, const StageConfig& cfg, const DatasetManifest& data,
                        const std::vector<PseudoLabel>& accepted, const Tokenizer& tokenizer,
                        FeatureCache& features, TimeRepresentation rep, bool use_template,
                        bool mix_qa);

}  // namespace gvqa
