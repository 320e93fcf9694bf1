// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gvqa/core.hpp"
#include "gvqa/rng.hpp"
#include "gvqa/tokenizer.hpp"

namespace gvqa {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ConnectorConfig {
  int dense_frames = 16;
  int sparse_frames = 4;
  int feature_dim = 0;
  int hidden_channels = 64;
  int temporal_kernel = 3;
  // 0 derives the count from sparse_frames, keeping the per-branch stride
  // integral for any legal frame pair.
  int output_tokens_per_branch = 0;
  int embed_dim = 32;

  int tokens_per_branch() const {
    return output_tokens_per_branch > 0 ? output_tokens_per_branch : sparse_frames;
  }
  int dense_stride() const { return dense_frames / tokens_per_branch(); }
  int sparse_stride() const { return sparse_frames / tokens_per_branch(); }

  void validate() const;
};

struct DecoderConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  int n_layers = 2;
  int n_heads = 2;
  int mlp_hidden = 64;
  int max_seq_len = 160;

  int head_dim() const { return embed_dim / n_heads; }
  void validate() const;
};

// Which VLC branches feed the decoder. Single-scale variants exist for the
// scale ablation; they emit tokens_per_branch visual tokens instead of 2x.
enum class ConnectorMode { kMulti, kDenseOnly, kSparseOnly };

const char* to_string(ConnectorMode m);
ConnectorMode connector_mode_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class ParamGroup { kEmbedder, kConnector, kDecoder };

const char* to_string(ParamGroup g);

struct ParamEntry {
  std::string name;
  ParamGroup group = ParamGroup::kDecoder;
  std::vector<size_t> shape;
  std::vector<double> w;
  std::vector<double> g;  // gradient accumulator, same length as w

  size_t size() const { return w.size(); }
};

class ParamSet {
 public:
  ParamEntry& add(const std::string& name, ParamGroup group, std::vector<size_t> shape);
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  void zero_grads();
  size_t total_params() const;
  size_t group_params(ParamGroup g) const;

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Model state
// ---------------------------------------------------------------------------

struct ModelState {
  ConnectorConfig connector_cfg;
  DecoderConfig decoder_cfg;
  ConnectorMode connector_mode = ConnectorMode::kMulti;
  std::string preset = "desk";  // named backend preset; only "desk" is runnable
  ParamSet params;
  std::map<std::string, bool> freeze;       // group name -> frozen
  std::vector<std::string> stage_history;   // provenance tags, oldest first

  bool is_frozen(ParamGroup g) const;
  // Marks exactly the named groups trainable and freezes the rest.
  void set_trainable(const std::vector<ParamGroup>& groups);
};

// Fresh parameters, Gaussian init scaled for the small stack. The tokenizer
// fixes vocab_size.
ModelState init_model(const ConnectorConfig& ccfg, const DecoderConfig& dcfg, uint64_t seed);

// ---------------------------------------------------------------------------
// Vision encoder: a fixed random projection over raw frame vectors. Not a
// parameter group; never trained.
// ---------------------------------------------------------------------------

struct FrameFeatures {
  std::vector<std::vector<double>> values;  // [num_frames][feature_dim]
  std::vector<size_t> frame_indices;
};

class VisionEncoder {
 public:
  VisionEncoder(int in_dim, int out_dim, uint64_t seed);

  FrameFeatures encode(const FrameFeatures& raw) const;
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  uint64_t seed() const { return seed_; }

 private:
  int in_dim_;
  int out_dim_;
  uint64_t seed_;
  std::vector<double> proj_;  // [out_dim][in_dim]
};

// ---------------------------------------------------------------------------
// Frame sampling
// ---------------------------------------------------------------------------

// Evenly spaced center sampling: index_i = floor((i + 0.5) * frame_count / n).
// Returns raw frame features; run them through a VisionEncoder before the
// connector.
FrameFeatures sample_frames(const VideoRecord& video, int n);

// View of the video restricted to a [0,100] segment, ready for re-sampling.
VideoRecord crop_video(const VideoRecord& video, const TemporalSegment& seg);

// ---------------------------------------------------------------------------
// Multi-scale connector
// ---------------------------------------------------------------------------

struct BranchCache {
  std::vector<std::vector<double>> x;   // input [N][D]
  std::vector<std::vector<double>> z1;  // conv1 pre-activation [N][C]
  std::vector<std::vector<double>> a1;  // gelu(z1)
  std::vector<std::vector<double>> z2;  // strided conv pre-activation [T][C]
  std::vector<std::vector<double>> a2;
  std::vector<std::vector<double>> z3;  // conv3 pre-activation [T][C]
  std::vector<std::vector<double>> a3;
  int stride = 1;
};

struct ConnectorCache {
  BranchCache sparse;
  BranchCache dense;
  ConnectorMode mode = ConnectorMode::kMulti;
};

// Both branches evaluate the same parameter set; output rows are
// [sparse tokens || dense tokens] (single-scale modes emit one branch).
std::vector<std::vector<double>> connector_forward(const FrameFeatures& dense,
                                                   const FrameFeatures& sparse,
                                                   ConnectorMode mode,
                                                   const ConnectorConfig& cfg, ParamSet& params,
                                                   ConnectorCache* cache);

// Accumulates parameter gradients from d_tokens (one row per visual token).
void connector_backward(const ConnectorCache& cache, const ConnectorConfig& cfg,
                        const std::vector<std::vector<double>>& d_tokens, ParamSet& params);

// Interleaving recipe for splicing visual rows into the token sequence. Each
// entry is either a token id (>= 0) or -(row + 1) for connector output row
// `row`. Token k of a T-token branch covers the [k/T, (k+1)/T) slice of the
// clip, so rows are fenced by the number tokens for round(100 * k / T): the
// id before a row is its start and the id after it is its end. Grounding
// then reads positions the same way the text side does, from number tokens
// adjacent to content.
std::vector<int> visual_layout(const ConnectorConfig& cfg, ConnectorMode mode,
                               const Tokenizer& tokenizer);

// Fence values of one T-token branch: round(100 * k / T) for k in 0..T.
std::vector<int> branch_fences(int tokens_per_branch);

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

// One training sample, already tokenized. `ids` holds at most one <video>
// token; `visual` rows are spliced there, interleaved per `layout` when one
// is given (plain consecutive rows otherwise). The final `response_len`
// positions (response plus <eos>) are the supervised ones.
struct EncodedSample {
  std::vector<int> ids;
  std::vector<std::vector<double>> visual;
  std::vector<int> layout;
  size_t response_len = 0;
};

// Mean next-token cross-entropy over supervised positions. Accumulates
// parameter gradients for the embedder and decoder groups; when d_visual is
// non-null it receives the gradient w.r.t. each spliced visual row.
double decoder_loss_and_grad(const DecoderConfig& cfg, ParamSet& params,
                             const EncodedSample& sample,
                             std::vector<std::vector<double>>* d_visual);

// Loss only (no gradient pass).
double decoder_loss(const DecoderConfig& cfg, const ParamSet& params,
                    const EncodedSample& sample);

// Greedy autoregressive decoding with full recompute per generated token.
// The prompt must contain exactly one <video> id when visual rows are given
// and none otherwise. `layout` interleaves the rows as in EncodedSample.
std::string greedy_decode(const DecoderConfig& cfg, const ParamSet& params,
                          const Tokenizer& tokenizer, const std::string& prompt_text,
                          const std::vector<std::vector<double>>& visual, int max_new_tokens,
                          const std::vector<int>& layout = {});

// Mean cross-entropy of logits[i] against targets[i] over mask-selected rows.
// d_logits, when non-null, is resized and filled with the gradient.
double next_token_loss(const std::vector<std::vector<double>>& logits,
                       const std::vector<int>& targets, const std::vector<bool>& mask,
                       std::vector<std::vector<double>>* d_logits = nullptr);

}  // namespace gvqa
