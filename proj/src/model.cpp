// SPDX-License-Identifier: Apache-2.0
#include "gvqa/model.hpp"

#include <algorithm>
#include <cmath>

#include "gvqa/tensor.hpp"

namespace gvqa {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void ConnectorConfig::validate() const {
  if (dense_frames < 1 || sparse_frames < 1) {
    throw DomainError("ConnectorConfig: frame counts must be positive");
  }
  if (sparse_frames > dense_frames) {
    throw DomainError("ConnectorConfig: sparse_frames must be <= dense_frames");
  }
  if (dense_frames % sparse_frames != 0) {
    throw DomainError("ConnectorConfig: dense_frames must be divisible by sparse_frames");
  }
  if (feature_dim < 1) throw DomainError("ConnectorConfig: feature_dim must be positive");
  if (hidden_channels < 1) throw DomainError("ConnectorConfig: hidden_channels must be positive");
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
    throw DomainError("ConnectorConfig: temporal_kernel must be a positive odd integer");
  }
  if (embed_dim < 1) throw DomainError("ConnectorConfig: embed_dim must be positive");
  const int t = tokens_per_branch();
  if (t < 1) throw DomainError("ConnectorConfig: output_tokens_per_branch must be positive");
  if (dense_frames % t != 0 || sparse_frames % t != 0) {
    throw DomainError(
        "ConnectorConfig: both frame counts must be divisible by output_tokens_per_branch");
  }
}

void DecoderConfig::validate() const {
  if (vocab_size < 8) throw DomainError("DecoderConfig: vocab_size too small");
  if (embed_dim < 1 || n_layers < 1 || n_heads < 1 || mlp_hidden < 1 || max_seq_len < 4) {
    throw DomainError("DecoderConfig: dimensions must be positive");
  }
  if (embed_dim % n_heads != 0) {
    throw DomainError("DecoderConfig: embed_dim must be divisible by n_heads");
  }
}

const char* to_string(ConnectorMode m) {
  switch (m) {
    case ConnectorMode::kMulti: return "multi";
    case ConnectorMode::kDenseOnly: return "dense_only";
    case ConnectorMode::kSparseOnly: return "sparse_only";
  }
  return "multi";
}

ConnectorMode connector_mode_from_string(const std::string& s) {
  if (s == "multi") return ConnectorMode::kMulti;
  if (s == "dense_only" || s == "dense") return ConnectorMode::kDenseOnly;
  if (s == "sparse_only" || s == "sparse") return ConnectorMode::kSparseOnly;
  throw DomainError("unknown connector mode: " + s);
}

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEmbedder: return "embedder";
    case ParamGroup::kConnector: return "connector";
    case ParamGroup::kDecoder: return "decoder";
  }
  return "decoder";
}

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

ParamEntry& ParamSet::add(const std::string& name, ParamGroup group,
                          std::vector<size_t> shape) {
  if (index_.count(name)) throw DomainError("ParamSet: duplicate parameter " + name);
  size_t n = 1;
  for (size_t d : shape) n *= d;
  ParamEntry e;
  e.name = name;
  e.group = group;
  e.shape = std::move(shape);
  e.w.assign(n, 0.0);
  e.g.assign(n, 0.0);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back();
}

ParamEntry& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("ParamSet: unknown parameter " + name);
  return entries_[it->second];
}

const ParamEntry& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DomainError("ParamSet: unknown parameter " + name);
  return entries_[it->second];
}

bool ParamSet::has(const std::string& name) const { return index_.count(name) > 0; }

void ParamSet::zero_grads() {
  for (auto& e : entries_) std::fill(e.g.begin(), e.g.end(), 0.0);
}

size_t ParamSet::total_params() const {
  size_t n = 0;
  for (const auto& e : entries_) n += e.size();
  return n;
}

size_t ParamSet::group_params(ParamGroup g) const {
  size_t n = 0;
  for (const auto& e : entries_) {
    if (e.group == g) n += e.size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// ModelState
// ---------------------------------------------------------------------------

bool ModelState::is_frozen(ParamGroup g) const {
  auto it = freeze.find(to_string(g));
  return it != freeze.end() && it->second;
}

void ModelState::set_trainable(const std::vector<ParamGroup>& groups) {
  freeze[to_string(ParamGroup::kEmbedder)] = true;
  freeze[to_string(ParamGroup::kConnector)] = true;
  freeze[to_string(ParamGroup::kDecoder)] = true;
  for (ParamGroup g : groups) freeze[to_string(g)] = false;
}

namespace {

void gaussian_fill(std::vector<double>& w, double std_dev, Rng& rng) {
  for (double& v : w) v = rng.gauss(0.0, std_dev);
}

}  // namespace

ModelState init_model(const ConnectorConfig& ccfg, const DecoderConfig& dcfg, uint64_t seed) {
  ccfg.validate();
  dcfg.validate();
  if (ccfg.embed_dim != dcfg.embed_dim) {
    throw DomainError("init_model: connector and decoder embed_dim must agree");
  }

  ModelState state;
  state.connector_cfg = ccfg;
  state.decoder_cfg = dcfg;
  Rng rng(seed);

  const size_t V = static_cast<size_t>(dcfg.vocab_size);
  const size_t E = static_cast<size_t>(dcfg.embed_dim);
  const size_t M = static_cast<size_t>(dcfg.mlp_hidden);
  const size_t Lmax = static_cast<size_t>(dcfg.max_seq_len);
  const size_t D = static_cast<size_t>(ccfg.feature_dim);
  const size_t C = static_cast<size_t>(ccfg.hidden_channels);
  const size_t K = static_cast<size_t>(ccfg.temporal_kernel);

  auto fill = [&rng](ParamEntry& e, double std_dev) { gaussian_fill(e.w, std_dev, rng); };

  fill(state.params.add("emb.tok", ParamGroup::kEmbedder, {V, E}), 0.1);
  fill(state.params.add("emb.pos", ParamGroup::kEmbedder, {Lmax, E}), 0.1);

  fill(state.params.add("conn.w1", ParamGroup::kConnector, {C, D, 3}),
       1.0 / std::sqrt(static_cast<double>(D * 3)));
  state.params.add("conn.b1", ParamGroup::kConnector, {C});
  fill(state.params.add("conn.w2", ParamGroup::kConnector, {C, C, K}),
       1.0 / std::sqrt(static_cast<double>(C * K)));
  state.params.add("conn.b2", ParamGroup::kConnector, {C});
  fill(state.params.add("conn.w3", ParamGroup::kConnector, {C, C, 3}),
       1.0 / std::sqrt(static_cast<double>(C * 3)));
  state.params.add("conn.b3", ParamGroup::kConnector, {C});
  fill(state.params.add("conn.proj_w", ParamGroup::kConnector, {E, C}),
       1.0 / std::sqrt(static_cast<double>(C)));
  state.params.add("conn.proj_b", ParamGroup::kConnector, {E});

  const double we = 1.0 / std::sqrt(static_cast<double>(E));
  const double resid_scale = 1.0 / std::sqrt(2.0 * dcfg.n_layers);
  for (int l = 0; l < dcfg.n_layers; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    auto& ln1g = state.params.add(p + "ln1.g", ParamGroup::kDecoder, {E});
    std::fill(ln1g.w.begin(), ln1g.w.end(), 1.0);
    state.params.add(p + "ln1.b", ParamGroup::kDecoder, {E});
    fill(state.params.add(p + "wq", ParamGroup::kDecoder, {E, E}), we);
    fill(state.params.add(p + "wk", ParamGroup::kDecoder, {E, E}), we);
    fill(state.params.add(p + "wv", ParamGroup::kDecoder, {E, E}), we);
    fill(state.params.add(p + "wo", ParamGroup::kDecoder, {E, E}), we * resid_scale);
    auto& ln2g = state.params.add(p + "ln2.g", ParamGroup::kDecoder, {E});
    std::fill(ln2g.w.begin(), ln2g.w.end(), 1.0);
    state.params.add(p + "ln2.b", ParamGroup::kDecoder, {E});
    fill(state.params.add(p + "mlp.w1", ParamGroup::kDecoder, {M, E}), we);
    fill(state.params.add(p + "mlp.w2", ParamGroup::kDecoder, {E, M}),
         resid_scale / std::sqrt(static_cast<double>(M)));
  }
  auto& lnfg = state.params.add("dec.lnf.g", ParamGroup::kDecoder, {E});
  std::fill(lnfg.w.begin(), lnfg.w.end(), 1.0);
  state.params.add("dec.lnf.b", ParamGroup::kDecoder, {E});
  fill(state.params.add("dec.head", ParamGroup::kDecoder, {V, E}), we);

  state.freeze[to_string(ParamGroup::kEmbedder)] = false;
  state.freeze[to_string(ParamGroup::kConnector)] = false;
  state.freeze[to_string(ParamGroup::kDecoder)] = false;
  return state;
}

// ---------------------------------------------------------------------------
// Vision encoder and frame sampling
// ---------------------------------------------------------------------------

VisionEncoder::VisionEncoder(int in_dim, int out_dim, uint64_t seed)
    : in_dim_(in_dim), out_dim_(out_dim), seed_(seed) {
  if (in_dim < 1 || out_dim < 1) throw DomainError("VisionEncoder: dims must be positive");
  Rng rng(seed);
  proj_.resize(static_cast<size_t>(out_dim) * static_cast<size_t>(in_dim));
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& v : proj_) v = rng.gauss(0.0, scale);
}

FrameFeatures VisionEncoder::encode(const FrameFeatures& raw) const {
  FrameFeatures out;
  out.frame_indices = raw.frame_indices;
  out.values.reserve(raw.values.size());
  for (const auto& row : raw.values) {
    if (static_cast<int>(row.size()) != in_dim_) {
      throw DomainError("VisionEncoder: frame feature dim mismatch");
    }
    std::vector<double> enc(static_cast<size_t>(out_dim_), 0.0);
    for (int o = 0; o < out_dim_; ++o) {
      const double* pr = proj_.data() + static_cast<size_t>(o) * static_cast<size_t>(in_dim_);
      double acc = 0.0;
      for (int i = 0; i < in_dim_; ++i) acc += pr[i] * row[static_cast<size_t>(i)];
      enc[static_cast<size_t>(o)] = std::tanh(acc);
    }
    out.values.push_back(std::move(enc));
  }
  return out;
}

FrameFeatures sample_frames(const VideoRecord& video, int n) {
  if (n < 1) throw DomainError("sample_frames: n must be >= 1");
  if (video.frame_count() == 0) throw DomainError("sample_frames: video has no frames");
  FrameFeatures f;
  const size_t fc = video.frame_count();
  for (int i = 0; i < n; ++i) {
    const size_t idx = static_cast<size_t>(
        std::floor((i + 0.5) * static_cast<double>(fc) / static_cast<double>(n)));
    const size_t clamped = std::min(idx, fc - 1);
    f.frame_indices.push_back(clamped);
    const auto& src = video.frames[clamped];
    f.values.emplace_back(src.begin(), src.end());
  }
  return f;
}

VideoRecord crop_video(const VideoRecord& video, const TemporalSegment& seg) {
  if (video.frame_count() == 0) throw DomainError("crop_video: video has no frames");
  const double fc = static_cast<double>(video.frame_count());
  size_t lo = static_cast<size_t>(std::floor(seg.start * fc / 100.0));
  size_t hi = static_cast<size_t>(std::ceil(seg.end * fc / 100.0));
  if (lo >= video.frame_count()) lo = video.frame_count() - 1;
  if (hi <= lo) hi = lo + 1;
  if (hi > video.frame_count()) hi = video.frame_count();
  VideoRecord out;
  out.video_id = video.video_id;
  out.duration_seconds = video.duration_seconds * (seg.length() > 0 ? seg.length() : 1) / 100.0;
  out.frames.assign(video.frames.begin() + static_cast<long>(lo),
                    video.frames.begin() + static_cast<long>(hi));
  return out;
}

// ---------------------------------------------------------------------------
// Connector branches
// ---------------------------------------------------------------------------

namespace {

// Temporal conv, stride 1, "same" zero padding. W is [Cout][Cin][k].
void conv_same(const std::vector<std::vector<double>>& x, const double* W, const double* b,
               int cin, int cout, int k, std::vector<std::vector<double>>& z) {
  const int n = static_cast<int>(x.size());
  const int half = (k - 1) / 2;
  z.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(cout), 0.0));
  for (int t = 0; t < n; ++t) {
    for (int c = 0; c < cout; ++c) {
      double acc = b[c];
      for (int j = 0; j < k; ++j) {
        const int src = t + j - half;
        if (src < 0 || src >= n) continue;
        const double* wr = W + (static_cast<size_t>(c) * cin) * k;
        const auto& xr = x[static_cast<size_t>(src)];
        for (int ci = 0; ci < cin; ++ci) acc += wr[static_cast<size_t>(ci) * k + j] * xr[ci];
      }
      z[static_cast<size_t>(t)][static_cast<size_t>(c)] = acc;
    }
  }
}

// Strided temporal conv, "same" zero padding; output length floor((n-1)/s)+1.
void conv_strided(const std::vector<std::vector<double>>& x, const double* W, const double* b,
                  int cin, int cout, int k, int stride, std::vector<std::vector<double>>& z) {
  const int n = static_cast<int>(x.size());
  const int half = (k - 1) / 2;
  const int out_len = (n - 1) / stride + 1;
  z.assign(static_cast<size_t>(out_len), std::vector<double>(static_cast<size_t>(cout), 0.0));
  for (int o = 0; o < out_len; ++o) {
    const int center = o * stride;
    for (int c = 0; c < cout; ++c) {
      double acc = b[c];
      for (int j = 0; j < k; ++j) {
        const int src = center + j - half;
        if (src < 0 || src >= n) continue;
        const double* wr = W + (static_cast<size_t>(c) * cin) * k;
        const auto& xr = x[static_cast<size_t>(src)];
        for (int ci = 0; ci < cin; ++ci) acc += wr[static_cast<size_t>(ci) * k + j] * xr[ci];
      }
      z[static_cast<size_t>(o)][static_cast<size_t>(c)] = acc;
    }
  }
}

void gelu_rows(const std::vector<std::vector<double>>& z, std::vector<std::vector<double>>& a) {
  a = z;
  for (auto& row : a) {
    for (double& v : row) v = gelu(v);
  }
}

// d_a -> d_z through elementwise GELU using cached pre-activations.
void gelu_rows_backward(const std::vector<std::vector<double>>& z,
                        std::vector<std::vector<double>>& d) {
  for (size_t t = 0; t < d.size(); ++t) {
    for (size_t c = 0; c < d[t].size(); ++c) d[t][c] *= gelu_grad(z[t][c]);
  }
}

// Weight/bias/input grads for conv_same. d_x may be null when the input is
// not differentiable (raw frame features).
void conv_same_backward(const std::vector<std::vector<double>>& x, const double* W, int cin,
                        int cout, int k, const std::vector<std::vector<double>>& d_z, double* dW,
                        double* db, std::vector<std::vector<double>>* d_x) {
  const int n = static_cast<int>(x.size());
  const int half = (k - 1) / 2;
  for (int t = 0; t < n; ++t) {
    for (int c = 0; c < cout; ++c) {
      const double g = d_z[static_cast<size_t>(t)][static_cast<size_t>(c)];
      if (g == 0.0) continue;
      db[c] += g;
      for (int j = 0; j < k; ++j) {
        const int src = t + j - half;
        if (src < 0 || src >= n) continue;
        double* dwr = dW + (static_cast<size_t>(c) * cin) * k;
        const double* wr = W + (static_cast<size_t>(c) * cin) * k;
        const auto& xr = x[static_cast<size_t>(src)];
        if (d_x) {
          auto& dxr = (*d_x)[static_cast<size_t>(src)];
          for (int ci = 0; ci < cin; ++ci) {
            dwr[static_cast<size_t>(ci) * k + j] += g * xr[ci];
            dxr[static_cast<size_t>(ci)] += g * wr[static_cast<size_t>(ci) * k + j];
          }
        } else {
          for (int ci = 0; ci < cin; ++ci) dwr[static_cast<size_t>(ci) * k + j] += g * xr[ci];
        }
      }
    }
  }
}

void conv_strided_backward(const std::vector<std::vector<double>>& x, const double* W, int cin,
                           int cout, int k, int stride,
                           const std::vector<std::vector<double>>& d_z, double* dW, double* db,
                           std::vector<std::vector<double>>* d_x) {
  const int n = static_cast<int>(x.size());
  const int half = (k - 1) / 2;
  const int out_len = static_cast<int>(d_z.size());
  for (int o = 0; o < out_len; ++o) {
    const int center = o * stride;
    for (int c = 0; c < cout; ++c) {
      const double g = d_z[static_cast<size_t>(o)][static_cast<size_t>(c)];
      if (g == 0.0) continue;
      db[c] += g;
      for (int j = 0; j < k; ++j) {
        const int src = center + j - half;
        if (src < 0 || src >= n) continue;
        double* dwr = dW + (static_cast<size_t>(c) * cin) * k;
        const double* wr = W + (static_cast<size_t>(c) * cin) * k;
        const auto& xr = x[static_cast<size_t>(src)];
        if (d_x) {
          auto& dxr = (*d_x)[static_cast<size_t>(src)];
          for (int ci = 0; ci < cin; ++ci) {
            dwr[static_cast<size_t>(ci) * k + j] += g * xr[ci];
            dxr[static_cast<size_t>(ci)] += g * wr[static_cast<size_t>(ci) * k + j];
          }
        } else {
          for (int ci = 0; ci < cin; ++ci) dwr[static_cast<size_t>(ci) * k + j] += g * xr[ci];
        }
      }
    }
  }
}

std::vector<std::vector<double>> branch_forward(const FrameFeatures& frames, int stride,
                                                const ConnectorConfig& cfg, ParamSet& params,
                                                BranchCache* cache) {
  const int D = cfg.feature_dim;
  const int C = cfg.hidden_channels;
  const int E = cfg.embed_dim;
  const int K = cfg.temporal_kernel;
  for (const auto& row : frames.values) {
    if (static_cast<int>(row.size()) != D) {
      throw DomainError("connector: frame feature dim mismatch");
    }
  }

  BranchCache local;
  BranchCache& c = cache ? *cache : local;
  c.stride = stride;
  c.x = frames.values;

  conv_same(c.x, params.at("conn.w1").w.data(), params.at("conn.b1").w.data(), D, C, 3, c.z1);
  gelu_rows(c.z1, c.a1);
  conv_strided(c.a1, params.at("conn.w2").w.data(), params.at("conn.b2").w.data(), C, C, K,
               stride, c.z2);
  gelu_rows(c.z2, c.a2);
  conv_same(c.a2, params.at("conn.w3").w.data(), params.at("conn.b3").w.data(), C, C, 3, c.z3);
  gelu_rows(c.z3, c.a3);

  const auto& pw = params.at("conn.proj_w").w;
  const auto& pb = params.at("conn.proj_b").w;
  std::vector<std::vector<double>> tokens(c.a3.size(),
                                          std::vector<double>(static_cast<size_t>(E), 0.0));
  for (size_t t = 0; t < c.a3.size(); ++t) {
    for (int e = 0; e < E; ++e) {
      const double* wr = pw.data() + static_cast<size_t>(e) * static_cast<size_t>(C);
      double acc = pb[static_cast<size_t>(e)];
      for (int ch = 0; ch < C; ++ch) acc += wr[ch] * c.a3[t][static_cast<size_t>(ch)];
      tokens[t][static_cast<size_t>(e)] = acc;
    }
  }
  return tokens;
}

void branch_backward(const BranchCache& c, const ConnectorConfig& cfg,
                     const std::vector<std::vector<double>>& d_tokens, ParamSet& params) {
  const int D = cfg.feature_dim;
  const int C = cfg.hidden_channels;
  const int E = cfg.embed_dim;
  const int K = cfg.temporal_kernel;

  // Projection backward.
  auto& pw = params.at("conn.proj_w");
  auto& pb = params.at("conn.proj_b");
  std::vector<std::vector<double>> d_a3(c.a3.size(),
                                        std::vector<double>(static_cast<size_t>(C), 0.0));
  for (size_t t = 0; t < c.a3.size(); ++t) {
    for (int e = 0; e < E; ++e) {
      const double g = d_tokens[t][static_cast<size_t>(e)];
      if (g == 0.0) continue;
      pb.g[static_cast<size_t>(e)] += g;
      double* dwr = pw.g.data() + static_cast<size_t>(e) * static_cast<size_t>(C);
      const double* wr = pw.w.data() + static_cast<size_t>(e) * static_cast<size_t>(C);
      for (int ch = 0; ch < C; ++ch) {
        dwr[ch] += g * c.a3[t][static_cast<size_t>(ch)];
        d_a3[t][static_cast<size_t>(ch)] += g * wr[ch];
      }
    }
  }

  gelu_rows_backward(c.z3, d_a3);  // now d_z3
  std::vector<std::vector<double>> d_a2(c.a2.size(),
                                        std::vector<double>(static_cast<size_t>(C), 0.0));
  conv_same_backward(c.a2, params.at("conn.w3").w.data(), C, C, 3, d_a3,
                     params.at("conn.w3").g.data(), params.at("conn.b3").g.data(), &d_a2);

  gelu_rows_backward(c.z2, d_a2);  // now d_z2
  std::vector<std::vector<double>> d_a1(c.a1.size(),
                                        std::vector<double>(static_cast<size_t>(C), 0.0));
  conv_strided_backward(c.a1, params.at("conn.w2").w.data(), C, C, K, c.stride, d_a2,
                        params.at("conn.w2").g.data(), params.at("conn.b2").g.data(), &d_a1);

  gelu_rows_backward(c.z1, d_a1);  // now d_z1
  conv_same_backward(c.x, params.at("conn.w1").w.data(), D, C, 3, d_a1,
                     params.at("conn.w1").g.data(), params.at("conn.b1").g.data(), nullptr);
}

}  // namespace

std::vector<std::vector<double>> connector_forward(const FrameFeatures& dense,
                                                   const FrameFeatures& sparse,
                                                   ConnectorMode mode,
                                                   const ConnectorConfig& cfg, ParamSet& params,
                                                   ConnectorCache* cache) {
  cfg.validate();
  if (mode != ConnectorMode::kSparseOnly &&
      static_cast<int>(dense.values.size()) != cfg.dense_frames) {
    throw DomainError("connector: dense branch expects " + std::to_string(cfg.dense_frames) +
                      " frames, got " + std::to_string(dense.values.size()));
  }
  if (mode != ConnectorMode::kDenseOnly &&
      static_cast<int>(sparse.values.size()) != cfg.sparse_frames) {
    throw DomainError("connector: sparse branch expects " + std::to_string(cfg.sparse_frames) +
                      " frames, got " + std::to_string(sparse.values.size()));
  }
  if (cache) cache->mode = mode;

  std::vector<std::vector<double>> out;
  if (mode != ConnectorMode::kDenseOnly) {
    auto s = branch_forward(sparse, cfg.sparse_stride(), cfg, params,
                            cache ? &cache->sparse : nullptr);
    out.insert(out.end(), s.begin(), s.end());
  }
  if (mode != ConnectorMode::kSparseOnly) {
    auto d = branch_forward(dense, cfg.dense_stride(), cfg, params,
                            cache ? &cache->dense : nullptr);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void connector_backward(const ConnectorCache& cache, const ConnectorConfig& cfg,
                        const std::vector<std::vector<double>>& d_tokens, ParamSet& params) {
  const size_t t = static_cast<size_t>(cfg.tokens_per_branch());
  if (cache.mode == ConnectorMode::kMulti) {
    if (d_tokens.size() != 2 * t) throw DomainError("connector_backward: token count mismatch");
    std::vector<std::vector<double>> ds(d_tokens.begin(), d_tokens.begin() + static_cast<long>(t));
    std::vector<std::vector<double>> dd(d_tokens.begin() + static_cast<long>(t), d_tokens.end());
    branch_backward(cache.sparse, cfg, ds, params);
    branch_backward(cache.dense, cfg, dd, params);
  } else if (cache.mode == ConnectorMode::kSparseOnly) {
    if (d_tokens.size() != t) throw DomainError("connector_backward: token count mismatch");
    branch_backward(cache.sparse, cfg, d_tokens, params);
  } else {
    if (d_tokens.size() != t) throw DomainError("connector_backward: token count mismatch");
    branch_backward(cache.dense, cfg, d_tokens, params);
  }
}

std::vector<int> branch_fences(int tokens_per_branch) {
  std::vector<int> out(static_cast<size_t>(tokens_per_branch) + 1);
  for (int k = 0; k <= tokens_per_branch; ++k) {
    out[static_cast<size_t>(k)] =
        static_cast<int>(std::llround(100.0 * k / tokens_per_branch));
  }
  return out;
}

std::vector<int> visual_layout(const ConnectorConfig& cfg, ConnectorMode mode,
                               const Tokenizer& tokenizer) {
  const int t = cfg.tokens_per_branch();
  const std::vector<int> fences = branch_fences(t);
  std::vector<int> fence_ids;
  fence_ids.reserve(fences.size());
  for (int f : fences) {
    const int id = tokenizer.id_of(std::to_string(f));
    if (id == Tokenizer::kUnk) {
      throw DomainError("visual_layout: vocabulary lacks timeline numbers");
    }
    fence_ids.push_back(id);
  }
  const int branches = mode == ConnectorMode::kMulti ? 2 : 1;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(branches) * (2 * static_cast<size_t>(t) + 1));
  int row = 0;
  for (int b = 0; b < branches; ++b) {
    for (int k = 0; k < t; ++k) {
      out.push_back(fence_ids[static_cast<size_t>(k)]);
      out.push_back(-(row++) - 1);
    }
    out.push_back(fence_ids[static_cast<size_t>(t)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

namespace {

struct LayerCache {
  std::vector<double> x_in;     // [L][E] layer input
  std::vector<double> ln1_xhat; // [L][E]
  std::vector<double> ln1_rstd; // [L]
  std::vector<double> q, k, v;  // [L][E]
  std::vector<double> att;      // [H][L][L], softmaxed, causal
  std::vector<double> ctx;      // [L][E]
  std::vector<double> x_mid;    // [L][E] after attention residual
  std::vector<double> ln2_xhat; // [L][E]
  std::vector<double> ln2_rstd; // [L]
  std::vector<double> mlp_z;    // [L][M]
  std::vector<double> mlp_a;    // [L][M]
};

struct ForwardCache {
  size_t L = 0;
  std::vector<int> expanded;       // token id per position, -1 for visual rows
  std::vector<size_t> visual_row;  // for visual positions, index into sample.visual
  std::vector<double> x0;          // [L][E]
  std::vector<LayerCache> layers;
  std::vector<double> lnf_xhat;    // [L][E]
  std::vector<double> lnf_rstd;    // [L]
  std::vector<double> xf;          // [L][E]
};

constexpr double kLnEps = 1e-5;

void layernorm_forward(const double* x, const double* g, const double* b, size_t L, size_t E,
                       double* xhat, double* rstd, double* y) {
  for (size_t t = 0; t < L; ++t) {
    const double* xr = x + t * E;
    double mean = 0.0;
    for (size_t e = 0; e < E; ++e) mean += xr[e];
    mean /= static_cast<double>(E);
    double var = 0.0;
    for (size_t e = 0; e < E; ++e) {
      const double d = xr[e] - mean;
      var += d * d;
    }
    var /= static_cast<double>(E);
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[t] = r;
    double* xh = xhat + t * E;
    double* yr = y + t * E;
    for (size_t e = 0; e < E; ++e) {
      xh[e] = (xr[e] - mean) * r;
      yr[e] = g[e] * xh[e] + b[e];
    }
  }
}

// dy -> dx plus gain/bias grads, using cached xhat/rstd.
void layernorm_backward(const double* xhat, const double* rstd, const double* g, const double* dy,
                        size_t L, size_t E, double* dg, double* db, double* dx) {
  for (size_t t = 0; t < L; ++t) {
    const double* xh = xhat + t * E;
    const double* dyr = dy + t * E;
    double m1 = 0.0, m2 = 0.0;
    for (size_t e = 0; e < E; ++e) {
      const double dxh = dyr[e] * g[e];
      m1 += dxh;
      m2 += dxh * xh[e];
      dg[e] += dyr[e] * xh[e];
      db[e] += dyr[e];
    }
    m1 /= static_cast<double>(E);
    m2 /= static_cast<double>(E);
    double* dxr = dx + t * E;
    for (size_t e = 0; e < E; ++e) {
      const double dxh = dyr[e] * g[e];
      dxr[e] += rstd[t] * (dxh - m1 - xh[e] * m2);
    }
  }
}

void expand_sample(const DecoderConfig& cfg, const std::vector<int>& ids,
                   const std::vector<std::vector<double>>& visual,
                   const std::vector<int>& layout, ForwardCache& fc) {
  size_t video_count = 0;
  for (int id : ids) {
    if (id == Tokenizer::kVideo) ++video_count;
  }
  const size_t expected = visual.empty() ? 0 : 1;
  if (video_count != expected) {
    throw DomainError("decoder: sequence must contain exactly " + std::to_string(expected) +
                      " <video> token(s), found " + std::to_string(video_count));
  }
  if (!layout.empty()) {
    size_t rows = 0;
    for (int v : layout) rows += v < 0 ? 1 : 0;
    if (rows != visual.size()) {
      throw DomainError("decoder: layout names " + std::to_string(rows) + " rows, got " +
                        std::to_string(visual.size()));
    }
  }
  fc.expanded.clear();
  fc.visual_row.clear();
  for (int id : ids) {
    if (id == Tokenizer::kVideo && !visual.empty()) {
      if (layout.empty()) {
        for (size_t r = 0; r < visual.size(); ++r) {
          fc.visual_row.push_back(r);
          fc.expanded.push_back(-1);
        }
      } else {
        for (int v : layout) {
          if (v < 0) {
            const size_t r = static_cast<size_t>(-v) - 1;
            if (r >= visual.size()) throw DomainError("decoder: layout row out of range");
            fc.visual_row.push_back(r);
            fc.expanded.push_back(-1);
          } else {
            fc.expanded.push_back(v);
          }
        }
      }
    } else {
      fc.expanded.push_back(id);
    }
  }
  fc.L = fc.expanded.size();
  if (fc.L < 2) throw DomainError("decoder: sequence too short");
  if (fc.L > static_cast<size_t>(cfg.max_seq_len)) {
    throw DomainError("decoder: sequence length " + std::to_string(fc.L) +
                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
}

void decoder_forward(const DecoderConfig& cfg, const ParamSet& params,
                     const std::vector<int>& ids,
                     const std::vector<std::vector<double>>& visual,
                     const std::vector<int>& layout, ForwardCache& fc) {
  expand_sample(cfg, ids, visual, layout, fc);
  const size_t L = fc.L;
  const size_t E = static_cast<size_t>(cfg.embed_dim);
  const size_t H = static_cast<size_t>(cfg.n_heads);
  const size_t dh = static_cast<size_t>(cfg.head_dim());
  const size_t M = static_cast<size_t>(cfg.mlp_hidden);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  const auto& tok = params.at("emb.tok").w;
  const auto& pos = params.at("emb.pos").w;

  fc.x0.assign(L * E, 0.0);
  size_t vi = 0;
  for (size_t t = 0; t < L; ++t) {
    double* xr = fc.x0.data() + t * E;
    if (fc.expanded[t] < 0) {
      const auto& row = visual[fc.visual_row[vi++]];
      if (row.size() != E) throw DomainError("decoder: visual row dim mismatch");
      for (size_t e = 0; e < E; ++e) xr[e] = row[e];
    } else {
      const double* tr = tok.data() + static_cast<size_t>(fc.expanded[t]) * E;
      for (size_t e = 0; e < E; ++e) xr[e] = tr[e];
    }
    const double* pr = pos.data() + t * E;
    for (size_t e = 0; e < E; ++e) xr[e] += pr[e];
  }

  fc.layers.assign(static_cast<size_t>(cfg.n_layers), LayerCache{});
  std::vector<double> x = fc.x0;
  std::vector<double> h(L * E);

  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache& lc = fc.layers[static_cast<size_t>(l)];
    const std::string p = "dec.l" + std::to_string(l) + ".";
    lc.x_in = x;
    lc.ln1_xhat.assign(L * E, 0.0);
    lc.ln1_rstd.assign(L, 0.0);
    layernorm_forward(x.data(), params.at(p + "ln1.g").w.data(), params.at(p + "ln1.b").w.data(),
                      L, E, lc.ln1_xhat.data(), lc.ln1_rstd.data(), h.data());

    lc.q.assign(L * E, 0.0);
    lc.k.assign(L * E, 0.0);
    lc.v.assign(L * E, 0.0);
    const auto& wq = params.at(p + "wq").w;
    const auto& wk = params.at(p + "wk").w;
    const auto& wv = params.at(p + "wv").w;
    for (size_t t = 0; t < L; ++t) {
      matvec(wq.data(), h.data() + t * E, lc.q.data() + t * E, E, E);
      matvec(wk.data(), h.data() + t * E, lc.k.data() + t * E, E, E);
      matvec(wv.data(), h.data() + t * E, lc.v.data() + t * E, E, E);
    }

    lc.att.assign(H * L * L, 0.0);
    lc.ctx.assign(L * E, 0.0);
    std::vector<double> row(L);
    for (size_t hd = 0; hd < H; ++hd) {
      const size_t off = hd * dh;
      for (size_t t = 0; t < L; ++t) {
        const double* qt = lc.q.data() + t * E + off;
        for (size_t u = 0; u <= t; ++u) {
          const double* ku = lc.k.data() + u * E + off;
          double s = 0.0;
          for (size_t e = 0; e < dh; ++e) s += qt[e] * ku[e];
          row[u] = s * inv_sqrt_dh;
        }
        softmax_inplace(row.data(), t + 1);
        double* ar = lc.att.data() + (hd * L + t) * L;
        for (size_t u = 0; u <= t; ++u) ar[u] = row[u];
        double* ct = lc.ctx.data() + t * E + off;
        for (size_t u = 0; u <= t; ++u) {
          const double a = ar[u];
          const double* vu = lc.v.data() + u * E + off;
          for (size_t e = 0; e < dh; ++e) ct[e] += a * vu[e];
        }
      }
    }

    const auto& wo = params.at(p + "wo").w;
    lc.x_mid.assign(L * E, 0.0);
    std::vector<double> attn_out(E);
    for (size_t t = 0; t < L; ++t) {
      matvec(wo.data(), lc.ctx.data() + t * E, attn_out.data(), E, E);
      double* xm = lc.x_mid.data() + t * E;
      const double* xi = x.data() + t * E;
      for (size_t e = 0; e < E; ++e) xm[e] = xi[e] + attn_out[e];
    }

    lc.ln2_xhat.assign(L * E, 0.0);
    lc.ln2_rstd.assign(L, 0.0);
    layernorm_forward(lc.x_mid.data(), params.at(p + "ln2.g").w.data(),
                      params.at(p + "ln2.b").w.data(), L, E, lc.ln2_xhat.data(),
                      lc.ln2_rstd.data(), h.data());

    lc.mlp_z.assign(L * M, 0.0);
    lc.mlp_a.assign(L * M, 0.0);
    const auto& w1 = params.at(p + "mlp.w1").w;
    const auto& w2 = params.at(p + "mlp.w2").w;
    for (size_t t = 0; t < L; ++t) {
      matvec(w1.data(), h.data() + t * E, lc.mlp_z.data() + t * M, M, E);
      for (size_t m = 0; m < M; ++m) lc.mlp_a[t * M + m] = gelu(lc.mlp_z[t * M + m]);
    }
    std::vector<double> mlp_out(E);
    for (size_t t = 0; t < L; ++t) {
      matvec(w2.data(), lc.mlp_a.data() + t * M, mlp_out.data(), E, M);
      double* xr = x.data() + t * E;
      const double* xm = lc.x_mid.data() + t * E;
      for (size_t e = 0; e < E; ++e) xr[e] = xm[e] + mlp_out[e];
    }
  }

  fc.lnf_xhat.assign(L * E, 0.0);
  fc.lnf_rstd.assign(L, 0.0);
  fc.xf.assign(L * E, 0.0);
  layernorm_forward(x.data(), params.at("dec.lnf.g").w.data(), params.at("dec.lnf.b").w.data(),
                    L, E, fc.lnf_xhat.data(), fc.lnf_rstd.data(), fc.xf.data());
}

// Backward from d_xf (gradient w.r.t. the post-LN activations) down to the
// embeddings. Accumulates into params.g; d_visual receives visual-row grads.
void decoder_backward(const DecoderConfig& cfg, ParamSet& params, const ForwardCache& fc,
                      const std::vector<double>& d_xf,
                      const std::vector<std::vector<double>>& visual,
                      std::vector<std::vector<double>>* d_visual) {
  const size_t L = fc.L;
  const size_t E = static_cast<size_t>(cfg.embed_dim);
  const size_t H = static_cast<size_t>(cfg.n_heads);
  const size_t dh = static_cast<size_t>(cfg.head_dim());
  const size_t M = static_cast<size_t>(cfg.mlp_hidden);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> dx(L * E, 0.0);
  layernorm_backward(fc.lnf_xhat.data(), fc.lnf_rstd.data(), params.at("dec.lnf.g").w.data(),
                     d_xf.data(), L, E, params.at("dec.lnf.g").g.data(),
                     params.at("dec.lnf.b").g.data(), dx.data());

  std::vector<double> dh_buf(L * E);
  std::vector<double> d_mid(L * E);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerCache& lc = fc.layers[static_cast<size_t>(l)];
    const std::string p = "dec.l" + std::to_string(l) + ".";

    // MLP block: x = x_mid + W2 gelu(W1 ln2(x_mid)).
    auto& w1 = params.at(p + "mlp.w1");
    auto& w2 = params.at(p + "mlp.w2");
    std::vector<double> d_a(L * M, 0.0);
    for (size_t t = 0; t < L; ++t) {
      // d_a = W2^T dx ; dW2 += dx a^T
      const double* dxr = dx.data() + t * E;
      const double* ar = lc.mlp_a.data() + t * M;
      for (size_t e = 0; e < E; ++e) {
        const double g = dxr[e];
        if (g == 0.0) continue;
        double* dw2r = w2.g.data() + e * M;
        const double* w2r = w2.w.data() + e * M;
        double* dar = d_a.data() + t * M;
        for (size_t m = 0; m < M; ++m) {
          dw2r[m] += g * ar[m];
          dar[m] += g * w2r[m];
        }
      }
    }
    for (size_t t = 0; t < L; ++t) {
      for (size_t m = 0; m < M; ++m) d_a[t * M + m] *= gelu_grad(lc.mlp_z[t * M + m]);
    }
    // Recompute ln2 output (h) for W1 grads.
    std::vector<double> h2(L * E);
    {
      const auto& g2 = params.at(p + "ln2.g").w;
      const auto& b2 = params.at(p + "ln2.b").w;
      for (size_t t = 0; t < L; ++t) {
        for (size_t e = 0; e < E; ++e) {
          h2[t * E + e] = g2[e] * lc.ln2_xhat[t * E + e] + b2[e];
        }
      }
    }
    std::fill(dh_buf.begin(), dh_buf.end(), 0.0);
    for (size_t t = 0; t < L; ++t) {
      matvec_backward(w1.w.data(), h2.data() + t * E, d_a.data() + t * M, w1.g.data(),
                      dh_buf.data() + t * E, M, E);
    }
    std::fill(d_mid.begin(), d_mid.end(), 0.0);
    layernorm_backward(lc.ln2_xhat.data(), lc.ln2_rstd.data(), params.at(p + "ln2.g").w.data(),
                       dh_buf.data(), L, E, params.at(p + "ln2.g").g.data(),
                       params.at(p + "ln2.b").g.data(), d_mid.data());
    // Residual: d_x_mid = dx (skip) + d_mid (through ln2/mlp).
    for (size_t i = 0; i < L * E; ++i) d_mid[i] += dx[i];

    // Attention block: x_mid = x_in + Wo ctx(ln1(x_in)).
    auto& wo = params.at(p + "wo");
    std::vector<double> d_ctx(L * E, 0.0);
    for (size_t t = 0; t < L; ++t) {
      matvec_backward(wo.w.data(), lc.ctx.data() + t * E, d_mid.data() + t * E, wo.g.data(),
                      d_ctx.data() + t * E, E, E);
    }

    std::vector<double> d_q(L * E, 0.0), d_k(L * E, 0.0), d_v(L * E, 0.0);
    std::vector<double> d_s(L);
    for (size_t hd = 0; hd < H; ++hd) {
      const size_t off = hd * dh;
      for (size_t t = 0; t < L; ++t) {
        const double* ar = lc.att.data() + (hd * L + t) * L;
        const double* dct = d_ctx.data() + t * E + off;
        // d_a[u] = dct . v[u]; softmax backward to d_s.
        double dot = 0.0;
        for (size_t u = 0; u <= t; ++u) {
          const double* vu = lc.v.data() + u * E + off;
          double da = 0.0;
          for (size_t e = 0; e < dh; ++e) da += dct[e] * vu[e];
          d_s[u] = da;
          dot += ar[u] * da;
          double* dvu = d_v.data() + u * E + off;
          for (size_t e = 0; e < dh; ++e) dvu[e] += ar[u] * dct[e];
        }
        double* dqt = d_q.data() + t * E + off;
        const double* qt = lc.q.data() + t * E + off;
        for (size_t u = 0; u <= t; ++u) {
          const double ds = ar[u] * (d_s[u] - dot) * inv_sqrt_dh;
          if (ds == 0.0) continue;
          const double* ku = lc.k.data() + u * E + off;
          double* dku = d_k.data() + u * E + off;
          for (size_t e = 0; e < dh; ++e) {
            dqt[e] += ds * ku[e];
            dku[e] += ds * qt[e];
          }
        }
      }
    }

    // Recompute ln1 output for q/k/v weight grads.
    std::vector<double> h1(L * E);
    {
      const auto& g1 = params.at(p + "ln1.g").w;
      const auto& b1 = params.at(p + "ln1.b").w;
      for (size_t t = 0; t < L; ++t) {
        for (size_t e = 0; e < E; ++e) {
          h1[t * E + e] = g1[e] * lc.ln1_xhat[t * E + e] + b1[e];
        }
      }
    }
    auto& wq = params.at(p + "wq");
    auto& wk = params.at(p + "wk");
    auto& wv = params.at(p + "wv");
    std::fill(dh_buf.begin(), dh_buf.end(), 0.0);
    for (size_t t = 0; t < L; ++t) {
      matvec_backward(wq.w.data(), h1.data() + t * E, d_q.data() + t * E, wq.g.data(),
                      dh_buf.data() + t * E, E, E);
      matvec_backward(wk.w.data(), h1.data() + t * E, d_k.data() + t * E, wk.g.data(),
                      dh_buf.data() + t * E, E, E);
      matvec_backward(wv.w.data(), h1.data() + t * E, d_v.data() + t * E, wv.g.data(),
                      dh_buf.data() + t * E, E, E);
    }
    std::fill(dx.begin(), dx.end(), 0.0);
    layernorm_backward(lc.ln1_xhat.data(), lc.ln1_rstd.data(), params.at(p + "ln1.g").w.data(),
                       dh_buf.data(), L, E, params.at(p + "ln1.g").g.data(),
                       params.at(p + "ln1.b").g.data(), dx.data());
    // Residual: d_x_in = d_mid (skip) + dx (through ln1/attention).
    for (size_t i = 0; i < L * E; ++i) dx[i] += d_mid[i];
  }

  // Embedding grads.
  auto& tok = params.at("emb.tok");
  auto& pos = params.at("emb.pos");
  if (d_visual) {
    d_visual->assign(visual.size(), std::vector<double>(E, 0.0));
  }
  size_t vi = 0;
  for (size_t t = 0; t < L; ++t) {
    const double* dxr = dx.data() + t * E;
    double* dpr = pos.g.data() + t * E;
    for (size_t e = 0; e < E; ++e) dpr[e] += dxr[e];
    if (fc.expanded[t] < 0) {
      const size_t row = fc.visual_row[vi++];
      if (d_visual) {
        for (size_t e = 0; e < E; ++e) (*d_visual)[row][e] += dxr[e];
      }
    } else {
      double* dtr = tok.g.data() + static_cast<size_t>(fc.expanded[t]) * E;
      for (size_t e = 0; e < E; ++e) dtr[e] += dxr[e];
    }
  }
}

}  // namespace

double next_token_loss(const std::vector<std::vector<double>>& logits,
                       const std::vector<int>& targets, const std::vector<bool>& mask,
                       std::vector<std::vector<double>>* d_logits) {
  if (logits.size() != targets.size() || logits.size() != mask.size()) {
    throw DomainError("next_token_loss: shapes disagree");
  }
  size_t n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  if (n == 0) throw DomainError("next_token_loss: mask selects zero positions");

  if (d_logits) {
    d_logits->assign(logits.size(), {});
  }
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) {
      if (d_logits) (*d_logits)[i].assign(logits[i].size(), 0.0);
      continue;
    }
    const auto& row = logits[i];
    const int target = targets[i];
    if (target < 0 || static_cast<size_t>(target) >= row.size()) {
      throw DomainError("next_token_loss: target out of vocabulary");
    }
    std::vector<double> probs = row;
    softmax_inplace(probs.data(), probs.size());
    const double p = std::max(probs[static_cast<size_t>(target)], 1e-300);
    total += -std::log(p);
    if (d_logits) {
      auto& dr = (*d_logits)[i];
      dr = probs;
      for (double& v : dr) v /= static_cast<double>(n);
      dr[static_cast<size_t>(target)] -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

namespace {

// Shared core of the loss paths: forward, per-position CE on the supervised
// tail, optional backward.
double loss_impl(const DecoderConfig& cfg, const ParamSet& params, const EncodedSample& sample,
                 ParamSet* grads, std::vector<std::vector<double>>* d_visual) {
  if (sample.response_len == 0) throw DomainError("decoder loss: response_len must be > 0");
  ForwardCache fc;
  decoder_forward(cfg, params, sample.ids, sample.visual, sample.layout, fc);
  const size_t L = fc.L;
  const size_t E = static_cast<size_t>(cfg.embed_dim);
  if (sample.response_len >= L) throw DomainError("decoder loss: response longer than sequence");

  // Position p predicts expanded[p + 1]; supervised p are the last
  // response_len predictor rows.
  const size_t first = L - sample.response_len - 1;
  const auto& head = params.at("dec.head").w;
  const size_t V = static_cast<size_t>(cfg.vocab_size);

  double total = 0.0;
  std::vector<double> probs(V);
  std::vector<double> d_xf;
  if (grads) d_xf.assign(L * E, 0.0);
  auto* head_g = grads ? grads->at("dec.head").g.data() : nullptr;
  const double inv_n = 1.0 / static_cast<double>(sample.response_len);

  for (size_t p = first; p + 1 < L; ++p) {
    const int target = fc.expanded[p + 1];
    if (target < 0) throw DomainError("decoder loss: supervised position is a visual row");
    matvec(head.data(), fc.xf.data() + p * E, probs.data(), V, E);
    softmax_inplace(probs.data(), V);
    total += -std::log(std::max(probs[static_cast<size_t>(target)], 1e-300));
    if (grads) {
      probs[static_cast<size_t>(target)] -= 1.0;
      const double* xfr = fc.xf.data() + p * E;
      double* dxfr = d_xf.data() + p * E;
      for (size_t vcl = 0; vcl < V; ++vcl) {
        const double g = probs[vcl] * inv_n;
        if (g == 0.0) continue;
        double* hrow = head_g + vcl * E;
        const double* wrow = head.data() + vcl * E;
        for (size_t e = 0; e < E; ++e) {
          hrow[e] += g * xfr[e];
          dxfr[e] += g * wrow[e];
        }
      }
    }
  }
  if (grads) {
    decoder_backward(cfg, *grads, fc, d_xf, sample.visual, d_visual);
  }
  return total * inv_n;
}

}  // namespace

double decoder_loss_and_grad(const DecoderConfig& cfg, ParamSet& params,
                             const EncodedSample& sample,
                             std::vector<std::vector<double>>* d_visual) {
  return loss_impl(cfg, params, sample, &params, d_visual);
}

double decoder_loss(const DecoderConfig& cfg, const ParamSet& params,
                    const EncodedSample& sample) {
  return loss_impl(cfg, params, sample, nullptr, nullptr);
}

std::string greedy_decode(const DecoderConfig& cfg, const ParamSet& params,
                          const Tokenizer& tokenizer, const std::string& prompt_text,
                          const std::vector<std::vector<double>>& visual, int max_new_tokens,
                          const std::vector<int>& layout) {
  std::vector<int> ids;
  ids.push_back(Tokenizer::kBos);
  for (int id : tokenizer.encode(prompt_text)) ids.push_back(id);

  size_t video_count = 0;
  for (int id : ids) {
    if (id == Tokenizer::kVideo) ++video_count;
  }
  const size_t expected = visual.empty() ? 0 : 1;
  if (video_count != expected) {
    throw DomainError("greedy_decode: prompt must contain exactly " + std::to_string(expected) +
                      " <video> token(s)");
  }

  const size_t V = static_cast<size_t>(cfg.vocab_size);
  const size_t E = static_cast<size_t>(cfg.embed_dim);
  const auto& head = params.at("dec.head").w;
  std::vector<int> generated;
  std::vector<double> logits(V);
  const size_t video_span =
      visual.empty() ? 0 : (layout.empty() ? visual.size() : layout.size());

  for (int step = 0; step < max_new_tokens; ++step) {
    const size_t expanded_len = ids.size() + (visual.empty() ? 0 : video_span - 1);
    if (expanded_len >= static_cast<size_t>(cfg.max_seq_len)) break;
    ForwardCache fc;
    decoder_forward(cfg, params, ids, visual, layout, fc);
    matvec(head.data(), fc.xf.data() + (fc.L - 1) * E, logits.data(), V, E);
    int best = 0;
    double best_v = logits[0];
    for (size_t i = 1; i < V; ++i) {
      if (logits[i] > best_v) {
        best_v = logits[i];
        best = static_cast<int>(i);
      }
    }
    if (best == Tokenizer::kEos) break;
    generated.push_back(best);
    ids.push_back(best);
  }
  return tokenizer.decode(generated);
}

}  // namespace gvqa
