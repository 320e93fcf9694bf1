// SPDX-License-Identifier: Apache-2.0
#include "gvqa/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "gvqa/prompt_assets.hpp"
#include "gvqa/rng.hpp"

namespace gvqa {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kTextPretrain: return "text_pretrain";
    case Stage::kAlign: return "align";
    case Stage::kGround: return "ground";
    case Stage::kConsist: return "consist";
  }
  return "align";
}

std::vector<ParamGroup> StageConfig::trainable() const {
  switch (stage) {
    case Stage::kTextPretrain: return {ParamGroup::kEmbedder, ParamGroup::kDecoder};
    case Stage::kAlign: return {ParamGroup::kConnector};
    case Stage::kGround:
    case Stage::kConsist: return {ParamGroup::kConnector, ParamGroup::kDecoder};
  }
  return {};
}

void StageConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("StageConfig: learning_rate must be positive");
  if (batch_size < 1) throw DomainError("StageConfig: batch_size must be positive");
  if (epochs < 1) throw DomainError("StageConfig: epochs must be positive");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
    throw DomainError("StageConfig: warmup_ratio must lie in [0, 1)");
  }
  if (schedule != "cosine") throw DomainError("StageConfig: unknown schedule " + schedule);
  if (weight_decay < 0.0) throw DomainError("StageConfig: weight_decay must be non-negative");
  if (max_sequence_length < 8) throw DomainError("StageConfig: max_sequence_length too small");
}

StageConfig StageConfig::full_scale(Stage s) {
  StageConfig cfg;
  cfg.stage = s;
  cfg.epochs = 1;
  cfg.max_sequence_length = 2048;
  switch (s) {
    case Stage::kTextPretrain:
    case Stage::kAlign:
      cfg.learning_rate = 1e-3;
      cfg.batch_size = 256;
      break;
    case Stage::kGround:
    case Stage::kConsist:
      cfg.learning_rate = 2e-5;
      cfg.batch_size = 128;
      break;
  }
  return cfg;
}

StageConfig StageConfig::desk(Stage s) {
  StageConfig cfg;
  cfg.stage = s;
  cfg.batch_size = 16;
  cfg.max_sequence_length = 160;
  switch (s) {
    case Stage::kTextPretrain:
      cfg.learning_rate = 3e-3;
      cfg.epochs = 20;
      break;
    case Stage::kAlign:
      cfg.learning_rate = 1e-2;
      cfg.epochs = 20;
      break;
    case Stage::kGround:
      cfg.learning_rate = 1e-3;
      cfg.epochs = 10;
      break;
    case Stage::kConsist:
      cfg.learning_rate = 1e-3;
      cfg.epochs = 10;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

double lr_at(const OptimizerConfig& cfg, int step) {
  if (step < 0) throw DomainError("lr_at: negative step");
  const int warmup = std::max<int>(1, static_cast<int>(std::llround(cfg.warmup_ratio *
                                                                    cfg.total_steps)));
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step + 1) / warmup;
  if (cfg.total_steps <= warmup) return cfg.peak_lr;
  double progress = static_cast<double>(step - warmup) / (cfg.total_steps - warmup);
  progress = std::min(1.0, std::max(0.0, progress));
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(const ParamSet& params, OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.peak_lr > 0.0)) throw DomainError("AdamW: peak_lr must be positive");
  if (cfg_.total_steps < 1) throw DomainError("AdamW: total_steps must be positive");
  m_.reserve(params.entries().size());
  v_.reserve(params.entries().size());
  for (const ParamEntry& e : params.entries()) {
    m_.emplace_back(e.size(), 0.0);
    v_.emplace_back(e.size(), 0.0);
  }
}

void AdamW::step(ModelState& state) {
  auto& entries = state.params.entries();
  if (entries.size() != m_.size()) throw DomainError("AdamW: parameter set changed size");
  const double lr = lr_at(cfg_, t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_ + 1);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_ + 1);
  for (size_t i = 0; i < entries.size(); ++i) {
    ParamEntry& e = entries[i];
    // Frozen groups keep weights and moments untouched, bit for bit.
    if (state.is_frozen(e.group)) continue;
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < e.w.size(); ++j) {
      const double g = e.g[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      e.w[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * e.w[j]);
    }
  }
  ++t_;
  last_lr_ = lr;
}

// ---------------------------------------------------------------------------
// Stage runner
// ---------------------------------------------------------------------------

void save_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot open train log for writing: " + path);
  for (const TrainLogEntry& e : log) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    j["stage"] = e.stage;
    j["wall_s"] = e.wall_s;
    out << j.dump() << "\n";
  }
}

FeatureCache::FeatureCache(const DatasetManifest& data, const VisionEncoder& encoder,
                           const ConnectorConfig& cfg)
    : data_(&data), encoder_(&encoder), cfg_(cfg) {}

namespace {

// "a+b" concatenates the parts' frames in order. Composites exist only as
// training inputs; manifests never contain '+' in a video id.
VideoRecord load_possibly_composite(const DatasetManifest& data, const std::string& video_id) {
  if (data.videos.count(video_id) > 0 || video_id.find('+') == std::string::npos) {
    return load_video(data, video_id);
  }
  VideoRecord joined;
  joined.video_id = video_id;
  size_t pos = 0;
  while (pos <= video_id.size()) {
    const size_t next = video_id.find('+', pos);
    const std::string part =
        video_id.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    const VideoRecord rec = load_video(data, part);
    joined.duration_seconds += rec.duration_seconds;
    joined.frames.insert(joined.frames.end(), rec.frames.begin(), rec.frames.end());
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return joined;
}

}  // namespace

const std::pair<FrameFeatures, FrameFeatures>& FeatureCache::get(const std::string& video_id) {
  auto it = cache_.find(video_id);
  if (it != cache_.end()) return it->second;
  const VideoRecord video = load_possibly_composite(*data_, video_id);
  FrameFeatures dense = encoder_->encode(sample_frames(video, cfg_.dense_frames));
  FrameFeatures sparse = encoder_->encode(sample_frames(video, cfg_.sparse_frames));
  return cache_.emplace(video_id, std::make_pair(std::move(dense), std::move(sparse)))
      .first->second;
}

bool has_stage(const ModelState& state, const std::string& tag) {
  return std::find(state.stage_history.begin(), state.stage_history.end(), tag) !=
         state.stage_history.end();
}

std::string frame_index_note(const ConnectorConfig& cfg, ConnectorMode mode, size_t frame_count) {
  const int n = mode == ConnectorMode::kSparseOnly ? cfg.sparse_frames : cfg.dense_frames;
  const double count = static_cast<double>(frame_count);
  std::string note = "frames [";
  for (int i = 0; i < n; ++i) {
    const size_t idx = static_cast<size_t>((i + 0.5) * count / n);
    if (i > 0) note += ", ";
    note += std::to_string(
        static_cast<int>(std::llround(100.0 * (static_cast<double>(idx) + 0.5) / count)));
  }
  note += "]";
  return note;
}

std::string insert_prompt_note(const std::string& prompt, const std::string& note) {
  const size_t pos = prompt.find("<video>");
  if (pos == std::string::npos) return prompt;
  std::string out = prompt;
  out.insert(pos + std::string("<video>").size(), " " + note);
  return out;
}

namespace {

struct Prepped {
  std::vector<int> ids;
  size_t response_len = 0;
  const std::string* video_id = nullptr;  // null or empty = text-only
};

std::vector<double> snapshot_weights(const ParamSet& params) {
  std::vector<double> snap;
  snap.reserve(params.total_params());
  for (const ParamEntry& e : params.entries()) snap.insert(snap.end(), e.w.begin(), e.w.end());
  return snap;
}

void restore_weights(ParamSet& params, const std::vector<double>& snap) {
  size_t off = 0;
  for (ParamEntry& e : params.entries()) {
    std::copy(snap.begin() + static_cast<long>(off),
              snap.begin() + static_cast<long>(off + e.size()), e.w.begin());
    off += e.size();
  }
}

}  // namespace

StageResult run_stage(ModelState& state, const StageConfig& cfg,
                      const std::vector<TrainSample>& samples, const Tokenizer& tokenizer,
                      FeatureCache& features) {
  cfg.validate();
  if (samples.empty()) throw DomainError("run_stage: no training samples");
  TrainingPhaseGuard guard;
  state.set_trainable(cfg.trainable());

  const int max_len = std::min(cfg.max_sequence_length, state.decoder_cfg.max_seq_len);
  const std::vector<int> layout =
      visual_layout(state.connector_cfg, state.connector_mode, tokenizer);
  const size_t video_span = layout.size();

  std::vector<Prepped> prepped;
  prepped.reserve(samples.size());
  for (const TrainSample& s : samples) {
    Prepped p;
    std::string prompt_text = s.prompt_text;
    if (!cfg.prompt_note.empty() && !s.video_id.empty()) {
      prompt_text = insert_prompt_note(prompt_text, cfg.prompt_note);
    }
    const std::vector<int> prompt_ids = tokenizer.encode(prompt_text);
    const std::vector<int> target_ids = tokenizer.encode(s.target_text);
    if (target_ids.empty()) throw DomainError("run_stage: empty target text");
    p.ids.push_back(Tokenizer::kBos);
    p.ids.insert(p.ids.end(), prompt_ids.begin(), prompt_ids.end());
    p.ids.insert(p.ids.end(), target_ids.begin(), target_ids.end());
    p.ids.push_back(Tokenizer::kEos);
    p.response_len = target_ids.size() + 1;
    if (!s.video_id.empty()) p.video_id = &s.video_id;
    const size_t expanded = p.ids.size() + (p.video_id ? video_span - 1 : 0);
    if (expanded > static_cast<size_t>(max_len)) {
      throw DomainError("run_stage: sample exceeds max sequence length");
    }
    prepped.push_back(std::move(p));
  }

  const int steps_per_epoch =
      static_cast<int>((prepped.size() + cfg.batch_size - 1) / cfg.batch_size);
  OptimizerConfig ocfg;
  ocfg.peak_lr = cfg.learning_rate;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.total_steps = cfg.epochs * steps_per_epoch;
  ocfg.warmup_ratio = cfg.warmup_ratio;
  AdamW opt(state.params, ocfg);

  Rng rng(cfg.seed);
  std::vector<size_t> order(prepped.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  StageResult result;
  std::vector<double> last_good = snapshot_weights(state.params);
  const auto t0 = std::chrono::steady_clock::now();
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      state.params.zero_grads();
      double batch_loss = 0.0;
      for (size_t bi = begin; bi < end; ++bi) {
        const Prepped& p = prepped[order[bi]];
        EncodedSample sample;
        sample.ids = p.ids;
        sample.response_len = p.response_len;
        ConnectorCache cache;
        if (p.video_id) {
          const auto& feats = features.get(*p.video_id);
          sample.visual = connector_forward(feats.first, feats.second, state.connector_mode,
                                            state.connector_cfg, state.params, &cache);
          sample.layout = layout;
        }
        std::vector<std::vector<double>> d_visual;
        batch_loss += decoder_loss_and_grad(state.decoder_cfg, state.params, sample,
                                            p.video_id ? &d_visual : nullptr);
        if (p.video_id) {
          connector_backward(cache, state.connector_cfg, d_visual, state.params);
        }
      }
      const double n = static_cast<double>(end - begin);
      batch_loss /= n;
      if (!std::isfinite(batch_loss)) {
        restore_weights(state.params, last_good);
        throw TrainingError(std::string("non-finite loss in stage ") + to_string(cfg.stage) +
                            " at step " + std::to_string(step) +
                            "; parameters restored to the last finite-loss state");
      }
      for (ParamEntry& e : state.params.entries()) {
        for (double& g : e.g) g /= n;
      }
      last_good = snapshot_weights(state.params);
      opt.step(state);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(TrainLogEntry{step, batch_loss, opt.last_lr(), to_string(cfg.stage),
                                         wall});
      result.final_loss = batch_loss;
      ++step;
    }
  }
  state.params.zero_grads();
  result.steps = step;
  state.stage_history.push_back(to_string(cfg.stage));
  return result;
}

// ---------------------------------------------------------------------------
// Sample builders
// ---------------------------------------------------------------------------

namespace {

// Text-only prompt with the same scaffold render_prompt uses, the context
// standing where the <video> token would be.
std::string text_prompt(const std::string& context, const std::string& question,
                        OutputFormat fmt, bool use_template) {
  std::string out = std::string(prompts::kSystem) + "\nUSER: " + context + ". " + question;
  if (use_template) out += std::string(" Answer in the format ") + format_instruction(fmt);
  out += "\nASSISTANT:";
  return out;
}

std::string video_prompt(const std::string& question, OutputFormat fmt, bool use_template) {
  PromptSpec spec;
  spec.system_text = prompts::kSystem;
  spec.question = question;
  spec.output_format = fmt;
  spec.use_template = use_template;
  return render_prompt(spec);
}

std::vector<std::string> split_phrases(const std::string& caption) {
  std::vector<std::string> out;
  size_t pos = 0;
  const std::string sep = " then ";
  while (true) {
    const size_t next = caption.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(caption.substr(pos));
      break;
    }
    out.push_back(caption.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

}  // namespace

namespace {

// Phrases and the questions asked about them, harvested from the split.
struct WorldBank {
  std::vector<std::string> phrases;
  std::map<std::string, std::vector<std::string>> questions_for;
};

WorldBank build_world_bank(const DatasetManifest& data) {
  WorldBank bank;
  std::set<std::string> uniq;
  for (const auto& [vid, src] : data.videos) {
    for (const std::string& p : split_phrases(src.caption)) {
      if (!p.empty()) uniq.insert(p);
    }
  }
  bank.phrases.assign(uniq.begin(), uniq.end());
  for (const QAItem& item : data.items) {
    auto& qs = bank.questions_for[item.gt_answer];
    if (std::find(qs.begin(), qs.end(), item.question) == qs.end()) {
      qs.push_back(item.question);
    }
  }
  return bank;
}

// One fence world: a context that interleaves timeline numbers with slot
// words, the same shape visual rows take between their fence tokens in the
// decoder input. Grounding over such a context reduces to copying the
// numbers around the queried phrase's slots, which is the circuit the
// grounding stages need over visual rows. Appends caption, grounded-answer,
// referring, and plain-QA samples for the world.
void append_fence_world(const WorldBank& bank, Rng& rng, TimeRepresentation rep,
                        bool use_template, std::vector<TrainSample>& out) {
  // Half the worlds use the connector's own slot count so that geometry is
  // covered densely; the rest vary it so the circuits stay rule-shaped.
  const int slots = rng.uniform_int(0, 1) == 0 ? 4 : static_cast<int>(rng.uniform_int(5, 10));
  const std::vector<int> fences = branch_fences(slots);
  // A share of worlds holds no event at all; their honest description is
  // "nothing", which keeps empty spans from being narrated as activity.
  const int n_events =
      rng.uniform_int(0, 5) == 0
          ? 0
          : static_cast<int>(
                rng.uniform_int(1, std::min<int>(2, static_cast<int>(bank.phrases.size()))));

  // Non-overlapping slot runs, packed left to right with random gaps.
  std::vector<std::pair<int, int>> spans;  // [first_slot, last_slot]
  int cursor = 0;
  for (int i = 0; i < n_events; ++i) {
    const int remaining_events = n_events - i;
    const int room = slots - cursor - (remaining_events - 1) * 2;
    if (room < 1) break;
    const int len = static_cast<int>(rng.uniform_int(1, std::min(3, room)));
    const int slack = slots - cursor - len - (remaining_events - 1) * 2;
    const int first = cursor + static_cast<int>(rng.uniform_int(0, std::max(0, slack)));
    spans.emplace_back(first, first + len - 1);
    cursor = first + len + 1;
  }

  std::vector<std::string> picked = bank.phrases;
  for (size_t i = 0; i < spans.size(); ++i) {
    const size_t j = static_cast<size_t>(
        rng.uniform_int(static_cast<int>(i), static_cast<int>(picked.size()) - 1));
    std::swap(picked[i], picked[j]);
  }

  std::vector<std::string> slot_words(static_cast<size_t>(slots), "nothing");
  for (size_t i = 0; i < spans.size(); ++i) {
    std::vector<std::string> words;
    std::string word;
    std::istringstream in(picked[i]);
    while (in >> word) words.push_back(word);
    for (int s = spans[i].first; s <= spans[i].second; ++s) {
      slot_words[static_cast<size_t>(s)] =
          words[static_cast<size_t>(s - spans[i].first) % words.size()];
    }
  }

  std::string run;
  for (int s = 0; s < slots; ++s) {
    run += std::to_string(fences[static_cast<size_t>(s)]) + " " +
           slot_words[static_cast<size_t>(s)] + " ";
  }
  run += std::to_string(fences[static_cast<size_t>(slots)]);
  // Repeated runs mirror the two consecutive branch layouts of the connector,
  // so they dominate at the connector's own slot count.
  const double doubled_p = slots == 4 ? 0.7 : 0.25;
  std::string context = run;
  if (rng.uniform() < doubled_p) context += " " + run;

  if (spans.empty()) {
    out.push_back(TrainSample{"",
                              text_prompt(context, prompts::kCaptionQuestion,
                                          OutputFormat::kAnswerOnly, use_template),
                              "nothing"});
    const int a = static_cast<int>(rng.uniform_int(0, slots - 1));
    const int b = static_cast<int>(rng.uniform_int(a, slots - 1));
    const TemporalSegment empty_query{fences[static_cast<size_t>(a)],
                                      fences[static_cast<size_t>(b + 1)]};
    out.push_back(TrainSample{
        "",
        text_prompt(context, inject_referring(prompts::kCaptionQuestion, empty_query),
                    OutputFormat::kAnswerOnly, use_template),
        "nothing"});
    return;
  }

  const size_t pick =
      static_cast<size_t>(rng.uniform_int(0, static_cast<int>(spans.size()) - 1));
  const std::string& phrase = picked[pick];
  const TemporalSegment seg{fences[static_cast<size_t>(spans[pick].first)],
                            fences[static_cast<size_t>(spans[pick].second + 1)]};

  std::string question = prompts::kCaptionQuestion;
  const auto qit = bank.questions_for.find(phrase);
  if (qit != bank.questions_for.end() && !qit->second.empty()) {
    question = qit->second[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(qit->second.size()) - 1))];
  }

  GroundedAnswer ga;
  ga.answer = phrase;
  ga.segment = seg;
  out.push_back(TrainSample{
      "", text_prompt(context, question, OutputFormat::kAnswerWithGrounding, use_template),
      serialize(ga, OutputFormat::kAnswerWithGrounding, rep)});

  // Referring over the same context. Queries mostly reuse exact fence values
  // (matching a number token is learnable long before numeric proximity is);
  // a minority jitter off the grid for robustness.
  TemporalSegment query = seg;
  if (rng.uniform_int(0, 2) == 0) {
    query.start =
        std::max(0, std::min(100, query.start + static_cast<int>(rng.uniform_int(-4, 4))));
    query.end = std::max(query.start,
                         std::min(100, query.end + static_cast<int>(rng.uniform_int(-4, 4))));
  }
  out.push_back(TrainSample{"",
                            text_prompt(context, inject_referring(prompts::kCaptionQuestion, query),
                                        OutputFormat::kAnswerOnly, use_template),
                            phrase});

  // A span over an event-free run answers "nothing"; without this contrast
  // the referring circuit would name some activity for every window.
  std::vector<bool> covered(static_cast<size_t>(slots), false);
  for (const auto& sp : spans) {
    for (int s = sp.first; s <= sp.second; ++s) covered[static_cast<size_t>(s)] = true;
  }
  std::vector<std::pair<int, int>> gaps;
  for (int s = 0; s < slots; ++s) {
    if (covered[static_cast<size_t>(s)]) continue;
    const int g0 = s;
    while (s + 1 < slots && !covered[static_cast<size_t>(s + 1)]) ++s;
    gaps.emplace_back(g0, s);
  }
  if (!gaps.empty() && rng.uniform_int(0, 1) == 0) {
    const auto& gap = gaps[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(gaps.size()) - 1))];
    const TemporalSegment empty_query{fences[static_cast<size_t>(gap.first)],
                                      fences[static_cast<size_t>(gap.second + 1)]};
    out.push_back(TrainSample{
        "",
        text_prompt(context, inject_referring(prompts::kCaptionQuestion, empty_query),
                    OutputFormat::kAnswerOnly, use_template),
        "nothing"});
  }

  // Whole-context caption in slot order.
  std::string caption;
  for (size_t i = 0; i < spans.size(); ++i) {
    if (i > 0) caption += " then ";
    caption += picked[i];
  }
  out.push_back(TrainSample{"",
                            text_prompt(context, prompts::kCaptionQuestion,
                                        OutputFormat::kAnswerOnly, use_template),
                            caption});

  // Plain answer when the question asks for no span.
  out.push_back(TrainSample{
      "", text_prompt(context, question, OutputFormat::kAnswerOnly, use_template), phrase});
}

}  // namespace

std::vector<TrainSample> make_text_pretrain_samples(const DatasetManifest& data, uint64_t seed,
                                                    TimeRepresentation rep, bool use_template) {
  Rng rng(seed);
  std::vector<TrainSample> out;
  const WorldBank bank = build_world_bank(data);
  if (bank.phrases.empty()) return out;

  // Fence worlds carry every context-reading skill: the only way to locate
  // content in a context is between its fence numbers, so the circuits formed
  // here are the ones alignment can drive with visual rows later. The count
  // is deliberately far past this model's memorization capacity.
  const int fence_worlds = 40 * static_cast<int>(data.videos.size());
  for (int w = 0; w < fence_worlds; ++w) {
    append_fence_world(bank, rng, rep, use_template, out);
  }

  return out;
}

std::vector<TrainSample> make_align_samples(const DatasetManifest& data, bool use_template) {
  std::vector<TrainSample> out;
  for (const auto& [vid, src] : data.videos) {
    if (src.caption.empty()) continue;
    out.push_back(TrainSample{vid,
                              video_prompt(prompts::kCaptionQuestion, OutputFormat::kAnswerOnly,
                                           use_template),
                              src.caption});
  }
  for (const QAItem& item : data.items) {
    out.push_back(TrainSample{item.video_id,
                              video_prompt(item.question, OutputFormat::kAnswerOnly, use_template),
                              item.gt_answer});
  }

  return out;
}

std::vector<TrainSample> make_ground_samples(const std::vector<PseudoLabel>& labels,
                                             const DatasetManifest& data, uint64_t seed,
                                             TimeRepresentation rep, bool use_template) {
  std::vector<TrainSample> out;
  for (const PseudoLabel& label : labels) {
    out.push_back(TrainSample{label.video_id,
                              video_prompt(label.referring_question, OutputFormat::kAnswerOnly,
                                           use_template),
                              label.description});
    // The annotated answer, when the description matched one, is the cleaner
    // target text; the sampled window stays the only position supervision.
    GroundedAnswer ga;
    ga.answer = label.gt_answer.value_or(label.description);
    ga.segment = label.segment;
    out.push_back(TrainSample{label.video_id,
                              video_prompt(label.grounding_question,
                                           OutputFormat::kAnswerWithGrounding, use_template),
                              serialize(ga, OutputFormat::kAnswerWithGrounding, rep)});
  }
  // Fence-world replay keeps the copy-the-adjacent-number circuit intact
  // while the decoder adapts to pseudo labels; without it the stage can
  // memorize per-video windows and lose localization off the train split.
  const WorldBank bank = build_world_bank(data);
  if (!bank.phrases.empty()) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    const int worlds = static_cast<int>(data.videos.size());
    for (int w = 0; w < worlds; ++w) {
      append_fence_world(bank, rng, rep, use_template, out);
    }
  }
  return out;
}

std::vector<TrainSample> make_consist_samples(const DatasetManifest& data,
                                              const std::vector<PseudoLabel>& accepted,
                                              uint64_t seed, TimeRepresentation rep,
                                              bool use_template, bool mix_qa) {
  std::vector<TrainSample> out = make_ground_samples(accepted, data, seed, rep, use_template);
  if (mix_qa) {
    for (const QAItem& item : data.items) {
      out.push_back(TrainSample{item.video_id,
                                video_prompt(item.question, OutputFormat::kAnswerOnly,
                                             use_template),
                                item.gt_answer});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage wrappers
// ---------------------------------------------------------------------------

namespace {

void require_stage(const ModelState& state, const char* needed, const char* about_to_run) {
  if (!has_stage(state, needed)) {
    throw DomainError(std::string(about_to_run) + " requires a checkpoint that finished the " +
                      needed + " stage");
  }
}

}  // namespace

StageResult run_text_pretrain(ModelState& state, const StageConfig& cfg,
                              const DatasetManifest& data, const Tokenizer& tokenizer,
                              FeatureCache& features, TimeRepresentation rep, bool use_template) {
  if (cfg.stage != Stage::kTextPretrain) throw DomainError("config stage mismatch");
  return run_stage(state, cfg, make_text_pretrain_samples(data, cfg.seed, rep, use_template),
                   tokenizer, features);
}

StageResult run_align(ModelState& state, const StageConfig& cfg, const DatasetManifest& data,
                      const Tokenizer& tokenizer, FeatureCache& features, bool use_template) {
  if (cfg.stage != Stage::kAlign) throw DomainError("config stage mismatch");
  return run_stage(state, cfg, make_align_samples(data, use_template), tokenizer, features);
}

StageResult run_ground(ModelState& state, const StageConfig& cfg, const DatasetManifest& data,
                       const std::vector<PseudoLabel>& labels, const Tokenizer& tokenizer,
                       FeatureCache& features, TimeRepresentation rep, bool use_template) {
  if (cfg.stage != Stage::kGround) throw DomainError("config stage mismatch");
  require_stage(state, "align", "ground");
  return run_stage(state, cfg, make_ground_samples(labels, data, cfg.seed, rep, use_template),
                   tokenizer, features);
}

StageResult run_consist(ModelState& state, const StageConfig& cfg, const DatasetManifest& data,
                        const std::vector<PseudoLabel>& accepted, const Tokenizer& tokenizer,
                        FeatureCache& features, TimeRepresentation rep, bool use_template,
                        bool mix_qa) {
  if (cfg.stage != Stage::kConsist) throw DomainError("config stage mismatch");
  require_stage(state, "ground", "consist");
  return run_stage(state, cfg,
                   make_consist_samples(data, accepted, cfg.seed, rep, use_template, mix_qa),
                   tokenizer, features);
}

}  // namespace gvqa
