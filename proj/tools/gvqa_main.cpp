// SPDX-License-Identifier: Apache-2.0
//
// Operator entry point. Subcommands cover the whole pipeline:
//   synth    generate the synthetic corpus
//   align    text pretraining + connector alignment
//   pseudo   pseudo-label generation from an aligned checkpoint
//   ground   grounding stage on unfiltered pseudo labels
//   consist  consistency filtering + final stage
//   eval     metrics report from a checkpoint or a predictions file
//   report   human-readable summary of a run directory
//
// A config file (key=value lines) overrides flags. Every command stamps
// <out>/<command>.done with its config hash and skips cleanly when re-run
// unchanged.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gvqa/checkpoint.hpp"
#include "gvqa/core.hpp"
#include "gvqa/data.hpp"
#include "gvqa/grounding_format.hpp"
#include "gvqa/judge.hpp"
#include "gvqa/metrics.hpp"
#include "gvqa/model.hpp"
#include "gvqa/pipeline.hpp"
#include "gvqa/rng.hpp"
#include "gvqa/tokenizer.hpp"
#include "gvqa/training.hpp"
#include "gvqa/weaksup.hpp"

namespace fs = std::filesystem;
using namespace gvqa;

namespace {

// ---------------------------------------------------------------------------
// Option handling. All values are strings until extraction so a config file
// can override any flag uniformly.
// ---------------------------------------------------------------------------

struct Options {
  std::string command;
  std::map<std::string, std::string> kv;

  void set_default(const std::string& key, const std::string& value) { kv[key] = value; }

  const std::string& str(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw DomainError("missing option: " + key);
    return it->second;
  }
  bool has(const std::string& key) const {
    auto it = kv.find(key);
    return it != kv.end() && !it->second.empty();
  }
  uint64_t u64(const std::string& key) const {
    try {
      return std::stoull(str(key));
    } catch (const std::exception&) {
      throw DomainError("option " + key + " expects an unsigned integer, got " + str(key));
    }
  }
  int int_(const std::string& key) const {
    try {
      return std::stoi(str(key));
    } catch (const std::exception&) {
      throw DomainError("option " + key + " expects an integer, got " + str(key));
    }
  }
  double dbl(const std::string& key) const {
    try {
      return std::stod(str(key));
    } catch (const std::exception&) {
      throw DomainError("option " + key + " expects a number, got " + str(key));
    }
  }
  bool on(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "on") return true;
    if (v == "off") return false;
    throw DomainError("option " + key + " expects on|off, got " + v);
  }
};

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// key=value lines, '#' comments. Unknown keys are user errors: a silently
// ignored override is worse than a failing run.
void apply_config_file(Options& o, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open config file: " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw DomainError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (o.kv.find(key) == o.kv.end()) {
      throw DomainError(path + ":" + std::to_string(line_no) + ": unknown config key " + key);
    }
    o.kv[key] = value;
  }
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fingerprint_file(const std::string& path) {
  if (!fs::exists(path)) return "absent";
  return hex64(fnv1a64(read_file_bytes(path)));
}

std::string fingerprint_corpus(const std::string& data_dir) {
  return hex64(fnv1a64(fingerprint_file(data_dir + "/train/manifest.json") + ":" +
                       fingerprint_file(data_dir + "/test/manifest.json")));
}

std::string canonical_config(const Options& o,
                             const std::map<std::string, std::string>& input_fps) {
  std::string s = "command=" + o.command + "\n";
  for (const auto& [k, v] : o.kv) s += k + "=" + v + "\n";
  for (const auto& [k, v] : input_fps) s += "fp." + k + "=" + v + "\n";
  return s;
}

bool stamp_matches(const std::string& out_dir, const std::string& command,
                   const std::string& hash) {
  const std::string path = out_dir + "/" + command + ".done";
  if (!fs::exists(path)) return false;
  return trim(read_file_bytes(path)) == hash;
}

void write_stamp(const std::string& out_dir, const std::string& command,
                 const std::string& hash) {
  std::ofstream out(out_dir + "/" + command + ".done", std::ios::binary);
  out << hash << "\n";
}

void write_run_manifest(const std::string& out_dir, const Options& o, const std::string& hash,
                        const std::map<std::string, std::string>& inputs,
                        const std::map<std::string, std::string>& outputs, double wall_s) {
  nlohmann::ordered_json j;
  j["command"] = o.command;
  j["config_hash"] = hash;
  j["config"] = o.kv;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["wall_s"] = wall_s;
  std::ofstream out(out_dir + "/" + o.command + ".run.json", std::ios::binary);
  if (!out) throw DomainError("cannot write run manifest in " + out_dir);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Shared extraction helpers
// ---------------------------------------------------------------------------

TimeRepresentation representation_of(const Options& o) {
  const std::string& v = o.str("representation");
  if (v == "0-100") return TimeRepresentation::kScale100;
  if (v == "0-1") return TimeRepresentation::kUnit;
  throw DomainError("representation expects 0-100|0-1, got " + v);
}

std::pair<int, int> frames_pair_of(const Options& o) {
  const std::string& v = o.str("frames");
  const size_t comma = v.find(',');
  if (comma == std::string::npos) throw DomainError("frames expects DENSE,SPARSE, got " + v);
  try {
    return {std::stoi(trim(v.substr(0, comma))), std::stoi(trim(v.substr(comma + 1)))};
  } catch (const std::exception&) {
    throw DomainError("frames expects DENSE,SPARSE, got " + v);
  }
}

std::unique_ptr<Judge> judge_of(const Options& o) {
  JudgeConfig cfg;
  const std::string& backend = o.str("judge");
  if (backend == "lexical") {
    cfg.backend = JudgeBackend::kLexical;
  } else if (backend == "remote") {
    cfg.backend = JudgeBackend::kRemoteChat;
  } else {
    throw DomainError("judge expects lexical|remote, got " + backend);
  }
  if (o.has("judge-endpoint")) cfg.endpoint = o.str("judge-endpoint");
  if (o.has("judge-model")) cfg.model_name = o.str("judge-model");
  cfg.seed = o.u64("seed");
  return make_judge(cfg);
}

DatasetManifest load_split(const std::string& data_dir, const std::string& split) {
  const std::string path = data_dir + "/" + split + "/manifest.json";
  if (!fs::exists(path)) throw DomainError("no manifest at " + path);
  return load_manifest(path);
}

StageConfig stage_config_of(const Options& o, Stage stage) {
  StageConfig cfg = o.str("preset") == "full" ? StageConfig::full_scale(stage)
                                              : StageConfig::desk(stage);
  if (o.has("epochs")) cfg.epochs = o.int_("epochs");
  if (o.has("lr")) cfg.learning_rate = o.dbl("lr");
  if (o.has("batch")) cfg.batch_size = o.int_("batch");
  cfg.seed = o.u64("seed");
  return cfg;
}

struct LoadedModel {
  CheckpointData ckpt;
  Tokenizer tokenizer;
  VisionEncoder encoder;
  PipelineOptions opts;
};

LoadedModel load_model(const std::string& ckpt_path) {
  if (!fs::exists(ckpt_path)) throw DomainError("no checkpoint at " + ckpt_path);
  CheckpointData data = load_checkpoint(ckpt_path);
  Tokenizer tokenizer = Tokenizer::from_tokens(data.vocab);
  const auto meta_str = [&](const char* key) -> std::string {
    auto it = data.meta.find(key);
    if (it == data.meta.end()) {
      throw DomainError(std::string("checkpoint lacks metadata key ") + key);
    }
    return it->second;
  };
  const int in_dim = std::stoi(meta_str("encoder_in_dim"));
  const int out_dim = std::stoi(meta_str("encoder_out_dim"));
  const uint64_t eseed = std::stoull(meta_str("encoder_seed"));
  VisionEncoder encoder(in_dim, out_dim, eseed);
  PipelineOptions opts;
  opts.representation = meta_str("representation") == "0-1" ? TimeRepresentation::kUnit
                                                            : TimeRepresentation::kScale100;
  opts.use_template = meta_str("template") == "on";
  opts.frame_indices_in_prompt = meta_str("frame_indices") == "on";
  return LoadedModel{std::move(data), std::move(tokenizer), std::move(encoder), opts};
}

std::map<std::string, std::string> model_meta(const Options& o, const VisionEncoder& encoder,
                                              const std::string& data_fp) {
  std::map<std::string, std::string> meta;
  meta["representation"] = o.str("representation");
  meta["template"] = o.str("template");
  meta["frame_indices"] = o.str("frame-indices-in-prompt");
  meta["encoder_seed"] = std::to_string(encoder.seed());
  meta["encoder_in_dim"] = std::to_string(encoder.in_dim());
  meta["encoder_out_dim"] = std::to_string(encoder.out_dim());
  meta["data_fingerprint"] = data_fp;
  return meta;
}

std::string note_for(const LoadedModel& model, const DatasetManifest& data) {
  if (!model.opts.frame_indices_in_prompt) return "";
  return frame_index_note(model.ckpt.state.connector_cfg, model.ckpt.state.connector_mode,
                          static_cast<size_t>(data.frames_per_video));
}

// ---------------------------------------------------------------------------
// Commands. Each returns the outputs map for the run manifest.
// ---------------------------------------------------------------------------

std::map<std::string, std::string> cmd_synth(const Options& o) {
  SyntheticSpec spec;
  spec.n_videos = o.int_("train-videos");
  spec.n_test_videos = o.int_("test-videos");
  spec.feature_dim = o.int_("feature-dim");
  spec.events_per_video = o.int_("events");
  spec.noise_std = o.dbl("noise");
  spec.motif_amplitude = o.dbl("amplitude");
  spec.long_event_fraction = o.dbl("long-fraction");
  spec.empty_fraction = o.dbl("empty-fraction");
  spec.min_event_length = o.int_("min-event");
  spec.max_event_length = o.int_("max-event");
  spec.seed = o.u64("seed");
  const std::string& out = o.str("out");
  generate_synthetic(spec, out);
  const std::string fp = fingerprint_corpus(out);
  std::cout << "corpus written to " << out << "\n";
  std::cout << "corpus hash " << fp << "\n";
  return {{"train_manifest", fingerprint_file(out + "/train/manifest.json")},
          {"test_manifest", fingerprint_file(out + "/test/manifest.json")}};
}

std::map<std::string, std::string> cmd_align(const Options& o) {
  const std::string& out = o.str("out");
  DatasetManifest train = load_split(o.str("data"), "train");
  const Tokenizer tokenizer = build_tokenizer(train);

  const auto [dense, sparse] = frames_pair_of(o);
  ConnectorConfig ccfg;
  ccfg.dense_frames = dense;
  ccfg.sparse_frames = sparse;
  ccfg.feature_dim = train.feature_dim;
  DecoderConfig dcfg;
  dcfg.vocab_size = tokenizer.vocab_size();

  const uint64_t seed = o.u64("seed");
  ModelState state = init_model(ccfg, dcfg, seed);
  state.connector_mode = connector_mode_from_string(o.str("connector"));
  state.preset = o.str("preset");

  VisionEncoder encoder(train.feature_dim, ccfg.feature_dim,
                        fnv1a64("vision-encoder") ^ seed);
  FeatureCache cache(train, encoder, ccfg);
  const TimeRepresentation rep = representation_of(o);
  const bool use_template = o.on("template");
  const std::string note =
      o.on("frame-indices-in-prompt")
          ? frame_index_note(ccfg, state.connector_mode,
                             static_cast<size_t>(train.frames_per_video))
          : "";

  StageConfig pre = stage_config_of(o, Stage::kTextPretrain);
  if (o.has("pretrain-epochs")) pre.epochs = o.int_("pretrain-epochs");
  pre.prompt_note = note;
  StageResult pre_result =
      run_text_pretrain(state, pre, train, tokenizer, cache, rep, use_template);
  std::cout << "text_pretrain: " << pre_result.steps << " steps, final loss "
            << pre_result.final_loss << "\n";

  StageConfig al = stage_config_of(o, Stage::kAlign);
  al.prompt_note = note;
  StageResult al_result = run_align(state, al, train, tokenizer, cache, use_template);
  std::cout << "align: " << al_result.steps << " steps, final loss " << al_result.final_loss
            << "\n";

  const std::string ckpt_path = out + "/align.ckpt";
  save_checkpoint(ckpt_path, state, tokenizer.tokens(),
                  model_meta(o, encoder, fingerprint_corpus(o.str("data"))));
  TrainLog log = pre_result.log;
  log.insert(log.end(), al_result.log.begin(), al_result.log.end());
  save_train_log(out + "/align_log.jsonl", log);
  return {{"checkpoint", fingerprint_file(ckpt_path)},
          {"train_log", fingerprint_file(out + "/align_log.jsonl")}};
}

std::map<std::string, std::string> cmd_pseudo(const Options& o) {
  const std::string& out = o.str("out");
  LoadedModel model = load_model(o.str("ckpt"));
  if (!has_stage(model.ckpt.state, "align")) {
    throw DomainError("pseudo requires a checkpoint that finished the align stage");
  }
  DatasetManifest train = load_split(o.str("data"), "train");
  Pipeline pipeline(model.ckpt.state, model.tokenizer, model.encoder, train, model.opts);
  const auto judge = judge_of(o);

  SegmentSamplingPolicy policy;
  policy.segments_per_video = o.int_("segments-per-video");
  policy.min_length_frac = o.dbl("min-length-frac");
  policy.max_length_frac = o.dbl("max-length-frac");
  policy.seed = o.u64("seed");

  const std::vector<PseudoLabel> labels = make_pseudo_labels(pipeline, train, policy, *judge);
  const std::string path = out + "/labels.jsonl";
  save_labels(path, labels);
  size_t with_gt = 0;
  for (const PseudoLabel& l : labels) with_gt += l.gt_answer.has_value() ? 1 : 0;
  std::cout << "pseudo labels: " << labels.size() << " (" << with_gt
            << " matched to annotations)\n";
  return {{"labels", fingerprint_file(path)}};
}

std::map<std::string, std::string> cmd_ground(const Options& o) {
  const std::string& out = o.str("out");
  LoadedModel model = load_model(o.str("ckpt"));
  DatasetManifest train = load_split(o.str("data"), "train");
  const std::vector<PseudoLabel> labels = load_labels(o.str("labels"));
  FeatureCache cache(train, model.encoder, model.ckpt.state.connector_cfg);

  StageConfig cfg = stage_config_of(o, Stage::kGround);
  cfg.prompt_note = note_for(model, train);
  StageResult result = run_ground(model.ckpt.state, cfg, train, labels, model.tokenizer, cache,
                                  model.opts.representation, model.opts.use_template);
  std::cout << "ground: " << result.steps << " steps, final loss " << result.final_loss << "\n";

  const std::string ckpt_path = out + "/ground.ckpt";
  save_checkpoint(ckpt_path, model.ckpt.state, model.tokenizer.tokens(), model.ckpt.meta);
  save_train_log(out + "/ground_log.jsonl", result.log);
  return {{"checkpoint", fingerprint_file(ckpt_path)},
          {"train_log", fingerprint_file(out + "/ground_log.jsonl")}};
}

std::map<std::string, std::string> cmd_consist(const Options& o) {
  const std::string& out = o.str("out");
  LoadedModel model = load_model(o.str("ckpt"));
  DatasetManifest train = load_split(o.str("data"), "train");
  const std::vector<PseudoLabel> labels = load_labels(o.str("labels"));
  Pipeline pipeline(model.ckpt.state, model.tokenizer, model.encoder, train, model.opts);
  const auto judge = judge_of(o);

  const FilterResult filtered = consistency_filter(pipeline, labels, train, *judge);
  std::vector<PseudoLabel> annotated = filtered.accepted;
  annotated.insert(annotated.end(), filtered.rejected.begin(), filtered.rejected.end());
  const std::string labels_path = out + "/labels_filtered.jsonl";
  save_labels(labels_path, annotated);
  std::cout << "consistency filter: " << filtered.accepted.size() << " accepted, "
            << filtered.rejected.size() << " rejected\n";
  if (filtered.accepted.empty()) {
    throw DomainError("consistency filter accepted no labels; nothing to train on");
  }

  FeatureCache cache(train, model.encoder, model.ckpt.state.connector_cfg);
  StageConfig cfg = stage_config_of(o, Stage::kConsist);
  cfg.prompt_note = note_for(model, train);
  StageResult result =
      run_consist(model.ckpt.state, cfg, train, filtered.accepted, model.tokenizer, cache,
                  model.opts.representation, model.opts.use_template, o.on("mix-qa"));
  std::cout << "consist: " << result.steps << " steps, final loss " << result.final_loss << "\n";

  const std::string ckpt_path = out + "/consist.ckpt";
  save_checkpoint(ckpt_path, model.ckpt.state, model.tokenizer.tokens(), model.ckpt.meta);
  save_train_log(out + "/consist_log.jsonl", result.log);
  return {{"checkpoint", fingerprint_file(ckpt_path)},
          {"labels_filtered", fingerprint_file(labels_path)},
          {"train_log", fingerprint_file(out + "/consist_log.jsonl")}};
}

std::map<std::string, std::string> cmd_eval(const Options& o) {
  const std::string& out = o.str("out");
  DatasetManifest data = load_split(o.str("data"), o.str("split"));
  const auto judge = judge_of(o);

  std::map<std::string, std::string> outputs;
  std::vector<PredictionRecord> preds;
  if (o.has("preds")) {
    preds = load_predictions(o.str("preds"));
  } else if (o.has("ckpt")) {
    LoadedModel model = load_model(o.str("ckpt"));
    Pipeline pipeline(model.ckpt.state, model.tokenizer, model.encoder, data, model.opts);
    preds = pipeline.predict(data.items);
    const std::string preds_path = out + "/predictions.jsonl";
    save_predictions(preds_path, preds);
    outputs["predictions"] = fingerprint_file(preds_path);
  } else {
    throw DomainError("eval needs --preds or --ckpt");
  }

  const MetricsReport report = evaluate(preds, data.items, *judge);
  const std::string flat = report.to_flat_text();
  std::ofstream(out + "/report.txt", std::ios::binary) << flat;
  std::ofstream(out + "/report.json", std::ios::binary) << report.to_json() << "\n";
  std::cout << flat;
  outputs["report_json"] = fingerprint_file(out + "/report.json");
  outputs["report_txt"] = fingerprint_file(out + "/report.txt");
  return outputs;
}

std::map<std::string, std::string> cmd_report(const Options& o) {
  const std::string& out = o.str("out");
  const std::string& run = o.str("run");
  std::ostringstream ss;
  ss << "run summary: " << run << "\n";

  for (const char* stage : {"align", "ground", "consist"}) {
    const std::string log_path = run + "/" + stage + "_log.jsonl";
    if (!fs::exists(log_path)) continue;
    std::ifstream in(log_path);
    std::string line, last;
    size_t steps = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      last = line;
      ++steps;
    }
    if (last.empty()) continue;
    const auto j = nlohmann::json::parse(last, nullptr, false);
    if (j.is_discarded()) continue;
    ss << stage << ": " << steps << " logged steps, final loss " << j.value("loss", 0.0)
       << ", wall " << j.value("wall_s", 0.0) << " s\n";
  }

  for (const char* name : {"labels.jsonl", "labels_filtered.jsonl"}) {
    const std::string path = run + "/" + std::string(name);
    if (!fs::exists(path)) continue;
    const std::vector<PseudoLabel> labels = load_labels(path);
    size_t accepted = 0;
    for (const PseudoLabel& l : labels) accepted += l.accepted ? 1 : 0;
    ss << name << ": " << labels.size() << " labels";
    if (accepted > 0) ss << ", " << accepted << " accepted";
    ss << "\n";
  }

  const std::string report_path = run + "/report.txt";
  if (fs::exists(report_path)) {
    ss << "metrics:\n";
    std::istringstream in(read_file_bytes(report_path));
    std::string line;
    while (std::getline(in, line)) ss << "  " << line << "\n";
  }

  const std::string text = ss.str();
  std::ofstream(out + "/summary.txt", std::ios::binary) << text;
  std::cout << text;
  return {{"summary", fingerprint_file(out + "/summary.txt")}};
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  Options options;
  std::string config_path;
  std::map<std::string, CLI::Option*> flag_of;
  std::map<std::string, std::string> flag_values;
};

void add_key(Command& c, const std::string& key, const std::string& default_value,
             const std::string& help) {
  c.options.set_default(key, default_value);
  c.flag_values[key] = default_value;
  c.flag_of[key] = c.app->add_option("--" + key, c.flag_values[key], help);
}

void add_common(Command& c) {
  c.app->add_option("--config", c.config_path, "key=value file; overrides flags");
  add_key(c, "seed", "1", "run seed");
  add_key(c, "out", "", "output directory");
  c.flag_of["out"]->required();
}

void add_judge_keys(Command& c) {
  add_key(c, "judge", "lexical", "judge backend: lexical|remote");
  add_key(c, "judge-endpoint", "", "remote judge chat endpoint URL");
  add_key(c, "judge-model", "", "remote judge model name");
}

void add_ablation_keys(Command& c) {
  add_key(c, "frames", "16,4", "dense,sparse frame counts");
  add_key(c, "representation", "0-100", "segment text range: 0-100|0-1");
  add_key(c, "template", "on", "format instruction in prompts: on|off");
  add_key(c, "connector", "multi", "branches: multi|dense_only|sparse_only");
  add_key(c, "frame-indices-in-prompt", "off", "spell sampled frame positions: on|off");
  add_key(c, "preset", "desk", "hyperparameter preset: desk|full");
}

void add_stage_keys(Command& c) {
  add_key(c, "epochs", "", "override stage epochs");
  add_key(c, "lr", "", "override stage peak learning rate");
  add_key(c, "batch", "", "override stage batch size");
}

int dispatch(Command& c) {
  // Flags first, then the config file on top: the file wins.
  for (auto& [key, opt] : c.flag_of) {
    if (opt->count() > 0) c.options.kv[key] = c.flag_values[key];
  }
  c.options.command = c.name;
  if (!c.config_path.empty()) apply_config_file(c.options, c.config_path);

  const Options& o = c.options;
  const std::string& out = o.str("out");
  fs::create_directories(out);

  std::map<std::string, std::string> inputs;
  if (o.has("data")) inputs["data"] = fingerprint_corpus(o.str("data"));
  if (o.has("ckpt")) inputs["ckpt"] = fingerprint_file(o.str("ckpt"));
  if (o.has("labels")) inputs["labels"] = fingerprint_file(o.str("labels"));
  if (o.has("preds")) inputs["preds"] = fingerprint_file(o.str("preds"));
  if (o.has("run")) inputs["run"] = "dir";

  const std::string hash = hex64(fnv1a64(canonical_config(o, inputs)));
  if (stamp_matches(out, c.name, hash)) {
    std::cout << "notice: " << c.name << " already complete in " << out << " (config " << hash
              << "); skipping\n";
    return 0;
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, std::string> outputs;
  if (c.name == "synth") outputs = cmd_synth(o);
  else if (c.name == "align") outputs = cmd_align(o);
  else if (c.name == "pseudo") outputs = cmd_pseudo(o);
  else if (c.name == "ground") outputs = cmd_ground(o);
  else if (c.name == "consist") outputs = cmd_consist(o);
  else if (c.name == "eval") outputs = cmd_eval(o);
  else if (c.name == "report") outputs = cmd_report(o);
  else throw DomainError("unknown command " + c.name);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_run_manifest(out, o, hash, inputs, outputs, wall);
  write_stamp(out, c.name, hash);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grounded video QA pipeline"};
  app.require_subcommand(1);

  std::vector<Command> commands(7);
  const char* names[] = {"synth", "align", "pseudo", "ground", "consist", "eval", "report"};
  const char* helps[] = {"generate the synthetic corpus",
                         "text pretraining + connector alignment",
                         "generate pseudo labels from an aligned checkpoint",
                         "train on unfiltered pseudo labels",
                         "filter pseudo labels and run the final stage",
                         "evaluate a checkpoint or a predictions file",
                         "summarize a run directory"};
  for (size_t i = 0; i < commands.size(); ++i) {
    commands[i].name = names[i];
    commands[i].app = app.add_subcommand(names[i], helps[i]);
    add_common(commands[i]);
  }

  Command& synth = commands[0];
  add_key(synth, "train-videos", "50", "training videos");
  add_key(synth, "test-videos", "20", "test videos");
  add_key(synth, "feature-dim", "32", "frame feature dimension");
  add_key(synth, "events", "3", "events per regular video");
  add_key(synth, "noise", "0.05", "background noise std");
  add_key(synth, "amplitude", "1.0", "motif amplitude");
  add_key(synth, "long-fraction", "0.2", "fraction of videos with one long event");
  add_key(synth, "empty-fraction", "0.15", "fraction of event-free videos");
  add_key(synth, "min-event", "8", "minimum event length, timeline units");
  add_key(synth, "max-event", "60", "maximum event length, timeline units");

  Command& align = commands[1];
  add_key(align, "data", "", "corpus directory (train/ + test/)");
  align.flag_of["data"]->required();
  add_ablation_keys(align);
  add_stage_keys(align);
  add_key(align, "pretrain-epochs", "", "override text pretraining epochs");

  Command& pseudo = commands[2];
  add_key(pseudo, "data", "", "corpus directory");
  pseudo.flag_of["data"]->required();
  add_key(pseudo, "ckpt", "", "aligned checkpoint");
  pseudo.flag_of["ckpt"]->required();
  add_judge_keys(pseudo);
  add_key(pseudo, "segments-per-video", "6", "sampled segments per video");
  add_key(pseudo, "min-length-frac", "0.1", "minimum segment length fraction");
  add_key(pseudo, "max-length-frac", "0.8", "maximum segment length fraction");

  Command& ground = commands[3];
  add_key(ground, "data", "", "corpus directory");
  ground.flag_of["data"]->required();
  add_key(ground, "ckpt", "", "aligned checkpoint");
  ground.flag_of["ckpt"]->required();
  add_key(ground, "labels", "", "pseudo label file");
  ground.flag_of["labels"]->required();
  add_key(ground, "preset", "desk", "hyperparameter preset: desk|full");
  add_stage_keys(ground);

  Command& consist = commands[4];
  add_key(consist, "data", "", "corpus directory");
  consist.flag_of["data"]->required();
  add_key(consist, "ckpt", "", "grounded checkpoint");
  consist.flag_of["ckpt"]->required();
  add_key(consist, "labels", "", "pseudo label file");
  consist.flag_of["labels"]->required();
  add_judge_keys(consist);
  add_key(consist, "preset", "desk", "hyperparameter preset: desk|full");
  add_stage_keys(consist);
  add_key(consist, "mix-qa", "on", "mix annotation QA pairs into the final stage: on|off");

  Command& eval = commands[5];
  add_key(eval, "data", "", "corpus directory");
  eval.flag_of["data"]->required();
  add_key(eval, "split", "test", "split to evaluate: train|test");
  add_key(eval, "ckpt", "", "checkpoint to generate predictions with");
  add_key(eval, "preds", "", "existing predictions file (skips generation)");
  add_judge_keys(eval);

  Command& report = commands[6];
  add_key(report, "run", "", "run directory to summarize");
  report.flag_of["run"]->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (Command& c : commands) {
      if (c.app->parsed()) return dispatch(c);
    }
    throw DomainError("no command given");
  } catch (const TrainingError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const JudgeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
