// SPDX-License-Identifier: Apache-2.0
#include "gvqa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gvqa/rng.hpp"

namespace fs = std::filesystem;

namespace gvqa {

// ---------------------------------------------------------------------------
// Manifest IO
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
  for (size_t i = 0; i < items.size(); ++i) {
    if (!videos.count(items[i].video_id)) {
      throw DomainError("manifest: item " + std::to_string(i) + " references unknown video " +
                        items[i].video_id);
    }
  }
}

namespace {

[[noreturn]] void schema_error(const std::string& path, size_t line_no, const std::string& what) {
  throw DomainError(path + ":" + std::to_string(line_no) + ": " + what);
}

QAItem parse_item(const nlohmann::json& j, const std::string& path, size_t line_no) {
  QAItem item;
  if (!j.contains("video_id") || !j.at("video_id").is_string()) {
    schema_error(path, line_no, "item field 'video_id' must be a string");
  }
  if (!j.contains("question") || !j.at("question").is_string()) {
    schema_error(path, line_no, "item field 'question' must be a string");
  }
  if (!j.contains("answer") || !j.at("answer").is_string()) {
    schema_error(path, line_no, "item field 'answer' must be a string");
  }
  item.video_id = j.at("video_id").get<std::string>();
  item.question = j.at("question").get<std::string>();
  item.gt_answer = j.at("answer").get<std::string>();

  if (j.contains("options")) {
    if (!j.at("options").is_array() || j.at("options").size() != 5) {
      schema_error(path, line_no, "item field 'options' must be an array of exactly 5 strings");
    }
    std::vector<std::string> opts;
    for (const auto& o : j.at("options")) {
      if (!o.is_string()) {
        schema_error(path, line_no, "item field 'options' must contain only strings");
      }
      opts.push_back(o.get<std::string>());
    }
    item.options = std::move(opts);
  }

  if (j.contains("question_type")) {
    const auto s = j.at("question_type").get<std::string>();
    const auto t = question_type_from_string(s);
    if (!t) schema_error(path, line_no, "unknown question_type '" + s + "'");
    item.question_type = *t;
  }

  if (j.contains("gt_segment")) {
    const auto& seg = j.at("gt_segment");
    if (!seg.is_array() || seg.size() != 2 || !seg[0].is_number_integer() ||
        !seg[1].is_number_integer()) {
      schema_error(path, line_no, "item field 'gt_segment' must be [start, end] integers");
    }
    try {
      item.set_gt_segment(TemporalSegment(seg[0].get<int>(), seg[1].get<int>()));
    } catch (const DomainError& e) {
      schema_error(path, line_no, e.what());
    }
  }

  try {
    item.validate();
  } catch (const DomainError& e) {
    schema_error(path, line_no, e.what());
  }
  return item;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("manifest: cannot open " + path);

  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();

  std::string line;
  if (!std::getline(in, line)) throw DomainError("manifest: " + path + " is empty");
  m.header_line = line;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    schema_error(path, 1, std::string("malformed header: ") + e.what());
  }
  m.name = header.value("name", "");
  m.split = header.value("split", "");
  m.feature_dim = header.value("feature_dim", 0);
  m.frames_per_video = header.value("frames_per_video", 0);
  if (header.contains("videos")) {
    if (!header.at("videos").is_object()) schema_error(path, 1, "'videos' must be an object");
    for (const auto& [id, v] : header.at("videos").items()) {
      VideoSource src;
      src.path = v.value("path", "");
      src.duration_seconds = v.value("duration_seconds", 0.0);
      src.caption = v.value("caption", "");
      m.videos[id] = src;
    }
  }

  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      schema_error(path, line_no, std::string("malformed item: ") + e.what());
    }
    m.items.push_back(parse_item(j, path, line_no));
    m.item_lines.push_back(line);
  }
  m.validate();
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DomainError("manifest: cannot open " + path + " for writing");
  out << m.header_line << "\n";
  for (const auto& line : m.item_lines) out << line << "\n";
  if (!out) throw DomainError("manifest: short write to " + path);
}

// ---------------------------------------------------------------------------
// Frame files
// ---------------------------------------------------------------------------

namespace {
constexpr char kFrameMagic[8] = {'G', 'V', 'Q', 'A', 'F', 'R', 'M', '1'};
}

void save_video_frames(const std::string& path, const VideoRecord& video) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DomainError("frames: cannot open " + path + " for writing");
  const uint32_t n = static_cast<uint32_t>(video.frame_count());
  const uint32_t d = static_cast<uint32_t>(video.feature_dim());
  out.write(kFrameMagic, sizeof(kFrameMagic));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  for (const auto& row : video.frames) {
    if (row.size() != d) throw DomainError("frames: ragged feature rows in " + video.video_id);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(d * sizeof(float)));
  }
  if (!out) throw DomainError("frames: short write to " + path);
}

VideoRecord load_video_frames(const std::string& path, const std::string& video_id,
                              double duration_seconds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("frames: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kFrameMagic, sizeof(kFrameMagic)) != 0) {
    throw DomainError("frames: bad magic in " + path);
  }
  uint32_t n = 0, d = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  in.read(reinterpret_cast<char*>(&d), sizeof(d));
  if (!in || d == 0) throw DomainError("frames: bad header in " + path);
  VideoRecord v;
  v.video_id = video_id;
  v.duration_seconds = duration_seconds;
  v.frames.assign(n, std::vector<float>(d, 0.0f));
  for (auto& row : v.frames) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(d * sizeof(float)));
  }
  if (!in) throw DomainError("frames: truncated data in " + path);
  return v;
}

VideoRecord load_video(const DatasetManifest& m, const std::string& video_id) {
  auto cached = m.frames_cache.find(video_id);
  if (cached != m.frames_cache.end()) return cached->second;
  auto it = m.videos.find(video_id);
  if (it == m.videos.end()) throw DomainError("manifest: unknown video " + video_id);
  const fs::path p = fs::path(m.base_dir) / it->second.path;
  return load_video_frames(p.string(), video_id, it->second.duration_seconds);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (n_videos < 1 || n_test_videos < 0) throw DomainError("SyntheticSpec: bad video counts");
  if (frames_per_video < 1) throw DomainError("SyntheticSpec: frames_per_video must be >= 1");
  if (feature_dim < 1) throw DomainError("SyntheticSpec: feature_dim must be >= 1");
  if (events_per_video < 1) throw DomainError("SyntheticSpec: events_per_video must be >= 1");
  if (noise_std < 0.0) throw DomainError("SyntheticSpec: noise_std must be >= 0");
  if (min_event_length < 1 || max_event_length > 100 || min_event_length > max_event_length) {
    throw DomainError("SyntheticSpec: event length range must lie within [1, 100]");
  }
  if (long_event_fraction < 0.0 || long_event_fraction > 1.0) {
    throw DomainError("SyntheticSpec: long_event_fraction must be in [0, 1]");
  }
  if (empty_fraction < 0.0 || empty_fraction > 0.9) {
    throw DomainError("SyntheticSpec: empty_fraction must be in [0, 0.9]");
  }
}

std::vector<MotifSpec> default_motifs() {
  auto tpl = [](const std::string& cue) {
    return std::vector<std::string>{"What happens near the " + cue + "?",
                                    "What do they do by the " + cue + "?"};
  };
  return {
      {"m0", "pour tea", tpl("kettle")},      {"m1", "slice bread", tpl("knife")},
      {"m2", "open umbrella", tpl("rain")},   {"m3", "ride bicycle", tpl("street")},
      {"m4", "stack boxes", tpl("shelf")},    {"m5", "wave flag", tpl("parade")},
      {"m6", "fold laundry", tpl("basket")},  {"m7", "bounce ball", tpl("court")},
      {"m8", "light candle", tpl("cake")},    {"m9", "sweep floor", tpl("broom")},
  };
}

namespace {

struct PlantedEvent {
  int motif = 0;
  TemporalSegment window;
};

std::vector<std::vector<double>> draw_motif_vectors(const SyntheticSpec& spec, size_t n_motifs,
                                                    Rng& rng) {
  std::vector<std::vector<double>> vecs;
  for (size_t m = 0; m < n_motifs; ++m) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000) {
        throw DomainError("synthetic: cannot place motif vectors at the requested distance");
      }
      std::vector<double> v(static_cast<size_t>(spec.feature_dim));
      double norm = 0.0;
      for (double& x : v) {
        x = rng.gauss();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : v) x = spec.motif_amplitude * x / norm;
      bool ok = true;
      for (const auto& other : vecs) {
        double d2 = 0.0;
        for (size_t i = 0; i < v.size(); ++i) {
          const double d = v[i] - other[i];
          d2 += d * d;
        }
        if (std::sqrt(d2) < spec.min_motif_distance) {
          ok = false;
          break;
        }
      }
      if (ok) {
        vecs.push_back(std::move(v));
        break;
      }
    }
  }
  return vecs;
}

// Draws one video's event windows: lengths from the configured range (one
// long event instead, for a seeded fraction of videos), starts by rejection
// so windows never overlap.
std::vector<PlantedEvent> plant_events(const SyntheticSpec& spec, size_t n_motifs, Rng& rng) {
  // Event-free videos give the pipeline clips whose honest description is
  // "nothing"; without them every window would look like it must contain an
  // activity.
  if (rng.uniform() < spec.empty_fraction) return {};
  const bool long_video = rng.uniform() < spec.long_event_fraction;
  const int n_events = long_video ? 1 : spec.events_per_video;

  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<int> lengths;
    for (int e = 0; e < n_events; ++e) {
      if (long_video) {
        lengths.push_back(rng.uniform_int(71, 88));
      } else {
        lengths.push_back(rng.uniform_int(spec.min_event_length, spec.max_event_length));
      }
    }
    int total = 0;
    for (int l : lengths) total += l;
    if (total > 100) continue;

    std::vector<std::pair<int, int>> windows;  // [start, end)
    bool ok = true;
    for (int l : lengths) {
      bool placed = false;
      for (int tries = 0; tries < 50 && !placed; ++tries) {
        const int s = rng.uniform_int(0, 100 - l);
        bool overlap = false;
        for (const auto& [ws, we] : windows) {
          if (s < we && ws < s + l) {
            overlap = true;
            break;
          }
        }
        if (!overlap) {
          windows.emplace_back(s, s + l);
          placed = true;
        }
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    std::sort(windows.begin(), windows.end());
    std::vector<PlantedEvent> events;
    std::vector<int> motif_order;
    for (size_t m = 0; m < n_motifs; ++m) motif_order.push_back(static_cast<int>(m));
    // Distinct motifs per video so captions and answers are unambiguous.
    for (size_t i = 0; i + 1 < motif_order.size(); ++i) {
      const size_t j = i + static_cast<size_t>(rng.uniform_int(
                               0, static_cast<int>(motif_order.size() - i - 1)));
      std::swap(motif_order[i], motif_order[j]);
    }
    for (size_t e = 0; e < windows.size(); ++e) {
      PlantedEvent ev;
      ev.motif = motif_order[e % motif_order.size()];
      ev.window = TemporalSegment(windows[e].first, windows[e].second);
      events.push_back(ev);
    }
    return events;
  }
  throw DomainError("synthetic: event packing infeasible for events_per_video=" +
                    std::to_string(spec.events_per_video) + " with lengths in [" +
                    std::to_string(spec.min_event_length) + ", " +
                    std::to_string(spec.max_event_length) + "]");
}

DatasetManifest build_split(const SyntheticSpec& spec, const std::string& split, int n_videos,
                            const std::vector<MotifSpec>& motifs,
                            const std::vector<std::vector<double>>& motif_vecs, Rng& rng,
                            bool expose_gt) {
  DatasetManifest m;
  m.name = "synthetic";
  m.split = split;
  m.feature_dim = spec.feature_dim;
  m.frames_per_video = spec.frames_per_video;

  int type_cycle = 0;
  const char* type_names[6] = {"why", "how", "present", "past", "future", "other"};

  for (int vi = 0; vi < n_videos; ++vi) {
    char vid[32];
    std::snprintf(vid, sizeof(vid), "%s_%03d", split.c_str(), vi);
    const std::string video_id = vid;
    Rng vrng = rng.fork(fnv1a64(video_id));

    const auto events = plant_events(spec, motifs.size(), vrng);

    VideoRecord video;
    video.video_id = video_id;
    video.duration_seconds = spec.frames_per_video / 10.0;
    video.frames.assign(static_cast<size_t>(spec.frames_per_video),
                        std::vector<float>(static_cast<size_t>(spec.feature_dim), 0.0f));
    for (auto& row : video.frames) {
      for (auto& x : row) x = static_cast<float>(vrng.gauss(0.0, spec.noise_std));
    }
    const double scale = static_cast<double>(spec.frames_per_video) / 100.0;
    for (const auto& ev : events) {
      const int f_lo = static_cast<int>(std::floor(ev.window.start * scale));
      const int f_hi = std::max(f_lo + 1, static_cast<int>(std::ceil(ev.window.end * scale)));
      for (int f = f_lo; f < f_hi && f < spec.frames_per_video; ++f) {
        auto& row = video.frames[static_cast<size_t>(f)];
        const auto& mv = motif_vecs[static_cast<size_t>(ev.motif)];
        for (int d = 0; d < spec.feature_dim; ++d) {
          row[static_cast<size_t>(d)] += static_cast<float>(mv[static_cast<size_t>(d)]);
        }
      }
    }

    std::string caption;
    for (const auto& ev : events) {
      if (!caption.empty()) caption += " then ";
      caption += motifs[static_cast<size_t>(ev.motif)].answer_text;
    }
    if (caption.empty()) caption = "nothing";

    VideoSource src;
    src.path = "frames/" + video_id + ".bin";
    src.duration_seconds = video.duration_seconds;
    src.caption = caption;
    m.videos[video_id] = src;
    m.frames_cache[video_id] = std::move(video);

    for (const auto& ev : events) {
      const auto& motif = motifs[static_cast<size_t>(ev.motif)];
      QAItem item;
      item.video_id = video_id;
      item.question = motif.question_templates[static_cast<size_t>(vrng.uniform_int(
          0, static_cast<int>(motif.question_templates.size()) - 1))];
      item.gt_answer = motif.answer_text;
      item.question_type = *question_type_from_string(type_names[type_cycle % 6]);
      ++type_cycle;

      std::vector<std::string> options = {motif.answer_text};
      std::vector<int> pool;
      for (size_t mi = 0; mi < motifs.size(); ++mi) {
        if (static_cast<int>(mi) != ev.motif) pool.push_back(static_cast<int>(mi));
      }
      for (int k = 0; k < 4; ++k) {
        const size_t pick = static_cast<size_t>(
            vrng.uniform_int(0, static_cast<int>(pool.size()) - 1 - k));
        options.push_back(motifs[static_cast<size_t>(pool[pick])].answer_text);
        std::swap(pool[pick], pool[pool.size() - 1 - static_cast<size_t>(k)]);
      }
      // Deterministic shuffle so the answer is not always option 0.
      for (size_t i = 0; i + 1 < options.size(); ++i) {
        const size_t j = i + static_cast<size_t>(vrng.uniform_int(
                                 0, static_cast<int>(options.size() - i - 1)));
        std::swap(options[i], options[j]);
      }
      item.options = options;
      if (expose_gt) item.set_gt_segment(ev.window);
      item.validate();

      nlohmann::ordered_json j;
      j["video_id"] = item.video_id;
      j["question"] = item.question;
      j["answer"] = item.gt_answer;
      j["options"] = options;
      j["question_type"] = to_string(item.question_type);
      if (expose_gt) j["gt_segment"] = {ev.window.start, ev.window.end};
      m.item_lines.push_back(j.dump());
      m.items.push_back(std::move(item));
    }
  }

  nlohmann::ordered_json header;
  header["schema_version"] = 1;
  header["name"] = m.name;
  header["split"] = m.split;
  header["feature_dim"] = m.feature_dim;
  header["frames_per_video"] = m.frames_per_video;
  nlohmann::ordered_json videos = nlohmann::ordered_json::object();
  for (const auto& [id, src] : m.videos) {
    videos[id] = {{"path", src.path},
                  {"duration_seconds", src.duration_seconds},
                  {"caption", src.caption}};
  }
  header["videos"] = videos;
  m.header_line = header.dump();
  m.validate();
  return m;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto motifs = spec.motif_vocabulary.empty() ? default_motifs() : spec.motif_vocabulary;
  if (motifs.size() < 5) {
    throw DomainError("synthetic: need at least 5 motifs to build 5-option items");
  }
  Rng rng(spec.seed);
  const auto motif_vecs = draw_motif_vectors(spec, motifs.size(), rng);

  SyntheticCorpus corpus;
  Rng train_rng = rng.fork(fnv1a64("train"));
  Rng test_rng = rng.fork(fnv1a64("test"));
  corpus.train = build_split(spec, "train", spec.n_videos, motifs, motif_vecs, train_rng, false);
  corpus.test = build_split(spec, "test", spec.n_test_videos, motifs, motif_vecs, test_rng, true);
  return corpus;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  SyntheticCorpus corpus = generate_synthetic(spec);
  for (DatasetManifest* m : {&corpus.train, &corpus.test}) {
    const fs::path split_dir = fs::path(out_dir) / m->split;
    m->base_dir = split_dir.string();
    save_manifest((split_dir / "manifest.json").string(), *m);
    for (const auto& [id, video] : m->frames_cache) {
      save_video_frames((split_dir / m->videos.at(id).path).string(), video);
    }
  }
  return corpus;
}

}  // namespace gvqa
