// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gvqa/core.hpp"

namespace gvqa {

// ---------------------------------------------------------------------------
// Dataset manifest: a one-line JSON header followed by one JSON item per
// line. Raw lines are kept verbatim so unknown fields survive a
// load -> save round trip byte-for-byte.
// ---------------------------------------------------------------------------

struct VideoSource {
  std::string path;  // frames file, relative to the manifest directory
  double duration_seconds = 0.0;
  std::string caption;  // temporal-order description; no interval content
};

struct DatasetManifest {
  std::string name;
  std::string split;  // "train" or "test"
  int feature_dim = 0;
  int frames_per_video = 0;
  std::vector<QAItem> items;
  std::vector<std::string> item_lines;  // raw JSONL, aligned with items
  std::map<std::string, VideoSource> videos;
  std::string header_line;
  std::string base_dir;  // directory the manifest was loaded from
  std::map<std::string, VideoRecord> frames_cache;  // filled by the generator

  void validate() const;  // every item's video_id must resolve in videos
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

// Frame features for one video: the generator's cache when present, else the
// binary frames file next to the manifest.
VideoRecord load_video(const DatasetManifest& m, const std::string& video_id);

// Binary frame file: magic "GVQAFRM1", u32 frame count, u32 feature dim,
// then row-major little-endian f32 features.
void save_video_frames(const std::string& path, const VideoRecord& video);
VideoRecord load_video_frames(const std::string& path, const std::string& video_id,
                              double duration_seconds);

// ---------------------------------------------------------------------------
// Synthetic corpus with planted events.
// ---------------------------------------------------------------------------

struct MotifSpec {
  std::string motif_id;
  std::string answer_text;
  std::vector<std::string> question_templates;
};

struct SyntheticSpec {
  int n_videos = 50;  // train split
  int n_test_videos = 20;
  int frames_per_video = 100;
  int feature_dim = 32;
  int events_per_video = 3;
  std::vector<MotifSpec> motif_vocabulary;  // empty selects the built-in set
  double noise_std = 0.05;
  double motif_amplitude = 1.0;
  double min_motif_distance = 0.8;  // pairwise L2 between motif vectors
  int min_event_length = 8;   // timeline units
  int max_event_length = 60;
  double long_event_fraction = 0.2;   // videos carrying one >70-unit event
  double empty_fraction = 0.15;       // event-free videos captioned "nothing"
  uint64_t seed = 1;

  void validate() const;
};

// The built-in motif vocabulary: ten two-word activities with disjoint token
// sets, each with cue-word question templates that never contain the answer.
std::vector<MotifSpec> default_motifs();

struct SyntheticCorpus {
  DatasetManifest train;
  DatasetManifest test;
};

// Deterministic under spec.seed. Train items carry no gt_segment; test items
// carry the planted window in the evaluation-side view. Throws DomainError
// when the requested events cannot pack into the timeline.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Also writes <out_dir>/train and <out_dir>/test (manifest.json + frames/).
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace gvqa
