// SPDX-License-Identifier: Apache-2.0
#include "gvqa/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace gvqa {

namespace {

constexpr char kMagic[8] = {'G', 'V', 'Q', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

uint64_t read_u64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

nlohmann::ordered_json connector_json(const ConnectorConfig& c) {
  return {{"dense_frames", c.dense_frames},
          {"sparse_frames", c.sparse_frames},
          {"feature_dim", c.feature_dim},
          {"hidden_channels", c.hidden_channels},
          {"temporal_kernel", c.temporal_kernel},
          {"output_tokens_per_branch", c.output_tokens_per_branch},
          {"embed_dim", c.embed_dim}};
}

ConnectorConfig connector_from_json(const nlohmann::json& j) {
  ConnectorConfig c;
  c.dense_frames = j.at("dense_frames").get<int>();
  c.sparse_frames = j.at("sparse_frames").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.hidden_channels = j.at("hidden_channels").get<int>();
  c.temporal_kernel = j.at("temporal_kernel").get<int>();
  c.output_tokens_per_branch = j.at("output_tokens_per_branch").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  return c;
}

nlohmann::ordered_json decoder_json(const DecoderConfig& d) {
  return {{"vocab_size", d.vocab_size},   {"embed_dim", d.embed_dim},
          {"n_layers", d.n_layers},       {"n_heads", d.n_heads},
          {"mlp_hidden", d.mlp_hidden},   {"max_seq_len", d.max_seq_len}};
}

DecoderConfig decoder_from_json(const nlohmann::json& j) {
  DecoderConfig d;
  d.vocab_size = j.at("vocab_size").get<int>();
  d.embed_dim = j.at("embed_dim").get<int>();
  d.n_layers = j.at("n_layers").get<int>();
  d.n_heads = j.at("n_heads").get<int>();
  d.mlp_hidden = j.at("mlp_hidden").get<int>();
  d.max_seq_len = j.at("max_seq_len").get<int>();
  return d;
}

ParamGroup group_from_string(const std::string& s) {
  if (s == "embedder") return ParamGroup::kEmbedder;
  if (s == "connector") return ParamGroup::kConnector;
  if (s == "decoder") return ParamGroup::kDecoder;
  throw DomainError("checkpoint: unknown parameter group " + s);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state,
                     const std::vector<std::string>& vocab,
                     const std::map<std::string, std::string>& meta) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";

  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DomainError("checkpoint: cannot open " + tmp.string() + " for writing");

    nlohmann::ordered_json header;
    header["connector"] = connector_json(state.connector_cfg);
    header["decoder"] = decoder_json(state.decoder_cfg);
    header["connector_mode"] = to_string(state.connector_mode);
    header["preset"] = state.preset;
    header["vocab"] = vocab;
    header["stage_history"] = state.stage_history;
    header["freeze"] = state.freeze;
    header["meta"] = meta;
    const std::string h = header.dump();

    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u64(out, h.size());
    out.write(h.data(), static_cast<std::streamsize>(h.size()));

    write_u32(out, static_cast<uint32_t>(state.params.entries().size()));
    for (const auto& e : state.params.entries()) {
      write_u32(out, static_cast<uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      const std::string g = to_string(e.group);
      write_u32(out, static_cast<uint32_t>(g.size()));
      out.write(g.data(), static_cast<std::streamsize>(g.size()));
      write_u32(out, static_cast<uint32_t>(e.shape.size()));
      for (size_t d : e.shape) write_u64(out, d);
      write_u64(out, e.w.size());
      out.write(reinterpret_cast<const char*>(e.w.data()),
                static_cast<std::streamsize>(e.w.size() * sizeof(double)));
    }
    if (!out) throw DomainError("checkpoint: short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("checkpoint: cannot open " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DomainError("checkpoint: bad magic in " + path);
  }
  const uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw DomainError("checkpoint: unsupported version " + std::to_string(version));
  }
  const uint64_t hlen = read_u64(in);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DomainError("checkpoint: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const std::exception& e) {
    throw DomainError(std::string("checkpoint: malformed header: ") + e.what());
  }

  CheckpointData data;
  data.state.connector_cfg = connector_from_json(header.at("connector"));
  data.state.decoder_cfg = decoder_from_json(header.at("decoder"));
  data.state.connector_mode =
      connector_mode_from_string(header.at("connector_mode").get<std::string>());
  data.state.preset = header.at("preset").get<std::string>();
  data.vocab = header.at("vocab").get<std::vector<std::string>>();
  data.state.stage_history = header.at("stage_history").get<std::vector<std::string>>();
  data.state.freeze = header.at("freeze").get<std::map<std::string, bool>>();
  data.meta = header.at("meta").get<std::map<std::string, std::string>>();

  const uint32_t n_entries = read_u32(in);
  for (uint32_t i = 0; i < n_entries; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t group_len = read_u32(in);
    std::string group(group_len, '\0');
    in.read(group.data(), group_len);
    const uint32_t shape_len = read_u32(in);
    std::vector<size_t> shape(shape_len);
    for (uint32_t d = 0; d < shape_len; ++d) shape[d] = read_u64(in);
    const uint64_t n = read_u64(in);
    auto& e = data.state.params.add(name, group_from_string(group), shape);
    if (e.w.size() != n) {
      throw DomainError("checkpoint: size mismatch for parameter " + name);
    }
    in.read(reinterpret_cast<char*>(e.w.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw DomainError("checkpoint: truncated array " + name);
  }
  return data;
}

}  // namespace gvqa
