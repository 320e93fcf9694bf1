// SPDX-License-Identifier: Apache-2.0
#include "gvqa/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "gvqa/prompt_assets.hpp"

namespace gvqa {

void JudgeConfig::validate() const {
  if (max_parallel < 1) throw std::invalid_argument("JudgeConfig: max_parallel must be >= 1");
  if (backend == JudgeBackend::kRemoteChat && endpoint.empty()) {
    throw std::invalid_argument("JudgeConfig: remote backend requires an endpoint");
  }
}

std::vector<std::string> normalize_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

double token_f1(const std::string& a, const std::string& b) {
  const auto ta = normalize_tokens(a);
  const auto tb = normalize_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;

  std::map<std::string, int> counts;
  for (const auto& t : ta) ++counts[t];
  int overlap = 0;
  for (const auto& t : tb) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return 2.0 * overlap / static_cast<double>(ta.size() + tb.size());
}

// ---------------------------------------------------------------------------
// Lexical backend
// ---------------------------------------------------------------------------

int LexicalJudge::retrieve_option(const std::string& /*question*/, const std::string& prediction,
                                  const std::vector<std::string>& options) {
  if (options.size() != 5) throw std::invalid_argument("retrieve_option: exactly 5 options required");
  int best = 0;
  double best_f1 = -1.0;
  for (int i = 0; i < 5; ++i) {
    const double f1 = token_f1(prediction, options[static_cast<size_t>(i)]);
    if (f1 > best_f1) {  // ties keep the lowest index
      best_f1 = f1;
      best = i;
    }
  }
  return best;
}

JudgeVerdict LexicalJudge::judge_open(const std::string& /*question*/,
                                      const std::string& prediction,
                                      const std::string& gt_answer) {
  const double f1 = token_f1(prediction, gt_answer);
  JudgeVerdict v;
  v.match = f1 >= threshold_;
  v.score = 1 + static_cast<int>(std::llround(4.0 * f1));
  return v;
}

double LexicalJudge::similarity(const std::string& /*question*/, const std::string& prediction,
                                const std::string& gt_answer) {
  return token_f1(prediction, gt_answer);
}

// ---------------------------------------------------------------------------
// Remote chat backend
// ---------------------------------------------------------------------------

namespace {

std::string replace_all(std::string haystack, const std::string& needle,
                        const std::string& replacement) {
  size_t pos = haystack.find(needle);
  while (pos != std::string::npos) {
    haystack.replace(pos, needle.size(), replacement);
    pos = haystack.find(needle, pos + replacement.size());
  }
  return haystack;
}

void split_endpoint(const std::string& endpoint, std::string& host, int& port,
                    std::string& path) {
  std::string rest = endpoint;
  const std::string http = "http://";
  if (rest.rfind(http, 0) != 0) {
    throw std::invalid_argument("RemoteChatJudge: endpoint must start with http://");
  }
  rest = rest.substr(http.size());
  const size_t slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  path = slash == std::string::npos ? "/" : rest.substr(slash);
  const size_t colon = hostport.find(':');
  if (colon == std::string::npos) {
    host = hostport;
    port = 80;
  } else {
    host = hostport.substr(0, colon);
    port = std::stoi(hostport.substr(colon + 1));
  }
}

std::optional<int> first_int_in(const std::string& s, int lo, int hi) {
  for (size_t i = 0; i < s.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      const int v = std::atoi(s.substr(i, j - i).c_str());
      if (v >= lo && v <= hi) return v;
      i = j;
    }
  }
  return std::nullopt;
}

}  // namespace

RemoteChatJudge::RemoteChatJudge(JudgeConfig config) : config_(std::move(config)) {
  config_.validate();
  split_endpoint(config_.endpoint, host_, port_, path_);
}

std::string RemoteChatJudge::complete(const std::string& system_text,
                                      const std::string& user_text) {
  nlohmann::json request = {
      {"model", config_.model_name},
      {"messages",
       {{{"role", "system"}, {"content", system_text}},
        {{"role", "user"}, {"content", user_text}}}},
      {"temperature", 0},
  };
  const std::string body = request.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(0, config_.timeout_ms * 1000);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport error " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      last_error = std::string("malformed reply: ") + e.what();
    }
  }
  throw JudgeError("remote judge failed after retries: " + last_error);
}

int RemoteChatJudge::retrieve_option(const std::string& question, const std::string& prediction,
                                     const std::vector<std::string>& options) {
  if (options.size() != 5) throw std::invalid_argument("retrieve_option: exactly 5 options required");
  std::string user = prompts::kJudgeRetrievalUser;
  user = replace_all(user, "{question}", question);
  user = replace_all(user, "{prediction}", prediction);
  for (int i = 0; i < 5; ++i) {
    user = replace_all(user, "{option" + std::to_string(i) + "}", options[static_cast<size_t>(i)]);
  }
  const std::string reply = complete(prompts::kJudgeRetrievalSystem, user);
  const auto idx = first_int_in(reply, 0, 4);
  if (!idx) throw JudgeError("retrieval reply carried no index 0..4: " + reply);
  return *idx;
}

JudgeVerdict RemoteChatJudge::judge_open(const std::string& question,
                                         const std::string& prediction,
                                         const std::string& gt_answer) {
  if (prediction.empty() || gt_answer.empty()) {
    throw std::invalid_argument("judge_open: prediction and gt_answer must be non-empty");
  }
  std::string user = prompts::kJudgeOpenUser;
  user = replace_all(user, "{question}", question);
  user = replace_all(user, "{prediction}", prediction);
  user = replace_all(user, "{gt_answer}", gt_answer);
  const std::string reply = complete(prompts::kJudgeOpenSystem, user);

  std::string lower;
  lower.reserve(reply.size());
  for (char c : reply) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  const size_t yes = lower.find("yes");
  const size_t no = lower.find("no");
  JudgeVerdict v;
  if (yes == std::string::npos && no == std::string::npos) {
    throw JudgeError("open-judge reply carried no yes/no: " + reply);
  }
  v.match = yes != std::string::npos && (no == std::string::npos || yes < no);

  const size_t score_pos = lower.find("score");
  if (score_pos != std::string::npos) {
    v.score = first_int_in(lower.substr(score_pos), 1, 5);
  }
  if (!v.score) v.score = first_int_in(lower, 1, 5);
  if (!v.score) throw JudgeError("open-judge reply carried no score 1..5: " + reply);
  return v;
}

double RemoteChatJudge::similarity(const std::string& question, const std::string& prediction,
                                   const std::string& gt_answer) {
  return judge_open(question, prediction, gt_answer).score.value() / 5.0;
}

std::unique_ptr<Judge> make_judge(JudgeConfig config) {
  if (const char* e = std::getenv("GVQA_JUDGE_ENDPOINT")) config.endpoint = e;
  if (const char* k = std::getenv("GVQA_JUDGE_KEY")) config.api_key = k;
  if (const char* m = std::getenv("GVQA_JUDGE_MODEL")) config.model_name = m;
  config.validate();
  if (config.backend == JudgeBackend::kLexical) return std::make_unique<LexicalJudge>();
  return std::make_unique<RemoteChatJudge>(std::move(config));
}

}  // namespace gvqa
