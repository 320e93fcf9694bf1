// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gvqa {

struct JudgeVerdict {
  bool match = false;
  std::optional<int> score;  // 1..5, present when the judging prompt asked for it
};

// Raised when a judge backend cannot produce a verdict (after retries).
class JudgeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class JudgeBackend { kLexical, kRemoteChat };

struct JudgeConfig {
  JudgeBackend backend = JudgeBackend::kLexical;
  std::string endpoint;    // e.g. "http://127.0.0.1:8080/v1/chat/completions"
  std::string api_key;     // sent as a bearer token when non-empty
  std::string model_name;  // remote model identifier
  int timeout_ms = 30000;
  int max_parallel = 1;    // >= 1
  int max_retries = 2;
  uint64_t seed = 0;       // lexical tie-breaking reserved knob

  void validate() const;
};

// Answer-comparison interface shared by the offline lexical backend and the
// remote chat backend; evaluate() and the consistency filter accept either.
class Judge {
 public:
  virtual ~Judge() = default;

  // Index in 0..4 of the option most similar to the prediction.
  virtual int retrieve_option(const std::string& question, const std::string& prediction,
                              const std::vector<std::string>& options) = 0;

  // Yes/no judgment of whether the prediction matches the ground truth,
  // with a 1..5 score.
  virtual JudgeVerdict judge_open(const std::string& question, const std::string& prediction,
                                  const std::string& gt_answer) = 0;

  // Similarity in [0, 1] backing consistency scores: token F1 for the
  // lexical backend, score/5 for the remote backend.
  virtual double similarity(const std::string& question, const std::string& prediction,
                            const std::string& gt_answer) = 0;
};

// ---------------------------------------------------------------------------
// Lexical judge: deterministic token-F1 comparison. Normalization is
// lowercase, strip punctuation, split on whitespace.
// ---------------------------------------------------------------------------

std::vector<std::string> normalize_tokens(const std::string& text);

// Bag-overlap F1 between the two token multisets; symmetric.
double token_f1(const std::string& a, const std::string& b);

class LexicalJudge : public Judge {
 public:
  explicit LexicalJudge(double match_threshold = 0.5) : threshold_(match_threshold) {}

  int retrieve_option(const std::string& question, const std::string& prediction,
                      const std::vector<std::string>& options) override;
  JudgeVerdict judge_open(const std::string& question, const std::string& prediction,
                          const std::string& gt_answer) override;
  double similarity(const std::string& question, const std::string& prediction,
                    const std::string& gt_answer) override;

 private:
  double threshold_;
};

// ---------------------------------------------------------------------------
// Remote chat judge: HTTP POST of a chat-completion request at
// temperature 0. Prompt texts live in assets/prompts and are compiled in.
// ---------------------------------------------------------------------------

class RemoteChatJudge : public Judge {
 public:
  explicit RemoteChatJudge(JudgeConfig config);

  int retrieve_option(const std::string& question, const std::string& prediction,
                      const std::vector<std::string>& options) override;
  JudgeVerdict judge_open(const std::string& question, const std::string& prediction,
                          const std::string& gt_answer) override;
  double similarity(const std::string& question, const std::string& prediction,
                    const std::string& gt_answer) override;

  // One round trip through the chat endpoint; exposed for contract tests.
  std::string complete(const std::string& system_text, const std::string& user_text);

 private:
  JudgeConfig config_;
  std::string host_;
  int port_ = 80;
  std::string path_;
};

// Builds the configured backend. Environment variables GVQA_JUDGE_ENDPOINT,
// GVQA_JUDGE_KEY and GVQA_JUDGE_MODEL override the config fields.
std::unique_ptr<Judge> make_judge(JudgeConfig config);

}  // namespace gvqa
