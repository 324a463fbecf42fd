#pragma once

#include "ccbench/core.hpp"
#include "ccbench/datasets.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace ccbench::refine {

using json = nlohmann::json;

/// Rephrasing prompt for one shape: its captions, one per line, followed by
/// the request template.
struct RefineRequest {
  std::string shape_id;
  std::vector<std::string> source_captions;
  std::string request_template;
  std::string rendered_prompt;
};

std::string build_refine_prompt(const std::vector<std::string>& captions,
                                const std::string& request_template);

const std::string& default_refine_template();

struct RefineResult {
  std::string shape_id;
  std::vector<std::string> refined_captions;
  std::string provider_id;
  bool cached = false;
};

/// Text-completion backend: prompt in, raw completion text out.
class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string id() const = 0;
};

/// Offline deterministic rewriter. Treats the final prompt line as the
/// request and every earlier non-empty line as a caption; emits one numbered,
/// capitalized sentence per caption.
class MockCompletionProvider : public CompletionProvider {
 public:
  std::string complete(const std::string& prompt) override;
  std::string id() const override { return "mock:v1"; }
  int calls() const { return calls_.load(); }

 private:
  std::atomic<int> calls_{0};
};

struct HttpProviderConfig {
  std::string url;  // scheme://host[:port]/path
  std::string model = "davinci-style-completion";
  std::string api_key_env = "CCBENCH_API_KEY";
  std::string response_pointer = "/choices/0/text";
  int max_tokens = 256;
  int max_retries = 3;
  double requests_per_minute = 60.0;
  double initial_backoff_s = 1.0;
};

/// Generic completion-API client: JSON {model, prompt, max_tokens} in, text
/// at response_pointer out. Throttles to requests_per_minute and retries
/// transient failures (HTTP 429/5xx, transport errors) with exponential
/// backoff. The API key is read from the environment, never from config
/// files, and is sent as a bearer token when present.
class HttpCompletionProvider : public CompletionProvider {
 public:
  explicit HttpCompletionProvider(const HttpProviderConfig& cfg);
  std::string complete(const std::string& prompt) override;
  std::string id() const override { return "http:" + cfg_.url; }

 private:
  HttpProviderConfig cfg_;
  std::string api_key_;
  std::mutex throttle_mu_;
  double last_request_time_ = -1.0;
};

/// Content-addressed prompt cache: one JSON file per prompt hash. Lookups
/// verify the stored hash against the recomputed one.
class PromptCache {
 public:
  explicit PromptCache(std::string dir);

  std::optional<RefineResult> lookup(const std::string& prompt) const;
  void store(const std::string& prompt, const RefineResult& result);

 private:
  std::string path_for(const std::string& prompt) const;
  std::string dir_;
  mutable std::mutex mu_;
};

/// Splits a completion into caption lines: strips list markers ("1.", "-",
/// "*"), trims whitespace, drops lines shorter than 3 words and exact
/// duplicates (after whitespace normalization).
std::vector<std::string> parse_refined_captions(const std::string& raw);

struct RefineConfig {
  std::string request_template = default_refine_template();
  int workers = 1;
};

struct RefineRunResult {
  std::map<std::string, RefineResult> results;
  std::vector<std::string> errors;  // per-shape error records
  int provider_calls = 0;
  int cache_hits = 0;
};

/// One result per manifest shape. Provider failures and unparseable outputs
/// become error records; the pipeline continues.
RefineRunResult refine_captions(const datasets::DatasetManifest& manifest,
                                CompletionProvider& provider, PromptCache* cache,
                                const RefineConfig& cfg);

}  // namespace ccbench::refine
