#include "ccbench/refine.hpp"

#include "ccbench/hash.hpp"
#include "ccbench/io.hpp"
#include "ccbench/parallel.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <thread>

namespace ccbench::refine {

namespace fs = std::filesystem;

std::string build_refine_prompt(const std::vector<std::string>& captions,
                                const std::string& request_template) {
  check(!captions.empty(), "build_refine_prompt: empty caption list");
  std::string prompt;
  for (const auto& c : captions) {
    prompt += c;
    prompt += '\n';
  }
  prompt += request_template;
  return prompt;
}

const std::string& default_refine_template() {
  static const std::string t =
      "Rewrite the sentences above into several precise descriptions of the same "
      "object, covering its geometry, colors and style. Output one description per "
      "line, numbered.";
  return t;
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (const char ch : text) {
    if (ch == '\n') {
      lines.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  lines.push_back(current);
  return lines;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string normalize_whitespace(const std::string& s) {
  std::string out;
  bool in_space = true;
  for (const char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!in_space && !out.empty()) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(ch);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string strip_list_marker(std::string s) {
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
    return trim(s.substr(i + 1));
  }
  if (!s.empty() && (s[0] == '-' || s[0] == '*')) {
    return trim(s.substr(1));
  }
  return s;
}

int word_count(const std::string& s) {
  int n = 0;
  bool in_word = false;
  for (const char ch : s) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

std::string MockCompletionProvider::complete(const std::string& prompt) {
  calls_.fetch_add(1);
  std::vector<std::string> lines = split_lines(prompt);
  if (lines.size() >= 2) lines.pop_back();  // final line is the request
  std::string out;
  int n = 0;
  for (const auto& raw : lines) {
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (!line.empty()) line[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(line[0])));
    if (line.back() != '.') line += '.';
    out += std::to_string(++n) + ". " + line + "\n";
  }
  return out;
}

std::vector<std::string> parse_refined_captions(const std::string& raw) {
  std::vector<std::string> captions;
  std::vector<std::string> seen;
  for (const auto& line : split_lines(raw)) {
    std::string c = strip_list_marker(trim(line));
    if (c.empty() || word_count(c) < 3) continue;
    const std::string key = normalize_whitespace(c);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    captions.push_back(std::move(c));
  }
  return captions;
}

HttpCompletionProvider::HttpCompletionProvider(const HttpProviderConfig& cfg)
    : cfg_(cfg) {
  check(!cfg_.url.empty(), "http provider: empty url");
  check(cfg_.requests_per_minute > 0, "http provider: requests_per_minute must be > 0");
  if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
    api_key_ = key;
  }
}

std::string HttpCompletionProvider::complete(const std::string& prompt) {
  const auto split = cfg_.url.find('/', cfg_.url.find("//") + 2);
  const std::string base = split == std::string::npos ? cfg_.url : cfg_.url.substr(0, split);
  const std::string path = split == std::string::npos ? "/" : cfg_.url.substr(split);

  json body;
  body["model"] = cfg_.model;
  body["prompt"] = prompt;
  body["max_tokens"] = cfg_.max_tokens;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double backoff = cfg_.initial_backoff_s * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    }
    {
      // honor the request rate across threads
      std::lock_guard<std::mutex> lock(throttle_mu_);
      const double min_gap = 60.0 / cfg_.requests_per_minute;
      const double now = std::chrono::duration<double>(
                             std::chrono::steady_clock::now().time_since_epoch())
                             .count();
      if (last_request_time_ >= 0.0 && now - last_request_time_ < min_gap) {
        std::this_thread::sleep_for(
            std::chrono::duration<double>(min_gap - (now - last_request_time_)));
      }
      last_request_time_ = std::chrono::duration<double>(
                               std::chrono::steady_clock::now().time_since_epoch())
                               .count();
    }

    httplib::Client client(base);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error("completion request failed with status " + std::to_string(res->status) +
                  ": " + res->body);
    }
    try {
      const json reply = json::parse(res->body);
      return reply.at(json::json_pointer(cfg_.response_pointer)).get<std::string>();
    } catch (const json::exception& e) {
      throw Error(std::string("completion response not parseable: ") + e.what());
    }
  }
  throw Error("completion request failed after " + std::to_string(cfg_.max_retries + 1) +
              " attempts (" + last_error + ")");
}

PromptCache::PromptCache(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string PromptCache::path_for(const std::string& prompt) const {
  return (fs::path(dir_) / (hex64(fnv1a64(prompt)) + ".json")).string();
}

std::optional<RefineResult> PromptCache::lookup(const std::string& prompt) const {
  const std::string path = path_for(prompt);
  std::lock_guard<std::mutex> lock(mu_);
  if (!fs::exists(path)) return std::nullopt;
  const json j = json::parse(io::read_text_file(path));
  const std::string expected = hex64(fnv1a64(prompt));
  if (j.value("prompt_hash", "") != expected) {
    throw Error("prompt cache integrity failure: " + path + " stores hash " +
                j.value("prompt_hash", "<missing>") + ", expected " + expected);
  }
  RefineResult result;
  result.refined_captions = j.at("captions").get<std::vector<std::string>>();
  result.provider_id = j.value("provider", "");
  result.cached = true;
  return result;
}

void PromptCache::store(const std::string& prompt, const RefineResult& result) {
  json j;
  j["prompt_hash"] = hex64(fnv1a64(prompt));
  j["provider"] = result.provider_id;
  j["captions"] = result.refined_captions;
  std::lock_guard<std::mutex> lock(mu_);
  io::write_text_file(path_for(prompt), j.dump(2) + "\n");
}

RefineRunResult refine_captions(const datasets::DatasetManifest& manifest,
                                CompletionProvider& provider, PromptCache* cache,
                                const RefineConfig& cfg) {
  RefineRunResult run;
  std::mutex mu;
  parallel_for(manifest.records.size(), cfg.workers, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    if (rec.captions.empty()) {
      std::lock_guard<std::mutex> lock(mu);
      run.errors.push_back("shape " + rec.id + ": no source captions");
      return;
    }
    const std::string prompt = build_refine_prompt(rec.captions, cfg.request_template);

    if (cache != nullptr) {
      if (auto hit = cache->lookup(prompt)) {
        hit->shape_id = rec.id;
        std::lock_guard<std::mutex> lock(mu);
        ++run.cache_hits;
        run.results.emplace(rec.id, std::move(*hit));
        return;
      }
    }

    std::string raw;
    try {
      raw = provider.complete(prompt);
      std::lock_guard<std::mutex> lock(mu);
      ++run.provider_calls;
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      ++run.provider_calls;
      run.errors.push_back("shape " + rec.id + ": provider failed: " + e.what());
      return;
    }

    RefineResult result;
    result.shape_id = rec.id;
    result.provider_id = provider.id();
    result.refined_captions = parse_refined_captions(raw);
    result.cached = false;
    if (result.refined_captions.empty()) {
      std::lock_guard<std::mutex> lock(mu);
      run.errors.push_back("shape " + rec.id + ": provider returned no parseable captions");
      return;
    }
    if (cache != nullptr) cache->store(prompt, result);
    std::lock_guard<std::mutex> lock(mu);
    run.results.emplace(rec.id, std::move(result));
  });
  return run;
}

}  // namespace ccbench::refine
