#pragma once

#include "ccbench/core.hpp"
#include "ccbench/datasets.hpp"
#include "ccbench/distractors.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ccbench::protocols {

using geometry::ColoredPointCloud;
using json = nlohmann::json;

/// Anything that scores (cloud, text) coherence; higher = more coherent.
/// Must be deterministic for fixed inputs and safe for concurrent calls.
using Scorer = std::function<double(const ColoredPointCloud&, const std::string&)>;

using CloudLookup = std::function<const ColoredPointCloud&(const std::string&)>;

struct EvalItem {
  std::vector<std::string> ids;
  std::string text;
  std::vector<double> scores;
  bool correct = false;
};

struct EvalReport {
  std::string protocol;
  double accuracy = 0.0;
  long count = 0;
  long correct = 0;
  json config;  // seed, set size, scorer id, free-form echo
  std::vector<EvalItem> items;
};

/// Correct iff the reference outscores the single distractor; exact ties
/// count as incorrect. Triplets must have exactly two shapes.
EvalReport eval_pairwise(const Scorer& scorer,
                         const std::vector<distractors::Triplet>& triplets,
                         const CloudLookup& clouds, int workers = 1);

struct RPrecisionPair {
  std::string cloud_id;
  std::string text;  // ground-truth caption
};

/// Per pair: sample set_size-1 distinct distractor texts from the pool
/// (ground truth excluded), score all set_size texts against the cloud,
/// correct iff the ground truth ranks strictly first. With repeats > 1 the
/// sampling is repeated with derived seeds and the accuracy averaged.
EvalReport eval_rprecision(const Scorer& scorer,
                           const std::vector<RPrecisionPair>& pairs,
                           const CloudLookup& clouds,
                           const std::vector<std::string>& text_pool,
                           Index set_size = 153, std::uint64_t seed = 0,
                           Index repeats = 1, int workers = 1);

/// Reads the shape's ground-truth attributes (recognized by cloud
/// fingerprint) and scores +1/-1 per matching/mismatching mentioned
/// attribute value.
Scorer make_attribute_oracle(const datasets::DatasetManifest& manifest,
                             const datasets::CloudStore& store);

/// Deterministic pseudo-random scores, i.i.d.-uniform across distinct
/// (cloud, text) inputs.
Scorer make_random_scorer(std::uint64_t seed);

json report_to_json(const EvalReport& report);
EvalReport report_from_json(const json& j);
void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

/// Accuracy table over several reports, one row per report.
std::string render_report_table(const std::vector<EvalReport>& reports);

}  // namespace ccbench::protocols
