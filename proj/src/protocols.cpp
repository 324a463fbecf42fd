#include "ccbench/protocols.hpp"

#include "ccbench/hash.hpp"
#include "ccbench/io.hpp"
#include "ccbench/parallel.hpp"
#include "ccbench/rng.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace ccbench::protocols {

EvalReport eval_pairwise(const Scorer& scorer,
                         const std::vector<distractors::Triplet>& triplets,
                         const CloudLookup& clouds, int workers) {
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    if (t.shape_ids.size() != 2 || t.target < 0 || t.target > 1) {
      throw ValidationError("eval_pairwise: malformed triplet #" + std::to_string(i) +
                            " (text: \"" + t.text + "\"): needs exactly 2 shapes and a "
                            "target in {0,1}");
    }
  }

  EvalReport report;
  report.protocol = "pairwise";
  report.items.resize(triplets.size());
  parallel_for(triplets.size(), workers, [&](std::size_t i) {
    const auto& t = triplets[i];
    EvalItem item;
    item.ids = t.shape_ids;
    item.text = t.text;
    item.scores = {scorer(clouds(t.shape_ids[0]), t.text),
                   scorer(clouds(t.shape_ids[1]), t.text)};
    const double ref = item.scores[static_cast<std::size_t>(t.target)];
    const double other = item.scores[static_cast<std::size_t>(1 - t.target)];
    item.correct = ref > other;
    report.items[i] = std::move(item);
  });

  report.count = static_cast<long>(report.items.size());
  for (const auto& item : report.items) report.correct += item.correct;
  report.accuracy = report.count == 0
                        ? 0.0
                        : static_cast<double>(report.correct) / static_cast<double>(report.count);
  return report;
}

EvalReport eval_rprecision(const Scorer& scorer,
                           const std::vector<RPrecisionPair>& pairs,
                           const CloudLookup& clouds,
                           const std::vector<std::string>& text_pool,
                           Index set_size, std::uint64_t seed, Index repeats,
                           int workers) {
  check(set_size >= 2, "eval_rprecision: set size must be >= 2");
  check(repeats >= 1, "eval_rprecision: repeats must be >= 1");

  const Rng root(seed);
  const std::size_t total = pairs.size() * static_cast<std::size_t>(repeats);
  std::vector<EvalItem> items(total);

  parallel_for(total, workers, [&](std::size_t slot) {
    const std::size_t pi = slot % pairs.size();
    const std::size_t rep = slot / pairs.size();
    const RPrecisionPair& pair = pairs[pi];

    std::vector<std::size_t> candidates;
    candidates.reserve(text_pool.size());
    for (std::size_t j = 0; j < text_pool.size(); ++j) {
      if (text_pool[j] != pair.text) candidates.push_back(j);
    }
    const auto needed = static_cast<std::size_t>(set_size - 1);
    if (candidates.size() < needed) {
      throw ValidationError(
          "eval_rprecision: text pool too small: need " + std::to_string(needed) +
          " distractor texts for \"" + pair.text + "\", have " +
          std::to_string(candidates.size()));
    }

    Rng rng = root.derive("rprecision",
                          (static_cast<std::uint64_t>(rep) << 32) ^
                              static_cast<std::uint64_t>(pi));
    // partial Fisher-Yates: the first `needed` entries become the sample
    for (std::size_t k = 0; k < needed; ++k) {
      const std::size_t j =
          k + static_cast<std::size_t>(rng.uniform_u64(candidates.size() - k));
      std::swap(candidates[k], candidates[j]);
    }

    const ColoredPointCloud& cloud = clouds(pair.cloud_id);
    const double gt_score = scorer(cloud, pair.text);
    bool beaten = false;
    double best_other = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < needed; ++k) {
      const double s = scorer(cloud, text_pool[candidates[k]]);
      best_other = std::max(best_other, s);
      if (s >= gt_score) beaten = true;  // ties lose
    }

    EvalItem item;
    item.ids = {pair.cloud_id};
    item.text = pair.text;
    item.scores = {gt_score, best_other};
    item.correct = !beaten;
    items[slot] = std::move(item);
  });

  EvalReport report;
  report.protocol = "rprecision";
  report.items = std::move(items);
  report.count = static_cast<long>(total);
  for (const auto& item : report.items) report.correct += item.correct;
  report.accuracy = report.count == 0
                        ? 0.0
                        : static_cast<double>(report.correct) / static_cast<double>(report.count);
  report.config["set_size"] = set_size;
  report.config["seed"] = seed;
  report.config["repeats"] = repeats;
  return report;
}

Scorer make_attribute_oracle(const datasets::DatasetManifest& manifest,
                             const datasets::CloudStore& store) {
  auto table = std::make_shared<std::map<std::uint64_t, datasets::ShapeAttributes>>();
  for (const auto& rec : manifest.records) {
    if (!rec.attributes) {
      throw ValidationError("attribute oracle: record " + rec.id + " has no attributes");
    }
    (*table)[datasets::cloud_fingerprint(store.get(rec.id))] = *rec.attributes;
  }
  return [table](const ColoredPointCloud& cloud, const std::string& text) {
    const auto it = table->find(datasets::cloud_fingerprint(cloud));
    if (it == table->end()) {
      throw Error("attribute oracle: cloud does not match any manifest shape");
    }
    return static_cast<double>(datasets::attribute_match_score(
        datasets::parse_caption_mentions(text), it->second));
  };
}

Scorer make_random_scorer(std::uint64_t seed) {
  return [seed](const ColoredPointCloud& cloud, const std::string& text) {
    std::uint64_t h = mix64(seed ^ datasets::cloud_fingerprint(cloud));
    h = mix64(h ^ fnv1a64(text));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
}

json report_to_json(const EvalReport& report) {
  json j;
  j["schema"] = "ccbench.report";
  j["version"] = 1;
  j["protocol"] = report.protocol;
  j["accuracy"] = report.accuracy;
  j["count"] = report.count;
  j["correct"] = report.correct;
  j["config"] = report.config.is_null() ? json::object() : report.config;
  json items = json::array();
  for (const auto& item : report.items) {
    items.push_back({{"ids", item.ids},
                     {"text", item.text},
                     {"scores", item.scores},
                     {"correct", item.correct}});
  }
  j["items"] = std::move(items);
  return j;
}

EvalReport report_from_json(const json& j) {
  check(j.value("schema", "") == "ccbench.report", "report: wrong schema");
  EvalReport report;
  report.protocol = j.at("protocol").get<std::string>();
  report.accuracy = j.at("accuracy").get<double>();
  report.count = j.at("count").get<long>();
  report.correct = j.at("correct").get<long>();
  report.config = j.at("config");
  for (const auto& ij : j.at("items")) {
    EvalItem item;
    item.ids = ij.at("ids").get<std::vector<std::string>>();
    item.text = ij.at("text").get<std::string>();
    item.scores = ij.at("scores").get<std::vector<double>>();
    item.correct = ij.at("correct").get<bool>();
    report.items.push_back(std::move(item));
  }
  return report;
}

void save_report(const EvalReport& report, const std::string& path) {
  io::write_text_file(path, report_to_json(report).dump(2) + "\n");
}

EvalReport load_report(const std::string& path) {
  return report_from_json(json::parse(io::read_text_file(path)));
}

std::string render_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  std::size_t name_w = 4;
  for (const auto& r : reports) {
    name_w = std::max(name_w, r.config.value("name", r.protocol).size());
  }
  out << std::left;
  out.width(static_cast<std::streamsize>(name_w + 2));
  out << "name";
  out << "protocol     accuracy   correct/count\n";
  for (const auto& r : reports) {
    out.width(static_cast<std::streamsize>(name_w + 2));
    out << r.config.value("name", r.protocol);
    out.width(13);
    out << r.protocol;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%7.2f%%   %ld/%ld", 100.0 * r.accuracy, r.correct,
                  r.count);
    out << buf << "\n";
  }
  return out.str();
}

}  // namespace ccbench::protocols
