#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccbench/protocols.hpp"
#include "ccbench/io.hpp"

#include <cmath>
#include <filesystem>
#include <map>

using namespace ccbench;
using namespace ccbench::protocols;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, ColoredPointCloud> make_clouds(const std::vector<std::string>& ids,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, ColoredPointCloud> out;
  for (const auto& id : ids) {
    ColoredPointCloud c;
    c.points.resize(16, 3);
    c.colors.resize(16, 3);
    for (Index i = 0; i < 16; ++i) {
      for (int k = 0; k < 3; ++k) {
        c.points(i, k) = rng.normal();
        c.colors(i, k) = rng.uniform_real();
      }
    }
    out[id] = c;
  }
  return out;
}

CloudLookup lookup_of(const std::map<std::string, ColoredPointCloud>& store) {
  return [&store](const std::string& id) -> const ColoredPointCloud& {
    return store.at(id);
  };
}

distractors::Triplet pair_triplet(const std::string& ref, const std::string& other,
                                  const std::string& text, int target) {
  distractors::Triplet t;
  if (target == 0) {
    t.shape_ids = {ref, other};
    t.tags = {"reference", "hard"};
  } else {
    t.shape_ids = {other, ref};
    t.tags = {"hard", "reference"};
  }
  t.text = text;
  t.target = target;
  return t;
}

struct SyntheticFixture {
  TempDir dir;
  datasets::DatasetManifest manifest;
  std::unique_ptr<datasets::CloudStore> store;

  SyntheticFixture() : dir("ccb_protocols") {
    datasets::GenConfig cfg;
    cfg.num_chairs = 6;
    cfg.num_tables = 6;
    cfg.points_per_cloud = 96;
    cfg.seed = 41;
    manifest = datasets::generate_synthetic(cfg, dir.path.string());
    store = std::make_unique<datasets::CloudStore>(manifest, dir.path.string());
  }
};

}  // namespace

TEST_CASE("eval_pairwise with oracle, negated oracle and constant scorers") {
  SyntheticFixture fx;
  const auto oracle = make_attribute_oracle(fx.manifest, *fx.store);
  const CloudLookup clouds = [&](const std::string& id) -> const ColoredPointCloud& {
    return fx.store->get(id);
  };

  std::vector<distractors::Triplet> triplets;
  for (std::size_t i = 0; i < fx.manifest.records.size(); ++i) {
    const auto& rec = fx.manifest.records[i];
    const auto& other = fx.manifest.records[(i + 1) % fx.manifest.records.size()];
    triplets.push_back(pair_triplet(rec.id, other.id, rec.captions[0],
                                    static_cast<int>(i % 2)));
  }

  const auto report = eval_pairwise(oracle, triplets, clouds);
  CHECK(report.accuracy == 1.0);
  CHECK(report.count == static_cast<long>(triplets.size()));

  const Scorer negated = [&oracle](const ColoredPointCloud& c, const std::string& t) {
    return -oracle(c, t);
  };
  CHECK(eval_pairwise(negated, triplets, clouds).accuracy == 0.0);

  const Scorer constant = [](const ColoredPointCloud&, const std::string&) {
    return 0.25;
  };
  // every comparison ties, and ties count as incorrect
  CHECK(eval_pairwise(constant, triplets, clouds).accuracy == 0.0);
}

TEST_CASE("eval_pairwise rejects malformed triplets") {
  const auto store = make_clouds({"a", "b", "c"}, 3);
  distractors::Triplet bad;
  bad.shape_ids = {"a", "b", "c"};
  bad.tags = {"reference", "hard", "easy"};
  bad.text = "three shapes is not pairwise";
  bad.target = 0;
  const Scorer s = [](const ColoredPointCloud&, const std::string&) { return 0.0; };
  try {
    eval_pairwise(s, {bad}, lookup_of(store));
    FAIL("expected throw");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("three shapes is not pairwise") != std::string::npos);
  }
}

TEST_CASE("eval_rprecision hand-enumerated tiny instance") {
  // pool of exactly 3 texts and set_size 3 forces every pair to score the
  // full pool; scores are hand-assigned per (cloud, text)
  const auto store = make_clouds({"c0", "c1", "c2", "c3", "c4"}, 7);
  const std::vector<std::string> pool = {"text alpha", "text beta", "text gamma"};
  const std::vector<RPrecisionPair> pairs = {{"c0", "text alpha"},
                                             {"c1", "text beta"},
                                             {"c2", "text gamma"},
                                             {"c3", "text alpha"},
                                             {"c4", "text beta"}};

  std::map<std::string, std::map<std::string, double>> table;
  table["c0"] = {{"text alpha", 3.0}, {"text beta", 1.0}, {"text gamma", 2.0}};  // correct
  table["c1"] = {{"text alpha", 5.0}, {"text beta", 4.0}, {"text gamma", 0.0}};  // beaten
  table["c2"] = {{"text alpha", 1.0}, {"text beta", 1.0}, {"text gamma", 1.0}};  // tie: wrong
  table["c3"] = {{"text alpha", 9.0}, {"text beta", -1.0}, {"text gamma", 8.0}};  // correct
  table["c4"] = {{"text alpha", 0.5}, {"text beta", 0.4}, {"text gamma", 0.3}};  // beaten

  std::map<std::uint64_t, std::string> id_of;
  for (const auto& [id, cloud] : store) id_of[datasets::cloud_fingerprint(cloud)] = id;
  const Scorer scorer = [&](const ColoredPointCloud& cloud, const std::string& text) {
    return table.at(id_of.at(datasets::cloud_fingerprint(cloud))).at(text);
  };

  const auto report = eval_rprecision(scorer, pairs, lookup_of(store), pool, 3, 123);
  CHECK(report.count == 5);
  CHECK(report.correct == 2);
  CHECK(report.accuracy == doctest::Approx(0.4));
  CHECK(report.items[0].correct);
  CHECK(!report.items[1].correct);
  CHECK(!report.items[2].correct);
  CHECK(report.items[3].correct);
  CHECK(!report.items[4].correct);
}

TEST_CASE("eval_rprecision is a pure function of scorer, data and seed") {
  SyntheticFixture fx;
  const CloudLookup clouds = [&](const std::string& id) -> const ColoredPointCloud& {
    return fx.store->get(id);
  };
  std::vector<RPrecisionPair> pairs;
  std::vector<std::string> pool;
  for (const auto& rec : fx.manifest.records) {
    pairs.push_back({rec.id, rec.captions[0]});
    pool.push_back(rec.captions[0]);
  }
  const auto scorer = make_random_scorer(5);
  const auto a = eval_rprecision(scorer, pairs, clouds, pool, 5, 99);
  const auto b = eval_rprecision(scorer, pairs, clouds, pool, 5, 99);
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].scores == b.items[i].scores);
    CHECK(a.items[i].correct == b.items[i].correct);
  }
  const auto c = eval_rprecision(scorer, pairs, clouds, pool, 5, 100);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    any_diff = any_diff || (a.items[i].scores != c.items[i].scores);
  }
  CHECK(any_diff);  // different seed, different distractor samples
}

TEST_CASE("eval_rprecision with the attribute oracle is exact") {
  SyntheticFixture fx;
  const auto oracle = make_attribute_oracle(fx.manifest, *fx.store);
  const CloudLookup clouds = [&](const std::string& id) -> const ColoredPointCloud& {
    return fx.store->get(id);
  };
  std::vector<RPrecisionPair> pairs;
  std::vector<std::string> pool;
  for (const auto& rec : fx.manifest.records) {
    pairs.push_back({rec.id, rec.captions[0]});
    pool.push_back(rec.captions[0]);
  }
  const auto report = eval_rprecision(oracle, pairs, clouds, pool, 7, 3);
  CHECK(report.accuracy == 1.0);
}

TEST_CASE("eval_rprecision errors when the pool is too small") {
  const auto store = make_clouds({"c0"}, 9);
  const std::vector<std::string> pool = {"a text", "b text"};
  const Scorer s = [](const ColoredPointCloud&, const std::string&) { return 0.0; };
  CHECK_THROWS_AS(
      eval_rprecision(s, {{"c0", "a text"}}, lookup_of(store), pool, 3, 0),
      ValidationError);
}

TEST_CASE("random scorer lands near 1/set_size") {
  const auto store = make_clouds({"c0", "c1", "c2", "c3"}, 11);
  std::vector<std::string> ids;
  for (const auto& [id, c] : store) ids.push_back(id);

  std::vector<std::string> pool;
  for (int i = 0; i < 40; ++i) pool.push_back("pool caption number " + std::to_string(i));
  std::vector<RPrecisionPair> pairs;
  for (int i = 0; i < 400; ++i) {
    pairs.push_back({ids[static_cast<std::size_t>(i) % ids.size()],
                     pool[static_cast<std::size_t>(i) % pool.size()]});
  }
  const Index set_size = 11;
  const auto report = eval_rprecision(make_random_scorer(17), pairs, lookup_of(store),
                                      pool, set_size, 23);
  const double p = 1.0 / static_cast<double>(set_size);
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(report.count));
  CHECK(std::abs(report.accuracy - p) <= 3.0 * sigma);
}

TEST_CASE("both protocols are invariant under strictly increasing transforms") {
  SyntheticFixture fx;
  const CloudLookup clouds = [&](const std::string& id) -> const ColoredPointCloud& {
    return fx.store->get(id);
  };
  std::vector<distractors::Triplet> triplets;
  std::vector<RPrecisionPair> pairs;
  std::vector<std::string> pool;
  for (std::size_t i = 0; i < fx.manifest.records.size(); ++i) {
    const auto& rec = fx.manifest.records[i];
    const auto& other = fx.manifest.records[(i + 5) % fx.manifest.records.size()];
    triplets.push_back(pair_triplet(rec.id, other.id, rec.captions[0],
                                    static_cast<int>(i % 2)));
    pairs.push_back({rec.id, rec.captions[0]});
    pool.push_back(rec.captions[0]);
  }

  const auto base = make_random_scorer(29);
  const auto base_pw = eval_pairwise(base, triplets, clouds).accuracy;
  const auto base_rp = eval_rprecision(base, pairs, clouds, pool, 6, 31).accuracy;

  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = rng.uniform_real(0.2, 3.0);
    const double b = rng.uniform_real(-2.0, 2.0);
    const int kind = trial % 3;
    const Scorer transformed = [=, &base](const ColoredPointCloud& c, const std::string& t) {
      const double s = base(c, t);
      switch (kind) {
        case 0: return a * s + b;
        case 1: return std::atan(s) * a;
        default: return s * s * s + a * s;
      }
    };
    CHECK(eval_pairwise(transformed, triplets, clouds).accuracy == base_pw);
    CHECK(eval_rprecision(transformed, pairs, clouds, pool, 6, 31).accuracy == base_rp);
  }
}

TEST_CASE("reports round-trip through JSON files") {
  TempDir dir("ccb_report_rt");
  const auto store = make_clouds({"a", "b"}, 13);
  std::vector<distractors::Triplet> triplets = {
      pair_triplet("a", "b", "some caption text", 0)};
  const auto report =
      eval_pairwise(make_random_scorer(1), triplets, lookup_of(store));
  const std::string path = (dir.path / "report.json").string();
  save_report(report, path);
  const auto loaded = load_report(path);
  CHECK(loaded.protocol == report.protocol);
  CHECK(loaded.accuracy == report.accuracy);
  CHECK(loaded.count == report.count);
  REQUIRE(loaded.items.size() == report.items.size());
  CHECK(loaded.items[0].scores == report.items[0].scores);

  const std::string table = render_report_table({loaded});
  CHECK(table.find("pairwise") != std::string::npos);
}

TEST_CASE("evaluation with multiple workers matches single-threaded output") {
  SyntheticFixture fx;
  const auto oracle = make_attribute_oracle(fx.manifest, *fx.store);
  const CloudLookup clouds = [&](const std::string& id) -> const ColoredPointCloud& {
    return fx.store->get(id);
  };
  std::vector<distractors::Triplet> triplets;
  for (std::size_t i = 0; i + 1 < fx.manifest.records.size(); ++i) {
    triplets.push_back(pair_triplet(fx.manifest.records[i].id,
                                    fx.manifest.records[i + 1].id,
                                    fx.manifest.records[i].captions[0], 0));
  }
  const auto seq = eval_pairwise(oracle, triplets, clouds, 1);
  const auto par = eval_pairwise(oracle, triplets, clouds, 4);
  REQUIRE(seq.items.size() == par.items.size());
  for (std::size_t i = 0; i < seq.items.size(); ++i) {
    CHECK(seq.items[i].scores == par.items[i].scores);
  }
}
