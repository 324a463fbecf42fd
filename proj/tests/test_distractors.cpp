#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccbench/distractors.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>

using namespace ccbench;
using namespace ccbench::distractors;

namespace {

// Independent re-derivation of the mining rule: full distance matrix, explicit
// sort, interpolated quantile, same seeded easy pick.
std::vector<DistractorSet> mine_bruteforce(const std::vector<LatentItem>& items,
                                           const MiningConfig& cfg) {
  std::vector<DistractorSet> sets;
  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < items.size(); ++i) classes[items[i].class_label].push_back(i);
  const Rng root(cfg.seed);
  for (const auto& [cls, members] : classes) {
    if (members.size() < 4) continue;
    for (const std::size_t r : members) {
      std::vector<std::pair<double, std::string>> d;
      for (const std::size_t o : members) {
        if (o == r) continue;
        double s = 0;
        for (Index k = 0; k < items[r].code.size(); ++k) {
          const double diff = items[r].code(k) - items[o].code(k);
          s += diff * diff;
        }
        d.emplace_back(std::sqrt(s), items[o].id);
      }
      std::sort(d.begin(), d.end());
      std::vector<double> dist;
      for (const auto& [dd, id] : dist.empty() ? d : d) dist.push_back(dd);
      // linear-interpolated quantile
      const double h = cfg.easy_quantile * static_cast<double>(dist.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const double cut = lo + 1 >= dist.size()
                             ? dist.back()
                             : dist[lo] + (h - std::floor(h)) * (dist[lo + 1] - dist[lo]);
      std::vector<std::string> pool;
      for (const auto& [dd, id] : d) {
        if (dd > cut) pool.push_back(id);
      }
      std::string easy;
      if (!pool.empty()) {
        std::sort(pool.begin(), pool.end());
        Rng rng = root.derive("easy", items[r].id);
        easy = pool[static_cast<std::size_t>(rng.uniform_u64(pool.size()))];
      } else {
        const double dmax = d.back().first;
        for (const auto& [dd, id] : d) {
          if (dd == dmax && (easy.empty() || id < easy)) easy = id;
        }
      }
      sets.push_back({items[r].id, {d[0].second, d[1].second}, easy, cls});
    }
  }
  return sets;
}

std::vector<LatentItem> line_items() {
  std::vector<LatentItem> items;
  const std::vector<double> xs = {0.0, 1.0, 2.0, 10.0};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Vec v(1);
    v << xs[i];
    items.push_back({"s" + std::to_string(i), "chair", v});
  }
  return items;
}

}  // namespace

TEST_CASE("quantile uses linear interpolation") {
  CHECK(quantile({1.0, 2.0, 10.0}, 0.75) == doctest::Approx(6.0));
  CHECK(quantile({5.0}, 0.75) == doctest::Approx(5.0));
  CHECK(quantile({1.0, 3.0}, 0.5) == doctest::Approx(2.0));
  CHECK_THROWS_AS(quantile({}, 0.5), ValidationError);
}

TEST_CASE("mining the hand-executed line example") {
  // distances from s0: 1, 2, 10; p75 = 6; only s3 lies beyond
  const auto result = mine_distractors(line_items(), {0.75, 3});
  REQUIRE(result.sets.size() == 4);
  const auto& set = result.sets[0];
  CHECK(set.reference_id == "s0");
  CHECK(set.hard_ids[0] == "s1");
  CHECK(set.hard_ids[1] == "s2");
  CHECK(set.easy_id == "s3");
  CHECK(result.warnings.empty());
}

TEST_CASE("a reference never appears among its own distractors") {
  Rng rng(7);
  std::vector<LatentItem> items;
  for (int i = 0; i < 30; ++i) {
    Vec v(4);
    for (Index k = 0; k < 4; ++k) v(k) = rng.normal();
    items.push_back({"id" + std::to_string(i), i % 2 ? "chair" : "table", v});
  }
  const auto result = mine_distractors(items, {0.75, 11});
  REQUIRE(result.sets.size() == 30);
  for (const auto& s : result.sets) {
    CHECK(s.hard_ids[0] != s.reference_id);
    CHECK(s.hard_ids[1] != s.reference_id);
    CHECK(s.easy_id != s.reference_id);
    CHECK(s.hard_ids[0] != s.hard_ids[1]);
    CHECK(s.easy_id != s.hard_ids[0]);
    CHECK(s.easy_id != s.hard_ids[1]);
  }
}

TEST_CASE("hard distractors are never farther than the easy one") {
  Rng rng(9);
  std::vector<LatentItem> items;
  for (int i = 0; i < 40; ++i) {
    Vec v(3);
    for (Index k = 0; k < 3; ++k) v(k) = rng.normal() * 2.0;
    items.push_back({"x" + std::to_string(i), "chair", v});
  }
  const auto result = mine_distractors(items, {0.75, 5});
  std::map<std::string, const LatentItem*> by_id;
  for (const auto& item : items) by_id[item.id] = &item;
  for (const auto& s : result.sets) {
    const Vec& ref = by_id.at(s.reference_id)->code;
    const double easy_d = (by_id.at(s.easy_id)->code - ref).norm();
    CHECK((by_id.at(s.hard_ids[0])->code - ref).norm() <= easy_d);
    CHECK((by_id.at(s.hard_ids[1])->code - ref).norm() <= easy_d);
  }
}

TEST_CASE("mining matches the brute-force oracle on seeded instances") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    const auto n = static_cast<int>(8 + rng.uniform_u64(193));  // up to 200
    std::vector<LatentItem> items;
    for (int i = 0; i < n; ++i) {
      Vec v(6);
      for (Index k = 0; k < 6; ++k) v(k) = rng.normal();
      items.push_back({"s" + std::to_string(i),
                       rng.uniform_real() < 0.5 ? "chair" : "table", v});
    }
    const MiningConfig cfg{0.75, seed};
    const auto got = mine_distractors(items, cfg).sets;
    const auto expect = mine_bruteforce(items, cfg);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].reference_id == expect[i].reference_id);
      CHECK(got[i].hard_ids[0] == expect[i].hard_ids[0]);
      CHECK(got[i].hard_ids[1] == expect[i].hard_ids[1]);
      CHECK(got[i].easy_id == expect[i].easy_id);
    }
  }
}

TEST_CASE("mining output is invariant to dataset iteration order") {
  Rng rng(13);
  std::vector<LatentItem> items;
  for (int i = 0; i < 25; ++i) {
    Vec v(3);
    for (Index k = 0; k < 3; ++k) v(k) = rng.normal();
    items.push_back({"n" + std::to_string(i), "table", v});
  }
  auto shuffled = items;
  rng.shuffle(shuffled);

  const MiningConfig cfg{0.75, 3};
  const auto a = mine_distractors(items, cfg).sets;
  const auto b = mine_distractors(shuffled, cfg).sets;
  std::map<std::string, DistractorSet> b_by_ref;
  for (const auto& s : b) b_by_ref[s.reference_id] = s;
  for (const auto& s : a) {
    const auto& other = b_by_ref.at(s.reference_id);
    CHECK(s.hard_ids[0] == other.hard_ids[0]);
    CHECK(s.hard_ids[1] == other.hard_ids[1]);
    CHECK(s.easy_id == other.easy_id);
  }
}

TEST_CASE("classes with fewer than four members are skipped with a warning") {
  std::vector<LatentItem> items = line_items();
  Vec v(1);
  v << 5.0;
  items.push_back({"lonely", "table", v});
  const auto result = mine_distractors(items, {0.75, 1});
  CHECK(result.sets.size() == 4);  // only the chair class
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("table") != std::string::npos);
}

TEST_CASE("compute_latents is a per-item oracle of encode_global") {
  Rng rng(15);
  encoders::EncoderConfig cfg;
  cfg.stage1 = {8, 0.7, 8, {6, 8}};
  cfg.stage2 = {4, 1.2, 4, {8, 8}};
  cfg.stage3_widths = {8, 12};
  cfg.min_points = 16;
  encoders::PointCloudEncoderParams params(cfg);
  params.init(rng);

  std::map<std::string, geometry::ColoredPointCloud> clouds;
  for (const char* id : {"a", "b", "dup"}) {
    geometry::ColoredPointCloud c;
    c.points.resize(32, 3);
    c.colors.resize(32, 3);
    for (Index i = 0; i < 32; ++i) {
      for (int k = 0; k < 3; ++k) {
        c.points(i, k) = rng.normal();
        c.colors(i, k) = rng.uniform_real();
      }
    }
    clouds[id] = c;
  }
  clouds["dup"] = clouds["a"];  // same shape under two ids

  const auto loader = [&](const std::string& id) {
    const auto it = clouds.find(id);
    if (it == clouds.end()) throw Error("no cloud file for " + id);
    return it->second;
  };
  const std::vector<std::pair<std::string, std::string>> ids = {
      {"a", "chair"}, {"b", "chair"}, {"dup", "chair"}};
  const auto latents = compute_latents(ids, loader, params);
  REQUIRE(latents.size() == 3);  // map size equals dataset size
  CHECK(latents[0].code == latents[2].code);  // duplicate shape, identical code

  for (const auto& item : latents) {
    const auto direct = encoders::encode_global(
        geometry::normalize_cloud(clouds.at(item.id)), params);
    CHECK(item.code == direct);
  }

  const std::vector<std::pair<std::string, std::string>> missing = {{"zzz", "chair"}};
  try {
    compute_latents(missing, loader, params);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("zzz") != std::string::npos);
  }
}

TEST_CASE("build_triplets") {
  std::vector<DistractorSet> sets;
  for (int i = 0; i < 40; ++i) {
    sets.push_back({"ref" + std::to_string(i),
                    {"h1_" + std::to_string(i), "h2_" + std::to_string(i)},
                    "e_" + std::to_string(i),
                    "chair"});
  }
  std::map<std::string, std::vector<std::string>> captions;
  for (int i = 0; i < 40; ++i) {
    captions["ref" + std::to_string(i)] = {"caption one of " + std::to_string(i),
                                           "caption two of " + std::to_string(i)};
  }

  SUBCASE("arity follows the group size") {
    for (const Index g : {2, 3, 4}) {
      const auto result = build_triplets(sets, captions, g, 5);
      REQUIRE(result.triplets.size() == 80);
      for (const auto& t : result.triplets) {
        CHECK(t.group_size() == g);
        CHECK(t.shape_ids[static_cast<std::size_t>(t.target)].substr(0, 3) == "ref");
        CHECK(t.tags[static_cast<std::size_t>(t.target)] == "reference");
      }
    }
  }
  SUBCASE("same seed gives the identical list") {
    const auto a = build_triplets(sets, captions, 2, 9);
    const auto b = build_triplets(sets, captions, 2, 9);
    REQUIRE(a.triplets.size() == b.triplets.size());
    for (std::size_t i = 0; i < a.triplets.size(); ++i) {
      CHECK(a.triplets[i].shape_ids == b.triplets[i].shape_ids);
      CHECK(a.triplets[i].target == b.triplets[i].target);
      CHECK(a.triplets[i].text == b.triplets[i].text);
    }
  }
  SUBCASE("target positions are uniform within 3 sigma") {
    const auto result = build_triplets(sets, captions, 2, 31);
    const double n = static_cast<double>(result.triplets.size());
    double at_zero = 0;
    for (const auto& t : result.triplets) at_zero += t.target == 0;
    const double sigma = std::sqrt(n * 0.25);
    CHECK(std::abs(at_zero - 0.5 * n) <= 3.0 * sigma);
  }
  SUBCASE("caption-less references are skipped with a warning") {
    auto short_captions = captions;
    short_captions.erase("ref7");
    const auto result = build_triplets(sets, short_captions, 2, 5);
    CHECK(result.triplets.size() == 78);
    REQUIRE(result.warnings.size() == 1);
    CHECK(result.warnings[0].find("ref7") != std::string::npos);
  }
}
