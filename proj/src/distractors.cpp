#include "ccbench/distractors.hpp"

#include "ccbench/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace ccbench::distractors {

std::vector<LatentItem> compute_latents(
    const std::vector<std::pair<std::string, std::string>>& id_class_pairs,
    const std::function<geometry::ColoredPointCloud(const std::string&)>& loader,
    const encoders::PointCloudEncoderParams& encoder, int workers) {
  std::vector<LatentItem> out(id_class_pairs.size());
  parallel_for(id_class_pairs.size(), workers, [&](std::size_t i) {
    const auto& [id, cls] = id_class_pairs[i];
    geometry::ColoredPointCloud cloud;
    try {
      cloud = loader(id);
    } catch (const std::exception& e) {
      throw Error("compute_latents: cannot load shape \"" + id + "\": " + e.what());
    }
    out[i] = {id, cls, encoders::encode_global(geometry::normalize_cloud(cloud), encoder)};
  });
  return out;
}

double quantile(std::vector<double> values, double q) {
  check(!values.empty(), "quantile: empty sample");
  check(q >= 0.0 && q <= 1.0, "quantile: q outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - std::floor(h);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

MiningResult mine_distractors(const std::vector<LatentItem>& latents,
                              const MiningConfig& cfg) {
  MiningResult result;
  // class -> member indices, in input order
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    by_class[latents[i].class_label].push_back(i);
  }

  const Rng root(cfg.seed);
  for (const auto& [cls, members] : by_class) {
    if (members.size() < 4) {
      result.warnings.push_back("class \"" + cls + "\" has " +
                                std::to_string(members.size()) +
                                " shapes (< 4); skipped");
      continue;
    }
    for (const std::size_t ref : members) {
      const LatentItem& r = latents[ref];
      struct Cand {
        double d;
        const std::string* id;
      };
      std::vector<Cand> cands;
      cands.reserve(members.size() - 1);
      for (const std::size_t other : members) {
        if (other == ref) continue;
        cands.push_back({(latents[other].code - r.code).norm(), &latents[other].id});
      }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return a.d != b.d ? a.d < b.d : *a.id < *b.id;
      });

      std::vector<double> dists;
      dists.reserve(cands.size());
      for (const auto& c : cands) dists.push_back(c.d);
      const double cut = quantile(dists, cfg.easy_quantile);

      std::vector<const std::string*> easy_pool;
      for (const auto& c : cands) {
        if (c.d > cut) easy_pool.push_back(c.id);
      }
      std::string easy;
      if (!easy_pool.empty()) {
        std::sort(easy_pool.begin(), easy_pool.end(),
                  [](const std::string* a, const std::string* b) { return *a < *b; });
        Rng rng = root.derive("easy", r.id);
        easy = *easy_pool[static_cast<std::size_t>(
            rng.uniform_u64(easy_pool.size()))];
      } else {
        // Degenerate distance ties can leave nothing beyond the cut; fall
        // back to the farthest candidate (lowest id among ties).
        const double dmax = dists.back();
        const std::string* pick = nullptr;
        for (const auto& c : cands) {
          if (c.d == dmax && (pick == nullptr || *c.id < *pick)) pick = c.id;
        }
        easy = *pick;
      }

      result.sets.push_back(DistractorSet{
          r.id, {*cands[0].id, *cands[1].id}, std::move(easy), cls});
    }
  }
  return result;
}

TripletBuildResult build_triplets(
    const std::vector<DistractorSet>& sets,
    const std::map<std::string, std::vector<std::string>>& captions_by_id,
    Index group_size, std::uint64_t seed) {
  check(group_size >= 2 && group_size <= 4, "build_triplets: group size must be in [2,4]");
  TripletBuildResult result;
  const Rng root(seed);
  for (const auto& set : sets) {
    const auto it = captions_by_id.find(set.reference_id);
    if (it == captions_by_id.end() || it->second.empty()) {
      result.warnings.push_back("reference \"" + set.reference_id +
                                "\" has no captions; skipped");
      continue;
    }
    const std::vector<std::pair<std::string, std::string>> pool = {
        {set.hard_ids[0], "hard"}, {set.hard_ids[1], "hard"}, {set.easy_id, "easy"}};
    for (std::size_t ci = 0; ci < it->second.size(); ++ci) {
      Rng rng = root.derive("triplet", fnv1a64(set.reference_id) ^ mix64(ci));
      std::vector<std::size_t> pick{0, 1, 2};
      rng.shuffle(pick);
      pick.resize(static_cast<std::size_t>(group_size - 1));

      Triplet t;
      t.text = it->second[ci];
      const auto target_pos = static_cast<std::size_t>(
          rng.uniform_u64(static_cast<std::uint64_t>(group_size)));
      std::size_t next = 0;
      for (std::size_t g = 0; g < static_cast<std::size_t>(group_size); ++g) {
        if (g == target_pos) {
          t.shape_ids.push_back(set.reference_id);
          t.tags.push_back("reference");
        } else {
          t.shape_ids.push_back(pool[pick[next]].first);
          t.tags.push_back(pool[pick[next]].second);
          ++next;
        }
      }
      t.target = static_cast<int>(target_pos);
      result.triplets.push_back(std::move(t));
    }
  }
  return result;
}

}  // namespace ccbench::distractors
