#pragma once

#include "ccbench/core.hpp"
#include "ccbench/encoders.hpp"
#include "ccbench/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace ccbench::distractors {

/// Per-reference negatives mined in the autoencoder latent space.
struct DistractorSet {
  std::string reference_id;
  std::array<std::string, 2> hard_ids;
  std::string easy_id;
  std::string class_label;
};

/// One scoring group: G candidate shapes, a caption, and the index of the
/// reference shape. Tags parallel shape_ids ("reference", "hard", "easy").
struct Triplet {
  std::vector<std::string> shape_ids;
  std::vector<std::string> tags;
  std::string text;
  int target = 0;

  Index group_size() const { return static_cast<Index>(shape_ids.size()); }
};

struct LatentItem {
  std::string id;
  std::string class_label;
  Vec code;
};

struct MiningConfig {
  double easy_quantile = 0.75;
  std::uint64_t seed = 0;
};

struct MiningResult {
  std::vector<DistractorSet> sets;
  std::vector<std::string> warnings;  // skipped classes etc.
};

/// Computes the global latent code for every shape, keyed by id.
/// The loader maps a shape id to its cloud; missing shapes raise errors
/// naming the id.
std::vector<LatentItem> compute_latents(
    const std::vector<std::pair<std::string, std::string>>& id_class_pairs,
    const std::function<geometry::ColoredPointCloud(const std::string&)>& loader,
    const encoders::PointCloudEncoderParams& encoder, int workers = 1);

/// Hard = the two nearest same-class shapes by Euclidean latent distance
/// (ties to the lowest id); easy = a seeded uniform pick among same-class
/// shapes strictly beyond the per-reference 75th-percentile distance
/// (linear-interpolated quantile). Classes with fewer than 4 members are
/// skipped with a warning.
MiningResult mine_distractors(const std::vector<LatentItem>& latents,
                              const MiningConfig& cfg);

/// Linear-interpolated quantile of a sample, q in [0,1].
double quantile(std::vector<double> values, double q);

/// One triplet per (reference, caption): the reference plus G-1 distractors
/// sampled from the mined set, reference position seeded-random.
/// References without captions are skipped with a warning.
struct TripletBuildResult {
  std::vector<Triplet> triplets;
  std::vector<std::string> warnings;
};

TripletBuildResult build_triplets(
    const std::vector<DistractorSet>& sets,
    const std::map<std::string, std::vector<std::string>>& captions_by_id,
    Index group_size, std::uint64_t seed);

}  // namespace ccbench::distractors
