#pragma once

#include "ccbench/core.hpp"
#include "ccbench/distractors.hpp"
#include "ccbench/encoders.hpp"
#include "ccbench/nn.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ccbench::crosscoherence {

using encoders::ColoredPointCloud;
using encoders::LocalFeatureSet;
using encoders::TextEmbeddingSequence;
using nn::AttentionConfig;

// The attention primitive (multi-head scaled dot-product with masking and
// optional residual+layernorm) lives in nn; re-exported here as the public
// scoring surface.
using nn::AttentionCache;
using nn::AttentionParams;
using nn::cross_attention;
using nn::cross_attention_backward;

struct ScorerConfig {
  AttentionConfig attn{128, 4, true};
  Index blocks = 1;
  std::vector<Index> head_widths{256, 128};
  nn::Activation head_activation = nn::Activation::relu;
};

/// One bilateral block: shape features attend over text tokens, and text
/// tokens attend over shape features. Both directions read the block inputs.
struct BilateralParams {
  AttentionParams shape_from_text;
  AttentionParams text_from_shape;

  BilateralParams() = default;
  BilateralParams(const std::string& name, const AttentionConfig& cfg);
  void init(Rng& rng);
  std::vector<nn::Param*> params();
};

struct BilateralCache {
  AttentionCache s_from_t;
  AttentionCache t_from_s;
};

struct BilateralOut {
  Mat shape_attended;  // L x d_model
  Mat text_attended;   // T x d_model
};

BilateralOut bilateral_block(const Mat& shape_feats, const Mat& text_feats,
                             const std::vector<std::uint8_t>& text_mask,
                             const BilateralParams& params, const AttentionConfig& cfg,
                             BilateralCache* cache = nullptr);

struct BilateralGrads {
  Mat d_shape;
  Mat d_text;
};

BilateralGrads bilateral_block_backward(BilateralParams& params,
                                        const AttentionConfig& cfg,
                                        const BilateralCache& cache,
                                        const Mat& d_shape_attended,
                                        const Mat& d_text_attended);

struct ScorerParams {
  ScorerConfig cfg;
  nn::Linear shape_proj;
  nn::Linear text_proj;
  std::vector<BilateralParams> blocks;
  nn::Mlp head;

  ScorerParams() = default;
  ScorerParams(Index d_shape, Index d_text, const ScorerConfig& config,
               const std::string& prefix = "scorer");
  /// Hidden layers get seeded Xavier draws; the final head layer starts at
  /// zero so an untrained model scores every pair exactly 0.
  void init(Rng& rng);
  std::vector<nn::Param*> params();
};

struct ScoreTape {
  Mat shape_in, text_in;
  std::vector<std::uint8_t> text_mask;
  std::vector<BilateralCache> blocks;
  Mat pooled;  // 1 x 2*d_model
  nn::Mlp::Cache head;
  Index real_tokens = 0;
  Index shape_rows = 0;
};

/// Scores projected-and-attended features: bilateral blocks, mean pooling
/// (masked on the text side), concatenation, MLP head.
double score_features(const LocalFeatureSet& local, const TextEmbeddingSequence& text,
                      const ScorerParams& params, ScoreTape* tape = nullptr);

struct FeatureGrads {
  Mat d_local;  // L x D_shape
  Mat d_text;   // T x D_text
};

FeatureGrads score_features_backward(ScorerParams& params, const ScoreTape& tape,
                                     double d_logit);

struct GroupScore {
  Vec logits;
  Vec probabilities;

  /// Prediction; ties resolve to the lowest index.
  Index argmax() const;
};

Vec softmax(const Vec& logits);

/// Full metric: point-cloud encoder + text provider + bilateral scorer.
/// Inference with const access is concurrency-safe; training mutates
/// parameters under a single writer.
struct CrossCoherenceModel {
  encoders::PointCloudEncoderParams encoder;
  std::shared_ptr<encoders::TextProvider> provider;
  ScorerParams scorer;
  bool encoder_frozen = true;

  CrossCoherenceModel(const encoders::EncoderConfig& enc_cfg,
                      std::shared_ptr<encoders::TextProvider> text_provider,
                      const ScorerConfig& score_cfg);

  /// Normalizes the cloud, encodes local features, embeds the caption and
  /// scores the pair. Deterministic for fixed parameters.
  double score_pair(const ColoredPointCloud& cloud, const std::string& text) const;

  /// Softmax-normalized scores over G >= 2 candidate clouds for one caption.
  GroupScore score_group(const std::string& text,
                         const std::vector<const ColoredPointCloud*>& clouds) const;

  LocalFeatureSet local_features(const ColoredPointCloud& cloud) const;

  std::vector<nn::Param*> trainable_params();
  std::vector<nn::Param*> all_params();
};

struct TrainItem {
  std::vector<const ColoredPointCloud*> clouds;
  std::vector<const LocalFeatureSet*> cached_features;  // optional frozen-encoder path
  std::string text;
  int target = 0;
};

/// One optimizer update on a batch of groups; returns the pre-update mean
/// cross-entropy. Throws on non-finite loss.
double train_step(CrossCoherenceModel& model, const std::vector<TrainItem>& batch,
                  nn::Adam& adam);

struct FitConfig {
  Index epochs = 100;
  Index batch = 16;
  double lr = 1e-4;
  Index group_size = 2;
  Index patience = 10;
  std::uint64_t seed = 0;
  /// Train-time Gaussian noise on shape features, as a fraction of each
  /// feature column's standard deviation. Only used with a frozen encoder;
  /// validation always scores clean features.
  double feature_noise = 0.0;
};

struct EpochStats {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FitResult {
  std::vector<EpochStats> history;
  double best_val_accuracy = 0.0;
  Index best_epoch = -1;
};

using CloudLookup = std::function<const ColoredPointCloud&(const std::string&)>;

/// Epoch loop with seeded shuffling and per-epoch distractor subsampling
/// (when triplets carry more candidates than the configured group size).
/// Tracks validation pairwise accuracy, early-stops on patience and restores
/// the best-validation parameters.
FitResult fit(CrossCoherenceModel& model, const CloudLookup& clouds,
              const std::vector<distractors::Triplet>& train,
              const std::vector<distractors::Triplet>& val, const FitConfig& cfg);

}  // namespace ccbench::crosscoherence
