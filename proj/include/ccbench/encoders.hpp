#pragma once

#include "ccbench/core.hpp"
#include "ccbench/geometry.hpp"
#include "ccbench/io.hpp"
#include "ccbench/nn.hpp"
#include "ccbench/rng.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ccbench::encoders {

using geometry::ColoredPointCloud;

// ---------------------------------------------------------------------------
// Point-cloud encoder: a stack of set-abstraction stages. Each stage samples
// centers with farthest point sampling, groups neighbors with a ball query,
// runs a shared per-point MLP over concat(relative position, feature) rows
// and max-pools per group. The third stage pools a single global group.
// ---------------------------------------------------------------------------

struct SetAbstractionConfig {
  Index num_centers = 0;
  double radius = 0.0;
  Index k = 0;
  std::vector<Index> mlp_widths;
};

struct EncoderConfig {
  SetAbstractionConfig stage1{512, 0.2, 32, {64, 64, 128}};
  SetAbstractionConfig stage2{128, 0.4, 64, {128, 128, 256}};
  std::vector<Index> stage3_widths{256, 512, 1024};
  nn::Activation activation = nn::Activation::relu;
  Index min_points = 16;

  Index local_dim() const { return stage2.mlp_widths.back(); }
  Index global_dim() const { return stage3_widths.back(); }
};

struct StageCache {
  std::vector<Index> centers;
  std::vector<std::vector<Index>> groups;
  Mat grouped;  // (M*K) x (3+F)
  nn::Mlp::Cache mlp;
  std::vector<std::vector<Index>> argmax;  // per center, per out dim: row in group
  Index feature_cols = 0;
  Index input_rows = 0;
};

struct GlobalStageCache {
  Mat grouped;  // L x (3+F)
  nn::Mlp::Cache mlp;
  std::vector<Index> argmax;  // per out dim: input row
  Index feature_cols = 0;
};

/// One set-abstraction stage. Returns (center positions, pooled features).
std::pair<Mat, Mat> set_abstraction(const Mat& positions, const Mat& features,
                                    const SetAbstractionConfig& cfg,
                                    const nn::Mlp& mlp, StageCache* cache = nullptr);

/// Gradient of a stage w.r.t. its input features (positions are data).
Mat set_abstraction_backward(nn::Mlp& mlp, const StageCache& cache,
                             const Mat& d_out_features);

/// Groups every input row into one group around the input centroid.
Vec global_abstraction(const Mat& positions, const Mat& features,
                       const nn::Mlp& mlp, GlobalStageCache* cache = nullptr);

Mat global_abstraction_backward(nn::Mlp& mlp, const GlobalStageCache& cache,
                                const RowVec& d_code);

struct LocalFeatureSet {
  Mat positions;  // L x 3
  Mat features;   // L x D_shape
};

using LatentCode = Vec;

struct PointCloudEncoderParams {
  EncoderConfig cfg;
  nn::Mlp sa1, sa2, sa3;

  explicit PointCloudEncoderParams(const EncoderConfig& config = {},
                                   const std::string& prefix = "encoder");
  void init(Rng& rng);
  std::vector<nn::Param*> params();
};

struct EncoderCache {
  StageCache s1, s2;
  GlobalStageCache s3;
};

LocalFeatureSet encode_local(const ColoredPointCloud& cloud,
                             const PointCloudEncoderParams& params,
                             EncoderCache* cache = nullptr);

LatentCode encode_global(const ColoredPointCloud& cloud,
                         const PointCloudEncoderParams& params,
                         EncoderCache* cache = nullptr);

/// Backward through stages 2 and 1 given d(local features).
void encode_local_backward(PointCloudEncoderParams& params, const EncoderCache& cache,
                           const Mat& d_local_features);

/// Backward through all three stages given d(global code).
void encode_global_backward(PointCloudEncoderParams& params, const EncoderCache& cache,
                            const RowVec& d_code);

// ---------------------------------------------------------------------------
// Decoder and reconstruction autoencoder
// ---------------------------------------------------------------------------

struct DecoderConfig {
  Index out_points = 1024;
  std::vector<Index> hidden{512, 1024};
};

struct DecoderParams {
  DecoderConfig cfg;
  nn::Mlp mlp;  // global_dim -> hidden -> out_points*6, final layer linear

  DecoderParams(Index global_dim, const DecoderConfig& config = {},
                const std::string& prefix = "decoder");
  void init(Rng& rng);
  std::vector<nn::Param*> params();
};

struct DecoderCache {
  nn::Mlp::Cache mlp;
  Mat color_logits;  // out_points x 3 pre-sigmoid
};

/// Fixed-size reconstruction; colors pass through a sigmoid into [0,1].
ColoredPointCloud decode_cloud(const LatentCode& code, const DecoderParams& params,
                               DecoderCache* cache = nullptr);

/// Returns d(code) given gradients on the reconstructed points and colors.
RowVec decode_cloud_backward(DecoderParams& params, const DecoderCache& cache,
                             const Mat& d_points, const Mat& d_colors);

struct AutoencoderParams {
  PointCloudEncoderParams encoder;
  DecoderParams decoder;

  AutoencoderParams(const EncoderConfig& enc_cfg = {}, const DecoderConfig& dec_cfg = {});
  void init(Rng& rng);
  std::vector<nn::Param*> params();
};

struct ReconstructionLoss {
  double total = 0.0;
  double chamfer = 0.0;
  double color = 0.0;  // unweighted color term
  Mat d_points;        // gradient w.r.t. reconstructed points
  Mat d_colors;        // gradient w.r.t. reconstructed colors
};

/// chamfer(xyz) + lambda_color * squared color error over the chamfer-matched
/// point pairs, with gradients w.r.t. the reconstruction.
ReconstructionLoss reconstruction_loss(const ColoredPointCloud& recon,
                                       const ColoredPointCloud& target,
                                       double lambda_color);

struct AeTrainConfig {
  Index epochs = 40;
  Index batch = 8;
  double lr = 1e-3;
  double lambda_color = 1.0;
  std::uint64_t seed = 0;
};

struct AeTrainResult {
  std::vector<double> epoch_loss;
  double final_mean_chamfer = 0.0;
};

/// Trains encoder+decoder in place on (normalized copies of) the given
/// clouds. Throws if the loss turns non-finite.
AeTrainResult train_autoencoder(AutoencoderParams& params,
                                const std::vector<ColoredPointCloud>& clouds,
                                const AeTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Text side: tokenizer, vocabulary and embedding providers
// ---------------------------------------------------------------------------

/// Lowercases and splits into [a-z0-9]+ runs, dropping punctuation.
/// Throws on text with no tokens.
std::vector<std::string> tokenize_words(const std::string& text);

struct Vocabulary {
  std::vector<std::string> words;  // ids 1..size(); id 0 is OOV
  std::map<std::string, int> index;

  static Vocabulary build(const std::vector<std::string>& corpus);
  static Vocabulary from_words(std::vector<std::string> sorted_words);
  int id(const std::string& word) const;
  Index rows() const { return static_cast<Index>(words.size()) + 1; }
};

/// Token ids for the text under the vocabulary; unknown words map to OOV (0).
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

struct TextEmbeddingSequence {
  Mat embeddings;                   // T x D_text
  std::vector<std::uint8_t> mask;   // true = real token

  Index length() const { return embeddings.rows(); }
};

class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual TextEmbeddingSequence embed(const std::string& text) const = 0;
  virtual Index dim() const = 0;
  virtual std::string id() const = 0;
  /// Parameters the training loop may update; empty for frozen providers.
  virtual std::vector<nn::Param*> trainable_params() { return {}; }
};

/// Precomputed embedding sequences keyed by caption id (hash of the caption
/// text). Emulates a frozen large-language-model encoder; lookups are
/// bit-identical across calls and misses are errors.
class FileBackedTextProvider : public TextProvider {
 public:
  explicit FileBackedTextProvider(const std::string& path);
  explicit FileBackedTextProvider(const std::vector<io::EmbeddingRecord>& records);

  TextEmbeddingSequence embed(const std::string& text) const override;
  Index dim() const override { return d_; }
  std::string id() const override { return "file:" + source_; }

 private:
  void load(const std::vector<io::EmbeddingRecord>& records);
  std::map<std::string, Mat> records_;
  Index d_ = 0;
  std::string source_;
};

/// Trainable token-embedding table plus one self-attention layer over the
/// token sequence (sinusoidal position signal added before attention).
class BuiltinTextProvider : public TextProvider {
 public:
  struct Config {
    Index d_text = 128;
    Index heads = 2;
    bool frozen = false;
    std::uint64_t seed = 7;
  };

  struct Cache {
    std::vector<int> ids;
    Mat table_rows;  // T x D before attention (embeddings + positions)
    nn::AttentionCache attn;
  };

  BuiltinTextProvider(Vocabulary vocab, const Config& cfg);

  TextEmbeddingSequence embed(const std::string& text) const override;
  TextEmbeddingSequence embed(const std::string& text, Cache* cache) const;
  void backward(const Cache& cache, const Mat& d_embeddings);

  Index dim() const override { return cfg_.d_text; }
  std::string id() const override { return "builtin"; }
  const Config& config() const { return cfg_; }
  bool frozen() const { return cfg_.frozen; }
  void set_frozen(bool f) { cfg_.frozen = f; }
  std::vector<nn::Param*> trainable_params() override;
  std::vector<nn::Param*> all_params();
  const Vocabulary& vocab() const { return vocab_; }
  nn::Param& table() { return table_; }

 private:
  Vocabulary vocab_;
  Config cfg_;
  nn::Param table_;  // (V+1) x D
  nn::AttentionConfig attn_cfg_;
  nn::AttentionParams attn_;
};

/// [OP] embed_text: runs the provider on a caption.
TextEmbeddingSequence embed_text(const std::string& text, const TextProvider& provider);

// Checkpoint helpers shared by all parameterized modules.
void save_params(io::Checkpoint& ckpt, const std::vector<nn::Param*>& params);
void load_params(const io::Checkpoint& ckpt, const std::vector<nn::Param*>& params);

}  // namespace ccbench::encoders
