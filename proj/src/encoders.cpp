#include "ccbench/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace ccbench::encoders {

std::pair<Mat, Mat> set_abstraction(const Mat& positions, const Mat& features,
                                    const SetAbstractionConfig& cfg,
                                    const nn::Mlp& mlp, StageCache* cache) {
  const Index n = positions.rows();
  check(features.rows() == n, "set_abstraction: position/feature row mismatch");
  check(cfg.num_centers >= 1 && cfg.num_centers <= n,
        "set_abstraction: num_centers out of range for input of size " + std::to_string(n));
  const Index f = features.cols();
  check(mlp.layers.front().in_dim() == 3 + f,
        "set_abstraction: mlp input dim != 3 + feature dim");

  const MatX3 pts = positions;
  const auto centers = geometry::farthest_point_sample<double>(pts, cfg.num_centers);
  const auto groups = geometry::ball_query<double>(pts, centers, cfg.radius, cfg.k);

  const Index m = cfg.num_centers;
  Mat grouped(m * cfg.k, 3 + f);
  for (Index i = 0; i < m; ++i) {
    const Index c = centers[static_cast<std::size_t>(i)];
    const auto& group = groups[static_cast<std::size_t>(i)];
    for (Index t = 0; t < cfg.k; ++t) {
      const Index j = group[static_cast<std::size_t>(t)];
      grouped.row(i * cfg.k + t).head(3) = positions.row(j) - positions.row(c);
      grouped.row(i * cfg.k + t).tail(f) = features.row(j);
    }
  }

  nn::Mlp::Cache mlp_cache;
  const Mat mlp_out = mlp.forward(grouped, cache ? &mlp_cache : nullptr);
  const Index d = mlp_out.cols();

  Mat pooled(m, d);
  std::vector<std::vector<Index>> argmax;
  if (cache) argmax.resize(static_cast<std::size_t>(m), std::vector<Index>(static_cast<std::size_t>(d)));
  for (Index i = 0; i < m; ++i) {
    for (Index col = 0; col < d; ++col) {
      Index best = 0;
      double best_v = mlp_out(i * cfg.k, col);
      for (Index t = 1; t < cfg.k; ++t) {
        const double v = mlp_out(i * cfg.k + t, col);
        if (v > best_v) {
          best_v = v;
          best = t;
        }
      }
      pooled(i, col) = best_v;
      if (cache) argmax[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)] = best;
    }
  }

  Mat sub_positions(m, 3);
  for (Index i = 0; i < m; ++i) {
    sub_positions.row(i) = positions.row(centers[static_cast<std::size_t>(i)]);
  }

  if (cache) {
    cache->centers = centers;
    cache->groups = groups;
    cache->grouped = grouped;
    cache->mlp = std::move(mlp_cache);
    cache->argmax = std::move(argmax);
    cache->feature_cols = f;
    cache->input_rows = n;
  }
  return {std::move(sub_positions), std::move(pooled)};
}

Mat set_abstraction_backward(nn::Mlp& mlp, const StageCache& cache,
                             const Mat& d_out_features) {
  const Index m = d_out_features.rows();
  const Index d = d_out_features.cols();
  const Index k = cache.grouped.rows() / m;

  Mat d_mlp_out = Mat::Zero(cache.grouped.rows(), d);
  for (Index i = 0; i < m; ++i) {
    for (Index col = 0; col < d; ++col) {
      const Index t = cache.argmax[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)];
      d_mlp_out(i * k + t, col) += d_out_features(i, col);
    }
  }
  const Mat d_grouped = mlp.backward(cache.mlp, d_mlp_out);

  Mat d_features = Mat::Zero(cache.input_rows, cache.feature_cols);
  for (Index i = 0; i < m; ++i) {
    const auto& group = cache.groups[static_cast<std::size_t>(i)];
    for (Index t = 0; t < k; ++t) {
      const Index j = group[static_cast<std::size_t>(t)];
      d_features.row(j) += d_grouped.row(i * k + t).tail(cache.feature_cols);
    }
  }
  return d_features;
}

Vec global_abstraction(const Mat& positions, const Mat& features,
                       const nn::Mlp& mlp, GlobalStageCache* cache) {
  const Index n = positions.rows();
  check(n >= 1, "global_abstraction: empty input");
  const Index f = features.cols();
  const Eigen::RowVector3d centroid = positions.colwise().mean();

  Mat grouped(n, 3 + f);
  grouped.leftCols(3) = positions.rowwise() - centroid;
  grouped.rightCols(f) = features;

  nn::Mlp::Cache mlp_cache;
  const Mat mlp_out = mlp.forward(grouped, cache ? &mlp_cache : nullptr);
  const Index d = mlp_out.cols();

  Vec code(d);
  std::vector<Index> argmax(static_cast<std::size_t>(d));
  for (Index col = 0; col < d; ++col) {
    Index best;
    code(col) = mlp_out.col(col).maxCoeff(&best);
    argmax[static_cast<std::size_t>(col)] = best;
  }
  if (cache) {
    cache->grouped = grouped;
    cache->mlp = std::move(mlp_cache);
    cache->argmax = std::move(argmax);
    cache->feature_cols = f;
  }
  return code;
}

Mat global_abstraction_backward(nn::Mlp& mlp, const GlobalStageCache& cache,
                                const RowVec& d_code) {
  const Index n = cache.grouped.rows();
  const Index d = d_code.cols();
  Mat d_mlp_out = Mat::Zero(n, d);
  for (Index col = 0; col < d; ++col) {
    d_mlp_out(cache.argmax[static_cast<std::size_t>(col)], col) = d_code(col);
  }
  const Mat d_grouped = mlp.backward(cache.mlp, d_mlp_out);
  return d_grouped.rightCols(cache.feature_cols);
}

PointCloudEncoderParams::PointCloudEncoderParams(const EncoderConfig& config,
                                                 const std::string& prefix)
    : cfg(config),
      sa1(prefix + ".sa1", 3 + 3, config.stage1.mlp_widths, config.activation),
      sa2(prefix + ".sa2", 3 + config.stage1.mlp_widths.back(),
          config.stage2.mlp_widths, config.activation),
      sa3(prefix + ".sa3", 3 + config.stage2.mlp_widths.back(),
          config.stage3_widths, config.activation) {}

void PointCloudEncoderParams::init(Rng& rng) {
  sa1.init_xavier(rng);
  sa2.init_xavier(rng);
  sa3.init_xavier(rng);
}

std::vector<nn::Param*> PointCloudEncoderParams::params() {
  std::vector<nn::Param*> out;
  for (nn::Mlp* m : {&sa1, &sa2, &sa3}) {
    for (nn::Param* p : m->params()) out.push_back(p);
  }
  return out;
}

namespace {

// Index-order ball-query truncation depends on the input point order, so the
// stack runs on a canonical (lexicographic) ordering. This makes the encoder
// exactly permutation invariant.
ColoredPointCloud canonical_order(const ColoredPointCloud& cloud) {
  const Index n = cloud.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    for (int c = 0; c < 3; ++c) {
      if (cloud.points(a, c) != cloud.points(b, c)) return cloud.points(a, c) < cloud.points(b, c);
    }
    for (int c = 0; c < 3; ++c) {
      if (cloud.colors(a, c) != cloud.colors(b, c)) return cloud.colors(a, c) < cloud.colors(b, c);
    }
    return a < b;
  });
  ColoredPointCloud out;
  out.points.resize(n, 3);
  out.colors.resize(n, 3);
  for (Index i = 0; i < n; ++i) {
    out.points.row(i) = cloud.points.row(idx[static_cast<std::size_t>(i)]);
    out.colors.row(i) = cloud.colors.row(idx[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace

LocalFeatureSet encode_local(const ColoredPointCloud& cloud,
                             const PointCloudEncoderParams& params,
                             EncoderCache* cache) {
  geometry::validate_cloud(cloud, params.cfg.min_points);
  const ColoredPointCloud ordered = canonical_order(cloud);
  auto [p1, f1] = set_abstraction(ordered.points, ordered.colors, params.cfg.stage1,
                                  params.sa1, cache ? &cache->s1 : nullptr);
  auto [p2, f2] = set_abstraction(p1, f1, params.cfg.stage2, params.sa2,
                                  cache ? &cache->s2 : nullptr);
  return {std::move(p2), std::move(f2)};
}

LatentCode encode_global(const ColoredPointCloud& cloud,
                         const PointCloudEncoderParams& params,
                         EncoderCache* cache) {
  LocalFeatureSet local = encode_local(cloud, params, cache);
  return global_abstraction(local.positions, local.features, params.sa3,
                            cache ? &cache->s3 : nullptr);
}

void encode_local_backward(PointCloudEncoderParams& params, const EncoderCache& cache,
                           const Mat& d_local_features) {
  const Mat d_f1 = set_abstraction_backward(params.sa2, cache.s2, d_local_features);
  set_abstraction_backward(params.sa1, cache.s1, d_f1);
}

void encode_global_backward(PointCloudEncoderParams& params, const EncoderCache& cache,
                            const RowVec& d_code) {
  const Mat d_f2 = global_abstraction_backward(params.sa3, cache.s3, d_code);
  encode_local_backward(params, cache, d_f2);
}

DecoderParams::DecoderParams(Index global_dim, const DecoderConfig& config,
                             const std::string& prefix)
    : cfg(config) {
  std::vector<Index> widths = config.hidden;
  widths.push_back(config.out_points * 6);
  mlp = nn::Mlp(prefix + ".mlp", global_dim, widths, nn::Activation::relu,
                /*act_last=*/false);
}

void DecoderParams::init(Rng& rng) { mlp.init_xavier(rng); }

std::vector<nn::Param*> DecoderParams::params() { return mlp.params(); }

ColoredPointCloud decode_cloud(const LatentCode& code, const DecoderParams& params,
                               DecoderCache* cache) {
  check(code.size() == params.mlp.layers.front().in_dim(),
        "decode_cloud: code dimension mismatch");
  nn::Mlp::Cache mlp_cache;
  const Mat flat = params.mlp.forward(code.transpose(), cache ? &mlp_cache : nullptr);
  const Index m = params.cfg.out_points;

  ColoredPointCloud out;
  out.points.resize(m, 3);
  out.colors.resize(m, 3);
  Mat color_logits(m, 3);
  for (Index i = 0; i < m; ++i) {
    for (int c = 0; c < 3; ++c) {
      out.points(i, c) = flat(0, i * 6 + c);
      color_logits(i, c) = flat(0, i * 6 + 3 + c);
    }
  }
  out.colors = (1.0 / (1.0 + (-color_logits.array()).exp())).matrix();
  if (cache) {
    cache->mlp = std::move(mlp_cache);
    cache->color_logits = std::move(color_logits);
  }
  return out;
}

RowVec decode_cloud_backward(DecoderParams& params, const DecoderCache& cache,
                             const Mat& d_points, const Mat& d_colors) {
  const Index m = params.cfg.out_points;
  const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-cache.color_logits.array()).exp());
  const Mat d_logits = (d_colors.array() * sig * (1.0 - sig)).matrix();

  Mat d_flat(1, m * 6);
  for (Index i = 0; i < m; ++i) {
    for (int c = 0; c < 3; ++c) {
      d_flat(0, i * 6 + c) = d_points(i, c);
      d_flat(0, i * 6 + 3 + c) = d_logits(i, c);
    }
  }
  return params.mlp.backward(cache.mlp, d_flat).row(0);
}

AutoencoderParams::AutoencoderParams(const EncoderConfig& enc_cfg,
                                     const DecoderConfig& dec_cfg)
    : encoder(enc_cfg, "encoder"), decoder(enc_cfg.global_dim(), dec_cfg, "decoder") {}

void AutoencoderParams::init(Rng& rng) {
  encoder.init(rng);
  decoder.init(rng);
}

std::vector<nn::Param*> AutoencoderParams::params() {
  std::vector<nn::Param*> out = encoder.params();
  for (nn::Param* p : decoder.params()) out.push_back(p);
  return out;
}

ReconstructionLoss reconstruction_loss(const ColoredPointCloud& recon,
                                       const ColoredPointCloud& target,
                                       double lambda_color) {
  const Index nr = recon.size();
  const Index nt = target.size();
  check(nr > 0 && nt > 0, "reconstruction_loss: empty cloud");

  const auto match_rt = geometry::nearest_indices(recon.points, target.points);
  const auto match_tr = geometry::nearest_indices(target.points, recon.points);

  ReconstructionLoss out;
  out.d_points = Mat::Zero(nr, 3);
  out.d_colors = Mat::Zero(nr, 3);

  for (Index i = 0; i < nr; ++i) {
    const Index j = match_rt[static_cast<std::size_t>(i)];
    const Eigen::RowVector3d dx = recon.points.row(i) - target.points.row(j);
    const Eigen::RowVector3d dc = recon.colors.row(i) - target.colors.row(j);
    out.chamfer += dx.squaredNorm() / static_cast<double>(nr);
    out.color += dc.squaredNorm() / static_cast<double>(nr);
    out.d_points.row(i) += 2.0 * dx / static_cast<double>(nr);
    out.d_colors.row(i) += lambda_color * 2.0 * dc / static_cast<double>(nr);
  }
  for (Index j = 0; j < nt; ++j) {
    const Index i = match_tr[static_cast<std::size_t>(j)];
    const Eigen::RowVector3d dx = recon.points.row(i) - target.points.row(j);
    const Eigen::RowVector3d dc = recon.colors.row(i) - target.colors.row(j);
    out.chamfer += dx.squaredNorm() / static_cast<double>(nt);
    out.color += dc.squaredNorm() / static_cast<double>(nt);
    out.d_points.row(i) += 2.0 * dx / static_cast<double>(nt);
    out.d_colors.row(i) += lambda_color * 2.0 * dc / static_cast<double>(nt);
  }
  out.total = out.chamfer + lambda_color * out.color;
  return out;
}

AeTrainResult train_autoencoder(AutoencoderParams& params,
                                const std::vector<ColoredPointCloud>& clouds,
                                const AeTrainConfig& cfg) {
  check(!clouds.empty(), "train_autoencoder: empty dataset");
  std::vector<ColoredPointCloud> data;
  data.reserve(clouds.size());
  for (const auto& c : clouds) data.push_back(geometry::normalize_cloud(c));

  nn::Adam adam(params.params(), cfg.lr);
  Rng rng = Rng(cfg.seed).derive("ae-train");

  AeTrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long step = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      adam.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const ColoredPointCloud& cloud = data[order[bi]];
        EncoderCache enc_cache;
        DecoderCache dec_cache;
        const LatentCode code = encode_global(cloud, params.encoder, &enc_cache);
        const ColoredPointCloud recon = decode_cloud(code, params.decoder, &dec_cache);
        const ReconstructionLoss loss = reconstruction_loss(recon, cloud, cfg.lambda_color);
        batch_loss += loss.total;
        const RowVec d_code = decode_cloud_backward(
            params.decoder, dec_cache, (inv_b * loss.d_points).eval(),
            (inv_b * loss.d_colors).eval());
        encode_global_backward(params.encoder, enc_cache, d_code);
      }
      batch_loss *= inv_b;
      if (!std::isfinite(batch_loss)) {
        throw Error("autoencoder training diverged: non-finite loss at step " +
                    std::to_string(step));
      }
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      adam.step();
      ++step;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }

  double mean_chamfer = 0.0;
  for (const auto& cloud : data) {
    const LatentCode code = encode_global(cloud, params.encoder);
    const ColoredPointCloud recon = decode_cloud(code, params.decoder);
    mean_chamfer += geometry::chamfer_distance(recon.points, cloud.points);
  }
  result.final_mean_chamfer = mean_chamfer / static_cast<double>(data.size());
  return result;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  check(!text.empty(), "tokenize: empty text");
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  check(!tokens.empty(), "tokenize: no tokens in text");
  return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> uniq;
  for (const auto& text : corpus) {
    for (auto& w : tokenize_words(text)) uniq.insert(std::move(w));
  }
  return from_words(std::vector<std::string>(uniq.begin(), uniq.end()));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> sorted_words) {
  Vocabulary v;
  v.words = std::move(sorted_words);
  for (std::size_t i = 0; i < v.words.size(); ++i) {
    v.index[v.words[i]] = static_cast<int>(i) + 1;
  }
  return v;
}

int Vocabulary::id(const std::string& word) const {
  const auto it = index.find(word);
  return it == index.end() ? 0 : it->second;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& w : tokenize_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

FileBackedTextProvider::FileBackedTextProvider(const std::string& path)
    : source_(path) {
  load(io::read_embedding_file(path));
}

FileBackedTextProvider::FileBackedTextProvider(
    const std::vector<io::EmbeddingRecord>& records)
    : source_("memory") {
  load(records);
}

void FileBackedTextProvider::load(const std::vector<io::EmbeddingRecord>& records) {
  for (const auto& rec : records) {
    check(rec.embeddings.rows() >= 1, "embedding record with zero tokens: " + rec.id);
    if (d_ == 0) d_ = rec.embeddings.cols();
    check(rec.embeddings.cols() == d_, "inconsistent embedding dim in record " + rec.id);
    if (!records_.emplace(rec.id, rec.embeddings).second) {
      throw ValidationError("duplicate embedding record id: " + rec.id);
    }
  }
  check(!records_.empty(), "embedding provider: no records");
}

TextEmbeddingSequence FileBackedTextProvider::embed(const std::string& text) const {
  const std::string key = caption_id(text);
  const auto it = records_.find(key);
  if (it == records_.end()) {
    throw Error("no stored embedding for caption id " + key + " (text: \"" + text + "\")");
  }
  TextEmbeddingSequence out;
  out.embeddings = it->second;
  out.mask.assign(static_cast<std::size_t>(out.embeddings.rows()), 1);
  return out;
}

namespace {

Mat positional_signal(Index t, Index d) {
  Mat pe(t, d);
  for (Index pos = 0; pos < t; ++pos) {
    for (Index i = 0; i < d; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(d));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

BuiltinTextProvider::BuiltinTextProvider(Vocabulary vocab, const Config& cfg)
    : vocab_(std::move(vocab)),
      cfg_(cfg),
      table_("text.table", static_cast<Index>(vocab_.words.size()) + 1, cfg.d_text),
      attn_cfg_{cfg.d_text, cfg.heads, true},
      attn_("text.attn", attn_cfg_) {
  Rng rng = Rng(cfg.seed).derive("text-provider");
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_text));
  for (Index i = 0; i < table_.value.rows(); ++i) {
    for (Index j = 0; j < table_.value.cols(); ++j) {
      table_.value(i, j) = rng.normal() * scale;
    }
  }
  attn_.init(rng);
}

TextEmbeddingSequence BuiltinTextProvider::embed(const std::string& text) const {
  return embed(text, nullptr);
}

TextEmbeddingSequence BuiltinTextProvider::embed(const std::string& text,
                                                 Cache* cache) const {
  const std::vector<int> ids = tokenize(text, vocab_);
  const Index t = static_cast<Index>(ids.size());
  Mat rows(t, cfg_.d_text);
  for (Index i = 0; i < t; ++i) {
    rows.row(i) = table_.value.row(ids[static_cast<std::size_t>(i)]);
  }
  rows += positional_signal(t, cfg_.d_text);

  const std::vector<std::uint8_t> mask(static_cast<std::size_t>(t), 1);
  nn::AttentionCache attn_cache;
  const Mat out = nn::cross_attention(rows, rows, mask, attn_, attn_cfg_,
                                      cache ? &attn_cache : nullptr);
  if (cache) {
    cache->ids = ids;
    cache->table_rows = rows;
    cache->attn = std::move(attn_cache);
  }
  TextEmbeddingSequence seq;
  seq.embeddings = out;
  seq.mask = mask;
  return seq;
}

void BuiltinTextProvider::backward(const Cache& cache, const Mat& d_embeddings) {
  const auto grads = nn::cross_attention_backward(attn_, attn_cfg_, cache.attn, d_embeddings);
  const Mat d_rows = grads.d_queries + grads.d_keys_values;
  for (Index i = 0; i < d_rows.rows(); ++i) {
    table_.grad.row(cache.ids[static_cast<std::size_t>(i)]) += d_rows.row(i);
  }
}

std::vector<nn::Param*> BuiltinTextProvider::trainable_params() {
  if (cfg_.frozen) return {};
  return all_params();
}

std::vector<nn::Param*> BuiltinTextProvider::all_params() {
  std::vector<nn::Param*> out{&table_};
  for (nn::Param* p : attn_.params()) out.push_back(p);
  return out;
}

TextEmbeddingSequence embed_text(const std::string& text, const TextProvider& provider) {
  TextEmbeddingSequence seq = provider.embed(text);
  bool any = false;
  for (auto m : seq.mask) any = any || (m != 0);
  check(any, "embed_text: sequence with no real tokens");
  check(seq.embeddings.allFinite(), "embed_text: non-finite embedding");
  return seq;
}

void save_params(io::Checkpoint& ckpt, const std::vector<nn::Param*>& params) {
  for (const nn::Param* p : params) ckpt.add(p->name, p->value);
}

void load_params(const io::Checkpoint& ckpt, const std::vector<nn::Param*>& params) {
  for (nn::Param* p : params) {
    const Mat& stored = ckpt.get(p->name);
    if (stored.rows() != p->value.rows() || stored.cols() != p->value.cols()) {
      throw ValidationError(
          "checkpoint tensor " + p->name + " has shape " + std::to_string(stored.rows()) +
          "x" + std::to_string(stored.cols()) + ", expected " +
          std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
    }
    p->value = stored;
    p->grad.setZero();
  }
}

}  // namespace ccbench::encoders
