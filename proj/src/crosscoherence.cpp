#include "ccbench/crosscoherence.hpp"

#include <algorithm>
#include <cmath>

namespace ccbench::crosscoherence {

BilateralParams::BilateralParams(const std::string& name, const AttentionConfig& cfg)
    : shape_from_text(name + ".s_from_t", cfg), text_from_shape(name + ".t_from_s", cfg) {}

void BilateralParams::init(Rng& rng) {
  shape_from_text.init(rng);
  text_from_shape.init(rng);
}

std::vector<nn::Param*> BilateralParams::params() {
  std::vector<nn::Param*> out = shape_from_text.params();
  for (nn::Param* p : text_from_shape.params()) out.push_back(p);
  return out;
}

BilateralOut bilateral_block(const Mat& shape_feats, const Mat& text_feats,
                             const std::vector<std::uint8_t>& text_mask,
                             const BilateralParams& params, const AttentionConfig& cfg,
                             BilateralCache* cache) {
  const std::vector<std::uint8_t> shape_mask(
      static_cast<std::size_t>(shape_feats.rows()), 1);
  BilateralOut out;
  out.shape_attended = cross_attention(shape_feats, text_feats, text_mask,
                                       params.shape_from_text, cfg,
                                       cache ? &cache->s_from_t : nullptr);
  out.text_attended = cross_attention(text_feats, shape_feats, shape_mask,
                                      params.text_from_shape, cfg,
                                      cache ? &cache->t_from_s : nullptr);
  return out;
}

BilateralGrads bilateral_block_backward(BilateralParams& params,
                                        const AttentionConfig& cfg,
                                        const BilateralCache& cache,
                                        const Mat& d_shape_attended,
                                        const Mat& d_text_attended) {
  const auto g1 = cross_attention_backward(params.shape_from_text, cfg,
                                           cache.s_from_t, d_shape_attended);
  const auto g2 = cross_attention_backward(params.text_from_shape, cfg,
                                           cache.t_from_s, d_text_attended);
  BilateralGrads out;
  out.d_shape = g1.d_queries + g2.d_keys_values;
  out.d_text = g2.d_queries + g1.d_keys_values;
  return out;
}

ScorerParams::ScorerParams(Index d_shape, Index d_text, const ScorerConfig& config,
                           const std::string& prefix)
    : cfg(config),
      shape_proj(prefix + ".shape_proj", d_shape, config.attn.d_model),
      text_proj(prefix + ".text_proj", d_text, config.attn.d_model) {
  check(config.blocks >= 1, "scorer: needs at least one bilateral block");
  for (Index i = 0; i < config.blocks; ++i) {
    blocks.emplace_back(prefix + ".block" + std::to_string(i), config.attn);
  }
  std::vector<Index> widths = config.head_widths;
  widths.push_back(1);
  head = nn::Mlp(prefix + ".head", 2 * config.attn.d_model, widths,
                 config.head_activation, /*act_last=*/false);
}

void ScorerParams::init(Rng& rng) {
  shape_proj.init_xavier(rng);
  text_proj.init_xavier(rng);
  for (auto& b : blocks) b.init(rng);
  head.init_xavier(rng);
  head.layers.back().init_zero();
}

std::vector<nn::Param*> ScorerParams::params() {
  std::vector<nn::Param*> out;
  for (nn::Param* p : shape_proj.params()) out.push_back(p);
  for (nn::Param* p : text_proj.params()) out.push_back(p);
  for (auto& b : blocks) {
    for (nn::Param* p : b.params()) out.push_back(p);
  }
  for (nn::Param* p : head.params()) out.push_back(p);
  return out;
}

double score_features(const LocalFeatureSet& local, const TextEmbeddingSequence& text,
                      const ScorerParams& params, ScoreTape* tape) {
  const Index d = params.cfg.attn.d_model;
  Index real = 0;
  for (auto m : text.mask) real += (m != 0);
  check(real >= 1, "score_features: no real text tokens");

  Mat s = params.shape_proj.forward(local.features);
  Mat x = params.text_proj.forward(text.embeddings);

  std::vector<BilateralCache> caches(tape ? params.blocks.size() : 0);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    BilateralOut out = bilateral_block(s, x, text.mask, params.blocks[i],
                                       params.cfg.attn, tape ? &caches[i] : nullptr);
    s = std::move(out.shape_attended);
    x = std::move(out.text_attended);
  }

  Mat pooled(1, 2 * d);
  pooled.row(0).head(d) = s.colwise().mean();
  RowVec text_pool = RowVec::Zero(d);
  for (Index t = 0; t < x.rows(); ++t) {
    if (text.mask[static_cast<std::size_t>(t)]) text_pool += x.row(t);
  }
  pooled.row(0).tail(d) = text_pool / static_cast<double>(real);

  nn::Mlp::Cache head_cache;
  const Mat logit = params.head.forward(pooled, tape ? &head_cache : nullptr);
  if (tape) {
    tape->shape_in = local.features;
    tape->text_in = text.embeddings;
    tape->text_mask = text.mask;
    tape->blocks = std::move(caches);
    tape->pooled = pooled;
    tape->head = std::move(head_cache);
    tape->real_tokens = real;
    tape->shape_rows = local.features.rows();
  }
  return logit(0, 0);
}

FeatureGrads score_features_backward(ScorerParams& params, const ScoreTape& tape,
                                     double d_logit) {
  const Index d = params.cfg.attn.d_model;
  Mat d_logit_mat(1, 1);
  d_logit_mat(0, 0) = d_logit;
  const Mat d_pooled = params.head.backward(tape.head, d_logit_mat);

  const Index l = tape.blocks.back().s_from_t.q_in.rows();
  const Index t = tape.blocks.back().t_from_s.q_in.rows();
  Mat d_s = Mat::Zero(l, d);
  Mat d_x = Mat::Zero(t, d);
  d_s.rowwise() = (d_pooled.row(0).head(d) / static_cast<double>(l)).eval();
  const RowVec d_text_pool = d_pooled.row(0).tail(d) / static_cast<double>(tape.real_tokens);
  for (Index r = 0; r < t; ++r) {
    if (tape.text_mask[static_cast<std::size_t>(r)]) d_x.row(r) = d_text_pool;
  }

  for (std::size_t i = tape.blocks.size(); i-- > 0;) {
    BilateralGrads g = bilateral_block_backward(params.blocks[i], params.cfg.attn,
                                                tape.blocks[i], d_s, d_x);
    d_s = std::move(g.d_shape);
    d_x = std::move(g.d_text);
  }

  FeatureGrads out;
  out.d_local = params.shape_proj.backward(tape.shape_in, d_s);
  out.d_text = params.text_proj.backward(tape.text_in, d_x);
  return out;
}

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

Index GroupScore::argmax() const {
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  return best;
}

CrossCoherenceModel::CrossCoherenceModel(const encoders::EncoderConfig& enc_cfg,
                                         std::shared_ptr<encoders::TextProvider> text_provider,
                                         const ScorerConfig& score_cfg)
    : encoder(enc_cfg, "encoder"),
      provider(std::move(text_provider)),
      scorer(enc_cfg.local_dim(), provider->dim(), score_cfg) {}

LocalFeatureSet CrossCoherenceModel::local_features(const ColoredPointCloud& cloud) const {
  return encoders::encode_local(geometry::normalize_cloud(cloud), encoder);
}

double CrossCoherenceModel::score_pair(const ColoredPointCloud& cloud,
                                       const std::string& text) const {
  const LocalFeatureSet local = local_features(cloud);
  const TextEmbeddingSequence seq = encoders::embed_text(text, *provider);
  return score_features(local, seq, scorer);
}

GroupScore CrossCoherenceModel::score_group(
    const std::string& text, const std::vector<const ColoredPointCloud*>& clouds) const {
  check(clouds.size() >= 2, "score_group: needs at least 2 candidate clouds");
  const TextEmbeddingSequence seq = encoders::embed_text(text, *provider);
  GroupScore gs;
  gs.logits.resize(static_cast<Index>(clouds.size()));
  for (std::size_t g = 0; g < clouds.size(); ++g) {
    gs.logits(static_cast<Index>(g)) =
        score_features(local_features(*clouds[g]), seq, scorer);
  }
  gs.probabilities = softmax(gs.logits);
  return gs;
}

std::vector<nn::Param*> CrossCoherenceModel::trainable_params() {
  std::vector<nn::Param*> out;
  if (!encoder_frozen) {
    for (nn::Param* p : encoder.params()) out.push_back(p);
  }
  for (nn::Param* p : provider->trainable_params()) out.push_back(p);
  for (nn::Param* p : scorer.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> CrossCoherenceModel::all_params() {
  std::vector<nn::Param*> out;
  for (nn::Param* p : encoder.params()) out.push_back(p);
  if (auto* builtin = dynamic_cast<encoders::BuiltinTextProvider*>(provider.get())) {
    for (nn::Param* p : builtin->all_params()) out.push_back(p);
  }
  for (nn::Param* p : scorer.params()) out.push_back(p);
  return out;
}

double train_step(CrossCoherenceModel& model, const std::vector<TrainItem>& batch,
                  nn::Adam& adam) {
  check(!batch.empty(), "train_step: empty batch");
  auto* builtin = dynamic_cast<encoders::BuiltinTextProvider*>(model.provider.get());
  const bool text_trainable = builtin != nullptr && !builtin->frozen();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  adam.zero_grad();
  double loss_sum = 0.0;
  for (const TrainItem& item : batch) {
    const std::size_t g_count =
        item.cached_features.empty() ? item.clouds.size() : item.cached_features.size();
    check(g_count >= 2, "train_step: group smaller than 2");
    check(item.target >= 0 && item.target < static_cast<int>(g_count),
          "train_step: target outside group");

    encoders::BuiltinTextProvider::Cache text_cache;
    TextEmbeddingSequence seq;
    if (builtin != nullptr) {
      seq = builtin->embed(item.text, text_trainable ? &text_cache : nullptr);
    } else {
      seq = model.provider->embed(item.text);
    }

    std::vector<LocalFeatureSet> computed;
    std::vector<encoders::EncoderCache> enc_caches;
    const bool need_encoder_grads = !model.encoder_frozen && item.cached_features.empty();
    if (item.cached_features.empty()) {
      computed.reserve(g_count);
      if (need_encoder_grads) enc_caches.resize(g_count);
      for (std::size_t g = 0; g < g_count; ++g) {
        computed.push_back(encoders::encode_local(
            geometry::normalize_cloud(*item.clouds[g]), model.encoder,
            need_encoder_grads ? &enc_caches[g] : nullptr));
      }
    }

    Vec logits(static_cast<Index>(g_count));
    std::vector<ScoreTape> tapes(g_count);
    for (std::size_t g = 0; g < g_count; ++g) {
      const LocalFeatureSet& local =
          item.cached_features.empty() ? computed[g] : *item.cached_features[g];
      logits(static_cast<Index>(g)) = score_features(local, seq, model.scorer, &tapes[g]);
    }

    const Vec p = softmax(logits);
    loss_sum += -std::log(p(item.target));

    for (std::size_t g = 0; g < g_count; ++g) {
      const double d_logit =
          (p(static_cast<Index>(g)) - (static_cast<int>(g) == item.target ? 1.0 : 0.0)) *
          inv_b;
      const FeatureGrads grads =
          score_features_backward(model.scorer, tapes[g], d_logit);
      if (text_trainable) builtin->backward(text_cache, grads.d_text);
      if (need_encoder_grads) {
        encoders::encode_local_backward(model.encoder, enc_caches[g], grads.d_local);
      }
    }
  }

  const double loss = loss_sum * inv_b;
  if (!std::isfinite(loss)) {
    throw Error("train_step: non-finite cross-entropy loss");
  }
  adam.step();
  return loss;
}

namespace {

std::vector<Mat> snapshot_values(const std::vector<nn::Param*>& params) {
  std::vector<Mat> out;
  out.reserve(params.size());
  for (const nn::Param* p : params) out.push_back(p->value);
  return out;
}

void restore_values(const std::vector<nn::Param*>& params, const std::vector<Mat>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

FitResult fit(CrossCoherenceModel& model, const CloudLookup& clouds,
              const std::vector<distractors::Triplet>& train,
              const std::vector<distractors::Triplet>& val, const FitConfig& cfg) {
  check(!train.empty(), "fit: empty training split");
  check(!val.empty(), "fit: empty validation split");
  check(cfg.group_size >= 2, "fit: group size must be >= 2");
  for (const auto& t : val) {
    check(t.group_size() == 2, "fit: validation triplets must have exactly 2 shapes");
  }

  // With a frozen encoder the local features of every referenced shape are
  // fixed; compute them once.
  std::map<std::string, LocalFeatureSet> feature_cache;
  const bool use_cache = model.encoder_frozen;
  if (use_cache) {
    for (const auto* split : {&train, &val}) {
      for (const auto& t : *split) {
        for (const auto& id : t.shape_ids) {
          if (!feature_cache.count(id)) {
            feature_cache.emplace(id, model.local_features(clouds(id)));
          }
        }
      }
    }
  }

  // per-column feature spread, scales the train-time noise
  RowVec feature_std;
  if (use_cache && cfg.feature_noise > 0.0 && !feature_cache.empty()) {
    const Index d = feature_cache.begin()->second.features.cols();
    RowVec sum = RowVec::Zero(d), sq = RowVec::Zero(d);
    double n = 0;
    for (const auto& [id, f] : feature_cache) {
      sum += f.features.colwise().sum();
      sq += f.features.array().square().matrix().colwise().sum();
      n += static_cast<double>(f.features.rows());
    }
    feature_std =
        ((sq / n).array() - (sum / n).array().square()).cwiseMax(0.0).sqrt().matrix();
  }

  const auto item_logit = [&](const std::string& id,
                              const TextEmbeddingSequence& seq) {
    if (use_cache) return score_features(feature_cache.at(id), seq, model.scorer);
    return score_features(model.local_features(clouds(id)), seq, model.scorer);
  };

  const auto val_accuracy = [&]() {
    Index correct = 0;
    for (const auto& t : val) {
      const TextEmbeddingSequence seq = encoders::embed_text(t.text, *model.provider);
      const double ref = item_logit(t.shape_ids[static_cast<std::size_t>(t.target)], seq);
      const double other = item_logit(t.shape_ids[static_cast<std::size_t>(1 - t.target)], seq);
      if (ref > other) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(val.size());
  };

  nn::Adam adam(model.trainable_params(), cfg.lr);
  const Rng root(cfg.seed);

  FitResult result;
  std::vector<Mat> best = snapshot_values(model.trainable_params());
  Index since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.derive("shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<TrainItem> batch;
      std::vector<std::unique_ptr<LocalFeatureSet>> noisy;  // owns augmented copies
      batch.reserve(stop - start);
      for (std::size_t bi = start; bi < stop; ++bi) {
        const distractors::Triplet& t = train[order[bi]];
        TrainItem item;
        item.text = t.text;

        std::vector<std::size_t> members;
        if (t.group_size() <= cfg.group_size) {
          for (std::size_t g = 0; g < t.shape_ids.size(); ++g) members.push_back(g);
          item.target = t.target;
        } else {
          // subsample group_size-1 distractors and re-randomize the
          // reference position, seeded per (epoch, triplet)
          Rng rng = root.derive("group", (static_cast<std::uint64_t>(epoch) << 32) ^
                                             static_cast<std::uint64_t>(order[bi]));
          std::vector<std::size_t> negatives;
          for (std::size_t g = 0; g < t.shape_ids.size(); ++g) {
            if (static_cast<int>(g) != t.target) negatives.push_back(g);
          }
          rng.shuffle(negatives);
          negatives.resize(static_cast<std::size_t>(cfg.group_size - 1));
          const auto target_pos =
              static_cast<std::size_t>(rng.uniform_u64(static_cast<std::uint64_t>(cfg.group_size)));
          std::size_t next = 0;
          for (std::size_t g = 0; g < static_cast<std::size_t>(cfg.group_size); ++g) {
            if (g == target_pos) {
              members.push_back(static_cast<std::size_t>(t.target));
            } else {
              members.push_back(negatives[next++]);
            }
          }
          item.target = static_cast<int>(target_pos);
        }

        for (const std::size_t g : members) {
          const std::string& id = t.shape_ids[g];
          if (use_cache) {
            item.cached_features.push_back(&feature_cache.at(id));
          } else {
            item.clouds.push_back(&clouds(id));
          }
        }
        batch.push_back(std::move(item));
      }
      epoch_loss += train_step(model, batch, adam) * static_cast<double>(stop - start);
      seen += stop - start;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(seen);
    stats.val_accuracy = val_accuracy();
    result.history.push_back(stats);

    if (result.best_epoch < 0 || stats.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = stats.val_accuracy;
      result.best_epoch = epoch;
      best = snapshot_values(model.trainable_params());
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  restore_values(model.trainable_params(), best);
  return result;
}

}  // namespace ccbench::crosscoherence
