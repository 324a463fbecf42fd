#include "ccbench/nn.hpp"

#include <cmath>
#include <limits>

namespace ccbench::nn {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ValidationError("unknown activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

Mat activate(const Mat& x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x.cwiseMax(0.0);
    case Activation::tanh: return x.array().tanh().matrix();
  }
  return x;
}

Mat activate_grad(const Mat& pre, Activation a) {
  switch (a) {
    case Activation::identity: return Mat::Ones(pre.rows(), pre.cols());
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - pre.array().tanh().square()).matrix();
  }
  return Mat::Ones(pre.rows(), pre.cols());
}

void Linear::init_xavier(Rng& rng) {
  const double scale = std::sqrt(2.0 / static_cast<double>(in_dim() + out_dim()));
  for (Index i = 0; i < w.value.rows(); ++i) {
    for (Index j = 0; j < w.value.cols(); ++j) {
      w.value(i, j) = rng.normal() * scale;
    }
  }
  b.value.setZero();
}

void Linear::init_zero() {
  w.value.setZero();
  b.value.setZero();
}

Mat Linear::backward(const Mat& x, const Mat& grad_out) {
  w.grad.noalias() += x.transpose() * grad_out;
  b.grad.row(0) += grad_out.colwise().sum();
  return grad_out * w.value.transpose();
}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
  const Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Vec inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv;
    inv_std(i) = inv;
  }
  Mat y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  return y;
}

Mat LayerNorm::backward(const Cache& cache, const Mat& grad_out) {
  const Index n = grad_out.rows();
  beta.grad.row(0) += grad_out.colwise().sum();
  gamma.grad.row(0) += (grad_out.array() * cache.xhat.array()).colwise().sum().matrix();
  Mat dx(n, grad_out.cols());
  for (Index i = 0; i < n; ++i) {
    const Eigen::ArrayXd dxhat =
        grad_out.row(i).array() * gamma.value.row(0).array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * cache.xhat.row(i).array().transpose()).mean();
    dx.row(i) = (cache.inv_std(i) *
                 (dxhat - m1 - cache.xhat.row(i).array().transpose() * m2))
                    .matrix();
  }
  return dx;
}

Mlp::Mlp(const std::string& name, Index in, const std::vector<Index>& widths,
         Activation activation, bool act_last)
    : act(activation), activate_last(act_last) {
  check(!widths.empty(), "mlp: empty width list");
  Index prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    check(widths[i] >= 1, "mlp: width must be >= 1");
    layers.emplace_back(name + ".l" + std::to_string(i), prev, widths[i]);
    prev = widths[i];
  }
}

Mat Mlp::forward(const Mat& x, Cache* cache) const {
  Mat h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    Mat pre = layers[i].forward(h);
    if (cache) cache->pre.push_back(pre);
    const bool activated = activate_last || i + 1 < layers.size();
    h = activated ? activate(pre, act) : std::move(pre);
  }
  return h;
}

Mat Mlp::backward(const Cache& cache, const Mat& grad_out) {
  Mat g = grad_out;
  for (std::size_t ri = layers.size(); ri-- > 0;) {
    const bool activated = activate_last || ri + 1 < layers.size();
    if (activated) {
      g = (g.array() * activate_grad(cache.pre[ri], act).array()).matrix();
    }
    g = layers[ri].backward(cache.inputs[ri], g);
  }
  return g;
}

void Mlp::init_xavier(Rng& rng) {
  for (auto& l : layers) l.init_xavier(rng);
}

std::vector<Param*> Mlp::params() {
  std::vector<Param*> out;
  for (auto& l : layers) {
    for (Param* p : l.params()) out.push_back(p);
  }
  return out;
}

AttentionParams::AttentionParams(const std::string& name, const AttentionConfig& cfg)
    : q(name + ".q", cfg.d_model, cfg.d_model),
      k(name + ".k", cfg.d_model, cfg.d_model),
      v(name + ".v", cfg.d_model, cfg.d_model),
      o(name + ".o", cfg.d_model, cfg.d_model),
      norm(name + ".norm", cfg.d_model) {
  check(cfg.d_model % cfg.heads == 0, "attention: d_model must be divisible by heads");
}

void AttentionParams::init(Rng& rng) {
  q.init_xavier(rng);
  k.init_xavier(rng);
  v.init_xavier(rng);
  o.init_xavier(rng);
}

std::vector<Param*> AttentionParams::params() {
  std::vector<Param*> out;
  for (Linear* l : {&q, &k, &v, &o}) {
    for (Param* p : l->params()) out.push_back(p);
  }
  for (Param* p : norm.params()) out.push_back(p);
  return out;
}

Mat cross_attention(const Mat& queries, const Mat& keys_values,
                    const std::vector<std::uint8_t>& mask,
                    const AttentionParams& params, const AttentionConfig& cfg,
                    AttentionCache* cache) {
  const Index lq = queries.rows();
  const Index lkv = keys_values.rows();
  check(queries.cols() == cfg.d_model && keys_values.cols() == cfg.d_model,
        "cross_attention: input dimension != d_model");
  check(static_cast<Index>(mask.size()) == lkv,
        "cross_attention: mask length != key count");
  bool any = false;
  for (auto m : mask) any = any || (m != 0);
  if (!any) throw ValidationError("cross_attention: all key positions masked");

  const Index dh = cfg.d_model / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat q_proj = params.q.forward(queries);
  const Mat k_proj = params.k.forward(keys_values);
  const Mat v_proj = params.v.forward(keys_values);

  Mat heads_out(lq, cfg.d_model);
  std::vector<Mat> weights(static_cast<std::size_t>(cfg.heads));
  for (Index h = 0; h < cfg.heads; ++h) {
    const auto qh = q_proj.middleCols(h * dh, dh);
    const auto kh = k_proj.middleCols(h * dh, dh);
    const auto vh = v_proj.middleCols(h * dh, dh);
    Mat scores = (qh * kh.transpose()) * scale;
    for (Index j = 0; j < lkv; ++j) {
      if (!mask[static_cast<std::size_t>(j)]) {
        scores.col(j).setConstant(-std::numeric_limits<double>::infinity());
      }
    }
    Mat attn(lq, lkv);
    for (Index i = 0; i < lq; ++i) {
      const double row_max = scores.row(i).maxCoeff();
      Eigen::ArrayXd e = (scores.row(i).array() - row_max).exp();
      attn.row(i) = (e / e.sum()).matrix();
    }
    heads_out.middleCols(h * dh, dh) = attn * vh;
    weights[static_cast<std::size_t>(h)] = std::move(attn);
  }

  Mat out = params.o.forward(heads_out);
  Mat pre_norm;
  LayerNorm::Cache ln_cache;
  if (cfg.use_residual_norm) {
    pre_norm = queries + out;
    out = params.norm.forward(pre_norm, cache ? &ln_cache : nullptr);
  }
  if (cache) {
    cache->q_in = queries;
    cache->kv_in = keys_values;
    cache->q_proj = q_proj;
    cache->k_proj = k_proj;
    cache->v_proj = v_proj;
    cache->weights = weights;
    cache->heads_out = heads_out;
    cache->pre_norm = pre_norm;
    cache->ln = std::move(ln_cache);
  }
  return out;
}

AttentionGrads cross_attention_backward(AttentionParams& params,
                                        const AttentionConfig& cfg,
                                        const AttentionCache& cache,
                                        const Mat& grad_out) {
  const Index dh = cfg.d_model / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat d_queries = Mat::Zero(cache.q_in.rows(), cfg.d_model);
  Mat d_out = grad_out;
  if (cfg.use_residual_norm) {
    d_out = params.norm.backward(cache.ln, grad_out);
    d_queries += d_out;  // residual path
  }
  Mat d_heads = params.o.backward(cache.heads_out, d_out);

  Mat d_q_proj = Mat::Zero(cache.q_proj.rows(), cfg.d_model);
  Mat d_k_proj = Mat::Zero(cache.k_proj.rows(), cfg.d_model);
  Mat d_v_proj = Mat::Zero(cache.v_proj.rows(), cfg.d_model);
  for (Index h = 0; h < cfg.heads; ++h) {
    const auto qh = cache.q_proj.middleCols(h * dh, dh);
    const auto kh = cache.k_proj.middleCols(h * dh, dh);
    const auto vh = cache.v_proj.middleCols(h * dh, dh);
    const Mat& attn = cache.weights[static_cast<std::size_t>(h)];
    const auto d_oh = d_heads.middleCols(h * dh, dh);

    Mat d_attn = d_oh * vh.transpose();
    d_v_proj.middleCols(h * dh, dh) += attn.transpose() * d_oh;

    // softmax backward per row; masked entries have weight 0 and stay 0
    Mat d_scores(attn.rows(), attn.cols());
    for (Index i = 0; i < attn.rows(); ++i) {
      const double dot = d_attn.row(i).dot(attn.row(i));
      d_scores.row(i) = (attn.row(i).array() * (d_attn.row(i).array() - dot)).matrix();
    }
    d_scores *= scale;
    d_q_proj.middleCols(h * dh, dh) += d_scores * kh;
    d_k_proj.middleCols(h * dh, dh) += d_scores.transpose() * qh;
  }

  d_queries += params.q.backward(cache.q_in, d_q_proj);
  Mat d_kv = params.k.backward(cache.kv_in, d_k_proj);
  d_kv += params.v.backward(cache.kv_in, d_v_proj);
  return {std::move(d_queries), std::move(d_kv)};
}

Adam::Adam(std::vector<Param*> params, double lr) : params_(std::move(params)), lr_(lr) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * p.grad.array().square()).matrix();
    p.value.array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

}  // namespace ccbench::nn
