#pragma once

#include "ccbench/core.hpp"
#include "ccbench/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ccbench::nn {

/// A named learnable tensor with its gradient accumulator.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

enum class Activation { identity, relu, tanh };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

Mat activate(const Mat& x, Activation a);
/// Elementwise derivative, evaluated at the pre-activation input.
Mat activate_grad(const Mat& pre, Activation a);

struct Linear {
  Param w;  // in x out
  Param b;  // 1 x out

  Linear() = default;
  Linear(const std::string& name, Index in, Index out)
      : w(name + ".w", in, out), b(name + ".b", 1, out) {}

  Index in_dim() const { return w.value.rows(); }
  Index out_dim() const { return w.value.cols(); }

  void init_xavier(Rng& rng);
  void init_zero();

  Mat forward(const Mat& x) const { return (x * w.value).rowwise() + b.value.row(0); }

  /// Accumulates parameter gradients and returns dL/dx.
  Mat backward(const Mat& x, const Mat& grad_out);

  std::vector<Param*> params() { return {&w, &b}; }
};

struct LayerNorm {
  Param gamma;  // 1 x d
  Param beta;   // 1 x d
  double eps = 1e-5;

  struct Cache {
    Mat xhat;     // n x d
    Vec inv_std;  // n
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index d)
      : gamma(name + ".gamma", 1, d), beta(name + ".beta", 1, d) {
    gamma.value.setOnes();
  }

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& grad_out);

  std::vector<Param*> params() { return {&gamma, &beta}; }
};

/// Stack of linear layers with a shared activation. When activate_last is
/// false the final layer is a plain linear map (regression/score heads).
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::relu;
  bool activate_last = true;

  struct Cache {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activation output of each layer
  };

  Mlp() = default;
  Mlp(const std::string& name, Index in, const std::vector<Index>& widths,
      Activation activation, bool act_last = true);

  Index out_dim() const { return layers.back().out_dim(); }

  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& grad_out);

  void init_xavier(Rng& rng);
  std::vector<Param*> params();
};

struct AttentionConfig {
  Index d_model = 128;
  Index heads = 4;
  bool use_residual_norm = true;
};

struct AttentionParams {
  Linear q, k, v, o;
  LayerNorm norm;

  AttentionParams() = default;
  AttentionParams(const std::string& name, const AttentionConfig& cfg);

  void init(Rng& rng);
  std::vector<Param*> params();
};

struct AttentionCache {
  Mat q_in, kv_in;
  Mat q_proj, k_proj, v_proj;
  std::vector<Mat> weights;  // per head, Lq x Lkv; rows sum to 1 over unmasked keys
  Mat heads_out;             // Lq x d_model, concatenated head outputs
  Mat pre_norm;
  LayerNorm::Cache ln;
};

/// Multi-head scaled dot-product attention. Masked key positions (mask[j]
/// false) receive exactly zero weight; throws if every position is masked.
/// With use_residual_norm the query input is added back and layer-normalized.
Mat cross_attention(const Mat& queries, const Mat& keys_values,
                    const std::vector<std::uint8_t>& mask,
                    const AttentionParams& params, const AttentionConfig& cfg,
                    AttentionCache* cache = nullptr);

struct AttentionGrads {
  Mat d_queries;
  Mat d_keys_values;
};

AttentionGrads cross_attention_backward(AttentionParams& params,
                                        const AttentionConfig& cfg,
                                        const AttentionCache& cache,
                                        const Mat& grad_out);

class Adam {
 public:
  Adam(std::vector<Param*> params, double lr);

  void step();
  void zero_grad();
  double lr() const { return lr_; }

 private:
  std::vector<Param*> params_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

}  // namespace ccbench::nn
