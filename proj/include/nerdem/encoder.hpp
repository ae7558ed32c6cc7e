#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "nerdem/common.hpp"

namespace nerdem {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSepId = 2;

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int max_len = 256;
  double dropout = 0.1;
};

bool operator==(const EncoderConfig& a, const EncoderConfig& b);

// Biases and layer-norm parameters are stored as 1 x d matrices so every
// parameter is uniformly an Eigen::MatrixXd (see named_tensors).
struct LayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;      // d x d
  Eigen::MatrixXd bq, bk, bv, bo;      // 1 x d
  Eigen::MatrixXd w1, b1;              // d x 4d, 1 x 4d
  Eigen::MatrixXd w2, b2;              // 4d x d, 1 x d
  Eigen::MatrixXd ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x d
};

struct EncoderParams {
  EncoderConfig config;
  Eigen::MatrixXd tok_emb;  // vocab x d
  Eigen::MatrixXd pos_emb;  // max_len x d
  Eigen::MatrixXd emb_ln_g, emb_ln_b;  // 1 x d
  std::vector<LayerParams> layers;

  // Weights ~ N(0, 0.02^2), biases 0, layer-norm gain 1 / shift 0.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);
  static EncoderParams zeros_like(const EncoderParams& other);
};

// Stable traversal order; used by the optimizer, persistence, and init.
std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_tensors(EncoderParams& p);

enum class RunMode { Train, Eval };

struct HiddenStates {
  Eigen::MatrixXd h;  // length x d_model
  int boundary = 0;   // rows [0, boundary) belong to x, the rest to the demonstration
};

struct LayerCache {
  Eigen::MatrixXd x, q, k, v, attn_concat;
  std::vector<Eigen::MatrixXd> attn_probs;  // one n x n matrix per head
  Eigen::MatrixXd attn_drop_mask;
  Eigen::MatrixXd ln1_xhat;
  Eigen::VectorXd ln1_inv_std;
  Eigen::MatrixXd n1, ffn_pre, ffn_act;
  Eigen::MatrixXd ffn_drop_mask;
  Eigen::MatrixXd ln2_xhat;
  Eigen::VectorXd ln2_inv_std;
};

struct ForwardCache {
  std::vector<int> ids;
  Eigen::MatrixXd emb_xhat;
  Eigen::VectorXd emb_inv_std;
  Eigen::MatrixXd emb_drop_mask;
  std::vector<LayerCache> layers;
};

// Full bidirectional self-attention over the whole sequence. Out-of-range ids
// fall back to the UNK id. Train mode applies inverted dropout (rng required
// when the rate is positive); eval mode is deterministic. cache may be null
// when no backward pass will follow.
HiddenStates encoder_forward(const EncoderParams& params, const std::vector<int>& ids, int boundary,
                             RunMode mode, Rng* rng, ForwardCache* cache);

// Accumulates into grads (caller zeroes between batches).
void encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                      const Eigen::MatrixXd& d_hidden, EncoderParams& grads);

double gelu(double x);
double gelu_grad(double x);

}  // namespace nerdem
