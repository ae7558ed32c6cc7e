#include "nerdem/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace nerdem {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Eigen::MatrixXd linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

void linear_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::MatrixXd& dy,
                     Eigen::MatrixXd& dx, Eigen::MatrixXd& dw, Eigen::MatrixXd& db) {
  dx = dy * w.transpose();
  dw += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
}

Eigen::MatrixXd ln_forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                           const Eigen::MatrixXd& b, Eigen::MatrixXd& xhat,
                           Eigen::VectorXd& inv_std) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  xhat.resize(n, d);
  inv_std.resize(n);
  Eigen::MatrixXd y(n, d);
  for (int r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
    y.row(r) = xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
  }
  return y;
}

Eigen::MatrixXd ln_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                            const Eigen::VectorXd& inv_std, const Eigen::MatrixXd& g,
                            Eigen::MatrixXd& dg, Eigen::MatrixXd& db) {
  const int n = static_cast<int>(dy.rows());
  const int d = static_cast<int>(dy.cols());
  dg.row(0) += dy.cwiseProduct(xhat).colwise().sum();
  db.row(0) += dy.colwise().sum();
  Eigen::MatrixXd dx(n, d);
  for (int r = 0; r < n; ++r) {
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(g.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

Eigen::MatrixXd dropout_mask(int rows, int cols, double rate, Rng& rng) {
  const double keep = 1.0 - rate;
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = uniform_real(rng) < rate ? 0.0 : 1.0 / keep;
  return m;
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return phi_cdf + x * phi_pdf;
}

bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.n_heads == b.n_heads &&
         a.n_layers == b.n_layers && a.max_len == b.max_len && a.dropout == b.dropout;
}

std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_tensors(EncoderParams& p) {
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> out;
  out.emplace_back("tok_emb", &p.tok_emb);
  out.emplace_back("pos_emb", &p.pos_emb);
  out.emplace_back("emb_ln_g", &p.emb_ln_g);
  out.emplace_back("emb_ln_b", &p.emb_ln_b);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    out.emplace_back(pre + "wq", &l.wq);
    out.emplace_back(pre + "bq", &l.bq);
    out.emplace_back(pre + "wk", &l.wk);
    out.emplace_back(pre + "bk", &l.bk);
    out.emplace_back(pre + "wv", &l.wv);
    out.emplace_back(pre + "bv", &l.bv);
    out.emplace_back(pre + "wo", &l.wo);
    out.emplace_back(pre + "bo", &l.bo);
    out.emplace_back(pre + "w1", &l.w1);
    out.emplace_back(pre + "b1", &l.b1);
    out.emplace_back(pre + "w2", &l.w2);
    out.emplace_back(pre + "b2", &l.b2);
    out.emplace_back(pre + "ln1_g", &l.ln1_g);
    out.emplace_back(pre + "ln1_b", &l.ln1_b);
    out.emplace_back(pre + "ln2_g", &l.ln2_g);
    out.emplace_back(pre + "ln2_b", &l.ln2_b);
  }
  return out;
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  if (config.vocab_size < 3) throw std::invalid_argument("vocab_size must cover the reserved ids");
  if (config.d_model <= 0 || config.n_heads <= 0 || config.d_model % config.n_heads != 0)
    throw std::invalid_argument("d_model must be a positive multiple of n_heads");
  if (config.dropout < 0.0 || config.dropout >= 1.0)
    throw std::invalid_argument("dropout must be in [0,1)");
  const int d = config.d_model;
  EncoderParams p;
  p.config = config;
  p.tok_emb.resize(config.vocab_size, d);
  p.pos_emb.resize(config.max_len, d);
  p.emb_ln_g.resize(1, d);
  p.emb_ln_b.resize(1, d);
  p.layers.resize(config.n_layers);
  for (auto& l : p.layers) {
    l.wq.resize(d, d);
    l.wk.resize(d, d);
    l.wv.resize(d, d);
    l.wo.resize(d, d);
    l.bq.resize(1, d);
    l.bk.resize(1, d);
    l.bv.resize(1, d);
    l.bo.resize(1, d);
    l.w1.resize(d, 4 * d);
    l.b1.resize(1, 4 * d);
    l.w2.resize(4 * d, d);
    l.b2.resize(1, d);
    l.ln1_g.resize(1, d);
    l.ln1_b.resize(1, d);
    l.ln2_g.resize(1, d);
    l.ln2_b.resize(1, d);
  }
  Rng rng(seed);
  for (auto& [name, mat] : named_tensors(p)) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    if (leaf.rfind("ln", 0) == 0 || leaf.rfind("emb_ln", 0) == 0) {
      mat->setConstant(leaf.back() == 'g' ? 1.0 : 0.0);
    } else if (leaf[0] == 'b') {
      mat->setZero();
    } else {
      for (Eigen::Index r = 0; r < mat->rows(); ++r)
        for (Eigen::Index c = 0; c < mat->cols(); ++c) (*mat)(r, c) = 0.02 * gaussian(rng);
    }
  }
  return p;
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
  EncoderParams p;
  p.config = other.config;
  p.layers.resize(other.layers.size());
  auto src = named_tensors(const_cast<EncoderParams&>(other));
  auto dst = named_tensors(p);
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i].second->setZero(src[i].second->rows(), src[i].second->cols());
  return p;
}

HiddenStates encoder_forward(const EncoderParams& params, const std::vector<int>& ids, int boundary,
                             RunMode mode, Rng* rng, ForwardCache* cache) {
  const auto& cfg = params.config;
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw std::invalid_argument("cannot encode an empty sequence");
  if (n > cfg.max_len)
    throw std::invalid_argument("sequence length " + std::to_string(n) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
  if (boundary < 1 || boundary > n)
    throw std::invalid_argument("boundary " + std::to_string(boundary) + " outside [1," +
                                std::to_string(n) + "]");
  const bool drop = mode == RunMode::Train && cfg.dropout > 0.0;
  if (drop && rng == nullptr) throw std::invalid_argument("train-mode dropout needs an rng");

  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd x(n, d);
  std::vector<int> safe_ids(ids);
  for (int i = 0; i < n; ++i) {
    if (safe_ids[i] < 0 || safe_ids[i] >= cfg.vocab_size) safe_ids[i] = kUnkId;
    x.row(i) = params.tok_emb.row(safe_ids[i]) + params.pos_emb.row(i);
  }

  Eigen::MatrixXd xhat;
  Eigen::VectorXd inv_std;
  x = ln_forward(x, params.emb_ln_g, params.emb_ln_b, xhat, inv_std);
  Eigen::MatrixXd emb_mask;
  if (drop) {
    emb_mask = dropout_mask(n, d, cfg.dropout, *rng);
    x = x.cwiseProduct(emb_mask);
  }
  if (cache) {
    cache->ids = safe_ids;
    cache->emb_xhat = xhat;
    cache->emb_inv_std = inv_std;
    cache->emb_drop_mask = emb_mask;
    cache->layers.assign(cfg.n_layers, LayerCache{});
  }

  for (int li = 0; li < cfg.n_layers; ++li) {
    const auto& l = params.layers[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->x = x;

    Eigen::MatrixXd q = linear(x, l.wq, l.bq);
    Eigen::MatrixXd k = linear(x, l.wk, l.bk);
    Eigen::MatrixXd v = linear(x, l.wv, l.bv);
    Eigen::MatrixXd concat(n, d);
    std::vector<Eigen::MatrixXd> probs(nh);
    for (int h = 0; h < nh; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      const auto vh = v.middleCols(h * dh, dh);
      Eigen::MatrixXd s = qh * kh.transpose() * scale;
      for (int r = 0; r < n; ++r) {
        const double m = s.row(r).maxCoeff();
        Eigen::RowVectorXd e = (s.row(r).array() - m).exp();
        s.row(r) = e / e.sum();
      }
      concat.middleCols(h * dh, dh) = s * vh;
      probs[h] = std::move(s);
    }
    Eigen::MatrixXd attn_out = linear(concat, l.wo, l.bo);
    Eigen::MatrixXd m1;
    if (drop) {
      m1 = dropout_mask(n, d, cfg.dropout, *rng);
      attn_out = attn_out.cwiseProduct(m1);
    }
    Eigen::MatrixXd r1 = x + attn_out;
    Eigen::MatrixXd ln1_xhat;
    Eigen::VectorXd ln1_inv;
    Eigen::MatrixXd n1 = ln_forward(r1, l.ln1_g, l.ln1_b, ln1_xhat, ln1_inv);

    Eigen::MatrixXd pre = linear(n1, l.w1, l.b1);
    Eigen::MatrixXd act = pre.unaryExpr([](double t) { return gelu(t); });
    Eigen::MatrixXd f2 = linear(act, l.w2, l.b2);
    Eigen::MatrixXd m2;
    if (drop) {
      m2 = dropout_mask(n, d, cfg.dropout, *rng);
      f2 = f2.cwiseProduct(m2);
    }
    Eigen::MatrixXd r2 = n1 + f2;
    Eigen::MatrixXd ln2_xhat;
    Eigen::VectorXd ln2_inv;
    Eigen::MatrixXd n2 = ln_forward(r2, l.ln2_g, l.ln2_b, ln2_xhat, ln2_inv);

    if (lc) {
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->attn_probs = std::move(probs);
      lc->attn_concat = std::move(concat);
      lc->attn_drop_mask = std::move(m1);
      lc->ln1_xhat = std::move(ln1_xhat);
      lc->ln1_inv_std = std::move(ln1_inv);
      lc->n1 = n1;
      lc->ffn_pre = std::move(pre);
      lc->ffn_act = std::move(act);
      lc->ffn_drop_mask = std::move(m2);
      lc->ln2_xhat = std::move(ln2_xhat);
      lc->ln2_inv_std = std::move(ln2_inv);
    }
    x = std::move(n2);
  }

  HiddenStates out;
  out.h = std::move(x);
  out.boundary = boundary;
  return out;
}

void encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                      const Eigen::MatrixXd& d_hidden, EncoderParams& grads) {
  const auto& cfg = params.config;
  const int n = static_cast<int>(cache.ids.size());
  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (d_hidden.rows() != n || d_hidden.cols() != d)
    throw std::invalid_argument("upstream gradient shape mismatch");

  Eigen::MatrixXd dx = d_hidden;
  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const auto& l = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& gl = grads.layers[li];

    Eigen::MatrixXd dr2 = ln_backward(dx, lc.ln2_xhat, lc.ln2_inv_std, l.ln2_g, gl.ln2_g, gl.ln2_b);
    Eigen::MatrixXd df2 = dr2;
    if (lc.ffn_drop_mask.size() > 0) df2 = df2.cwiseProduct(lc.ffn_drop_mask);
    Eigen::MatrixXd dact;
    linear_backward(lc.ffn_act, l.w2, df2, dact, gl.w2, gl.b2);
    Eigen::MatrixXd dpre =
        dact.cwiseProduct(lc.ffn_pre.unaryExpr([](double t) { return gelu_grad(t); }));
    Eigen::MatrixXd dn1_ffn;
    linear_backward(lc.n1, l.w1, dpre, dn1_ffn, gl.w1, gl.b1);
    Eigen::MatrixXd dn1 = dr2 + dn1_ffn;

    Eigen::MatrixXd dr1 = ln_backward(dn1, lc.ln1_xhat, lc.ln1_inv_std, l.ln1_g, gl.ln1_g, gl.ln1_b);
    Eigen::MatrixXd dattn = dr1;
    if (lc.attn_drop_mask.size() > 0) dattn = dattn.cwiseProduct(lc.attn_drop_mask);
    Eigen::MatrixXd dconcat;
    linear_backward(lc.attn_concat, l.wo, dattn, dconcat, gl.wo, gl.bo);

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(n, d);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(n, d);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(n, d);
    for (int h = 0; h < nh; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      const auto& p = lc.attn_probs[h];
      const auto dah = dconcat.middleCols(h * dh, dh);
      Eigen::MatrixXd dp = dah * vh.transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dah;
      Eigen::MatrixXd ds(n, n);
      for (int r = 0; r < n; ++r) {
        const double dot = dp.row(r).dot(p.row(r));
        ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh) = ds * kh * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
    }
    Eigen::MatrixXd dx_q, dx_k, dx_v;
    linear_backward(lc.x, l.wq, dq, dx_q, gl.wq, gl.bq);
    linear_backward(lc.x, l.wk, dk, dx_k, gl.wk, gl.bk);
    linear_backward(lc.x, l.wv, dv, dx_v, gl.wv, gl.bv);
    dx = dr1 + dx_q + dx_k + dx_v;
  }

  if (cache.emb_drop_mask.size() > 0) dx = dx.cwiseProduct(cache.emb_drop_mask);
  Eigen::MatrixXd de =
      ln_backward(dx, cache.emb_xhat, cache.emb_inv_std, params.emb_ln_g, grads.emb_ln_g, grads.emb_ln_b);
  for (int i = 0; i < n; ++i) {
    grads.tok_emb.row(cache.ids[i]) += de.row(i);
    grads.pos_emb.row(i) += de.row(i);
  }
}

}  // namespace nerdem
