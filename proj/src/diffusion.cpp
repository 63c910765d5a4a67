#include "artikit/diffusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "artikit/rng.hpp"

namespace artikit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using Mat = Eigen::MatrixXd;

Mat normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

// ---- noise schedule --------------------------------------------------------

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > timesteps)
    throw ParameterError("timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(timesteps) + "]");
  return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > timesteps)
    throw ParameterError("timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(timesteps) + "]");
  return alphas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > timesteps)
    throw ParameterError("timestep " + std::to_string(t) + " outside [0, " +
                         std::to_string(timesteps) + "]");
  return alpha_bars[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_noise_schedule(int timesteps, double beta_start,
                                  double beta_end) {
  if (timesteps < 1)
    throw ParameterError("schedule needs at least one step, got " +
                         std::to_string(timesteps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ParameterError("beta bounds must satisfy 0 < start <= end < 1");
  NoiseSchedule s;
  s.timesteps = timesteps;
  s.betas.resize(static_cast<std::size_t>(timesteps));
  s.alphas.resize(static_cast<std::size_t>(timesteps));
  s.alpha_bars.resize(static_cast<std::size_t>(timesteps));
  double bar = 1.0;
  for (int t = 0; t < timesteps; ++t) {
    double frac = timesteps == 1 ? 0.0 : static_cast<double>(t) / (timesteps - 1);
    double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[static_cast<std::size_t>(t)] = beta;
    s.alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
    bar *= 1.0 - beta;
    s.alpha_bars[static_cast<std::size_t>(t)] = bar;
  }
  return s;
}

Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& x0, double t,
                              const Eigen::MatrixXd& eps,
                              const NoiseSchedule& sched, NoisingMode mode) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw ShapeError("noise tensor shape differs from the clean tensor");
  if (mode == NoisingMode::Interp) {
    if (!(t >= 0.0 && t <= 1.0))
      throw ParameterError("interpolation time must lie in [0, 1]");
    return t * x0 + (1.0 - t) * eps;
  }
  double rounded = std::round(t);
  if (std::abs(t - rounded) > 1e-9)
    throw ParameterError("ddpm timestep must be integral, got " +
                         std::to_string(t));
  int ti = static_cast<int>(rounded);
  double abar = sched.alpha_bar(ti);  // range-checks ti
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

// ---- small free helpers ------------------------------------------------------

void DenoiserConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw ParameterError("d_model must be a positive multiple of n_heads");
  if (n_layers < 0) throw ParameterError("negative layer count");
  if (latent_dim < 0) throw ParameterError("negative latent dim");
  if (n_experts < 1) throw ParameterError("need at least one expert");
  if (top_k < 1 || top_k > n_experts)
    throw ParameterError("top_k must lie in [1, n_experts]");
  if (expert_hidden < 1) throw ParameterError("expert hidden width must be positive");
  if (cond_dim < 0) throw ParameterError("negative condition dim");
  if (mask_hops < 0) throw ParameterError("negative mask hops");
}

void validate_spans(const std::vector<Span>& spans, int token_count) {
  if (spans.empty()) throw StructuralError("batch has no part spans");
  int at = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].count < 1)
      throw StructuralError("span " + std::to_string(i) + " is empty");
    if (spans[i].begin != at)
      throw StructuralError("span " + std::to_string(i) + " starts at " +
                            std::to_string(spans[i].begin) + ", expected " +
                            std::to_string(at) +
                            " (spans must tile the token sequence)");
    at += spans[i].count;
  }
  if (at != token_count)
    throw StructuralError("spans cover " + std::to_string(at) + " tokens, batch has " +
                          std::to_string(token_count));
}

std::vector<int> select_top_k(const Eigen::RowVectorXd& logits, int k) {
  const int n = static_cast<int>(logits.size());
  if (k < 1 || k > n)
    throw ParameterError("top-k count " + std::to_string(k) + " outside [1, " +
                         std::to_string(n) + "]");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits(a) != logits(b)) return logits(a) > logits(b);
    return a < b;  // tie toward the lower expert index
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

Eigen::RowVectorXd gate_weights_from_logits(const Eigen::RowVectorXd& logits,
                                            int k) {
  std::vector<int> sel = select_top_k(logits, k);
  double m = kNegInf;
  for (int i : sel) m = std::max(m, logits(i));
  double z = 0.0;
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(logits.size());
  for (int i : sel) {
    w(i) = std::exp(logits(i) - m);
    z += w(i);
  }
  for (int i : sel) w(i) /= z;
  return w;
}

Eigen::RowVectorXd timestep_embedding(double t) {
  Eigen::RowVectorXd e(kTimestepEmbedDim);
  for (int k = 0; k < kTimestepEmbedDim / 2; ++k) {
    double omega = std::pow(10000.0, -static_cast<double>(k) /
                                         (kTimestepEmbedDim / 2.0));
    e(2 * k) = std::sin(t * omega);
    e(2 * k + 1) = std::cos(t * omega);
  }
  return e;
}

// ---- parameter registry access ----------------------------------------------

struct DenoiserAccess {
  static std::map<std::string, Mat>& params(Denoiser& m) { return m.params_; }
  static const std::map<std::string, Mat>& params(const Denoiser& m) {
    return m.params_;
  }
};

namespace {

struct ParamVars {
  std::map<std::string, ad::Var> v;
  ad::Var at(const std::string& name) const {
    auto it = v.find(name);
    if (it == v.end()) throw LookupError("no parameter named " + name);
    return it->second;
  }
};

ParamVars register_params(ad::Tape& tape, const Denoiser& model,
                          bool requires_grad) {
  ParamVars pv;
  for (const auto& [name, value] : DenoiserAccess::params(model))
    pv.v.emplace(name, tape.input(value, requires_grad));
  return pv;
}

std::vector<int> token_parts(const std::vector<Span>& spans, int token_count) {
  validate_spans(spans, token_count);
  std::vector<int> part(static_cast<std::size_t>(token_count), -1);
  for (std::size_t p = 0; p < spans.size(); ++p)
    for (int i = 0; i < spans[p].count; ++i)
      part[static_cast<std::size_t>(spans[p].begin + i)] = static_cast<int>(p);
  return part;
}

Mat span_local_mask(const std::vector<int>& part) {
  const int n = static_cast<int>(part.size());
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      m(i, j) = part[static_cast<std::size_t>(i)] ==
                        part[static_cast<std::size_t>(j)]
                    ? 0.0
                    : kNegInf;
  return m;
}

Mat structure_token_mask(const BoolMatrix& part_mask,
                         const std::vector<int>& part) {
  const int n = static_cast<int>(part.size());
  if (part_mask.rows() != part_mask.cols())
    throw ShapeError("part mask must be square");
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int pi = part[static_cast<std::size_t>(i)];
      int pj = part[static_cast<std::size_t>(j)];
      if (pi >= part_mask.rows() || pj >= part_mask.cols())
        throw ShapeError("part mask smaller than the span count");
      m(i, j) = part_mask(pi, pj) ? 0.0 : kNegInf;
    }
  return m;
}

Mat expand_routing(const Mat& routing, const std::vector<int>& part) {
  Mat out(static_cast<Eigen::Index>(part.size()), routing.cols());
  for (std::size_t i = 0; i < part.size(); ++i) {
    if (part[i] >= routing.rows())
      throw ShapeError("routing rows do not cover every part");
    out.row(static_cast<Eigen::Index>(i)) = routing.row(part[i]);
  }
  return out;
}

// Multi-head attention with queries from `q_in` and keys/values from `kv_in`
// (both already normalized where the architecture calls for it). `mask` is an
// additive 0/-inf matrix over query x key positions. Returns the output
// projection; the residual add happens at the call site.
ad::Var attention_block(ad::Tape& t, const ParamVars& pv,
                        const std::string& prefix, ad::Var q_in, ad::Var kv_in,
                        const Mat* mask, int n_heads, int d_model,
                        std::vector<Mat>* weights_out = nullptr) {
  ad::Var q = t.add_rowvec(t.matmul(q_in, pv.at(prefix + "/Wq")),
                           pv.at(prefix + "/bq"));
  ad::Var k = t.add_rowvec(t.matmul(kv_in, pv.at(prefix + "/Wk")),
                           pv.at(prefix + "/bk"));
  ad::Var v = t.add_rowvec(t.matmul(kv_in, pv.at(prefix + "/Wv")),
                           pv.at(prefix + "/bv"));
  const int dh = d_model / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ad::Var mask_c;
  if (mask) mask_c = t.constant(*mask);
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    ad::Var qh = t.col_slice(q, h * dh, dh);
    ad::Var kh = t.col_slice(k, h * dh, dh);
    ad::Var vh = t.col_slice(v, h * dh, dh);
    ad::Var scores = t.scale(t.matmul(qh, kh, false, true), inv_scale);
    if (mask) scores = t.add(scores, mask_c);
    ad::Var attn = t.softmax_rows(scores);
    if (weights_out) weights_out->push_back(t.value(attn));
    heads.push_back(t.matmul(attn, vh));
  }
  ad::Var concat = n_heads == 1 ? heads[0] : t.hconcat(heads);
  return t.add_rowvec(t.matmul(concat, pv.at(prefix + "/Wo")),
                      pv.at(prefix + "/bo"));
}

ad::Var expert_ff(ad::Tape& t, const ParamVars& pv, const std::string& prefix,
                  ad::Var x) {
  ad::Var h = t.silu(t.add_rowvec(t.matmul(x, pv.at(prefix + "/W1")),
                                  pv.at(prefix + "/b1")));
  return t.add_rowvec(t.matmul(h, pv.at(prefix + "/W2")),
                      pv.at(prefix + "/b2"));
}

// Bare expert mixture: shared expert plus top-k gated experts. Gating logits
// come from [token, routing row]; the selection itself is made outside the
// tape (it is piecewise constant), the softmax over the selected logits stays
// differentiable. Unselected experts receive exactly zero weight and thus
// exactly zero gradient.
ad::Var moe_mix(ad::Tape& t, const ParamVars& pv, const std::string& prefix,
                ad::Var z, const Mat& routing_tok, int n_experts, int top_k,
                Mat* gate_out = nullptr) {
  ad::Var gate_in = t.hconcat({z, t.constant(routing_tok)});
  ad::Var logits = t.add_rowvec(t.matmul(gate_in, pv.at(prefix + "/gate/W")),
                                pv.at(prefix + "/gate/b"));
  const Mat& lv = t.value(logits);
  Mat sel(lv.rows(), lv.cols());
  sel.setConstant(kNegInf);
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    Eigen::RowVectorXd row = lv.row(r);
    for (int i : select_top_k(row, top_k)) sel(r, i) = 0.0;
  }
  ad::Var gates = t.softmax_rows(t.add(logits, t.constant(sel)));
  if (gate_out) *gate_out = t.value(gates);
  ad::Var out = expert_ff(t, pv, prefix + "/shared", z);
  for (int i = 0; i < n_experts; ++i) {
    ad::Var ei = expert_ff(t, pv, prefix + "/expert" + std::to_string(i), z);
    out = t.add(out, t.mul_col(ei, t.col_slice(gates, i, 1)));
  }
  return out;
}

struct BatchGeometry {
  std::vector<int> part_of_token;
  Mat local_mask;
  Mat global_mask;
  Mat routing_tok;
};

BatchGeometry batch_geometry(const std::vector<Span>& spans, int token_count,
                             const Mat& routing, const BoolMatrix& part_mask) {
  BatchGeometry g;
  g.part_of_token = token_parts(spans, token_count);
  if (part_mask.rows() != static_cast<Eigen::Index>(spans.size()))
    throw ShapeError("part mask is " + std::to_string(part_mask.rows()) +
                     " rows for " + std::to_string(spans.size()) + " parts");
  if (routing.rows() != static_cast<Eigen::Index>(spans.size()))
    throw ShapeError("routing has " + std::to_string(routing.rows()) +
                     " rows for " + std::to_string(spans.size()) + " parts");
  if (routing.cols() != kRoutingDim)
    throw ShapeError("routing width " + std::to_string(routing.cols()) +
                     ", expected " + std::to_string(kRoutingDim));
  g.local_mask = span_local_mask(g.part_of_token);
  g.global_mask = structure_token_mask(part_mask, g.part_of_token);
  g.routing_tok = expand_routing(routing, g.part_of_token);
  return g;
}

void check_cond(const DenoiserConfig& cfg, const Mat& cond) {
  if (cond.rows() == 0) return;
  if (cfg.cond_dim == 0)
    throw ShapeError("model has no conditioning pathway (cond_dim = 0)");
  if (cond.cols() != cfg.cond_dim)
    throw ShapeError("condition tokens are " + std::to_string(cond.cols()) +
                     " wide, model expects " + std::to_string(cfg.cond_dim));
}

ad::Var run_layer(ad::Tape& t, const ParamVars& pv, const DenoiserConfig& cfg,
                  int layer, ad::Var x, const BatchGeometry& g,
                  const Mat& cond) {
  const std::string L = "layer" + std::to_string(layer);
  ad::Var n_local = t.rmsnorm_rows(x, pv.at(L + "/local_attn/norm"));
  x = t.add(x, attention_block(t, pv, L + "/local_attn", n_local, n_local,
                               &g.local_mask, cfg.n_heads, cfg.d_model));
  ad::Var n_global = t.rmsnorm_rows(x, pv.at(L + "/global_attn/norm"));
  x = t.add(x, attention_block(t, pv, L + "/global_attn", n_global, n_global,
                               &g.global_mask, cfg.n_heads, cfg.d_model));
  if (cond.rows() > 0) {
    ad::Var n_cross = t.rmsnorm_rows(x, pv.at(L + "/cross/norm"));
    x = t.add(x, attention_block(t, pv, L + "/cross", n_cross,
                                 t.constant(cond), nullptr, cfg.n_heads,
                                 cfg.d_model));
  }
  ad::Var n_moe = t.rmsnorm_rows(x, pv.at(L + "/moe/norm"));
  x = t.add(x, moe_mix(t, pv, L + "/moe", n_moe, g.routing_tok, cfg.n_experts,
                       cfg.top_k));
  return x;
}

ad::Var forward_from_tokens(ad::Tape& t, const ParamVars& pv,
                            const DenoiserConfig& cfg, ad::Var x,
                            const TokenBatch& batch) {
  if (t.value(x).cols() != cfg.d_model)
    throw ShapeError("token width " + std::to_string(t.value(x).cols()) +
                     ", model width " + std::to_string(cfg.d_model));
  check_cond(cfg, batch.cond);
  BatchGeometry g =
      batch_geometry(batch.spans, static_cast<int>(t.value(x).rows()),
                     batch.routing, batch.part_mask);
  for (int layer = 0; layer < cfg.n_layers; ++layer)
    x = run_layer(t, pv, cfg, layer, x, g, batch.cond);
  return t.add_rowvec(t.matmul(x, pv.at("out_proj/W")), pv.at("out_proj/b"));
}

ad::Var project_attrs(ad::Tape& t, const ParamVars& pv,
                      const DenoiserConfig& cfg, const Mat& attrs, double ts) {
  if (attrs.cols() != cfg.attr_dim())
    throw ShapeError("attribute rows are " + std::to_string(attrs.cols()) +
                     " wide, model expects " + std::to_string(cfg.attr_dim()));
  ad::Var x = t.add_rowvec(t.matmul(t.constant(attrs), pv.at("in_proj/W")),
                           pv.at("in_proj/b"));
  Mat emb = timestep_embedding(ts);
  return t.add_rowvec(x, t.matmul(t.constant(emb), pv.at("temb/W")));
}

std::vector<Span> unit_spans(Eigen::Index n) {
  std::vector<Span> spans(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    spans[static_cast<std::size_t>(i)] = Span{static_cast<int>(i), 1};
  return spans;
}

}  // namespace

// ---- Denoiser ----------------------------------------------------------------

Denoiser::Denoiser(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  init_params();
}

void Denoiser::init_params() {
  Rng rng(config_.seed);
  const int d = config_.d_model;
  const int attr = config_.attr_dim();
  auto gaussian = [&rng](int rows, int cols, double scale) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
    return m;
  };

  // Orthonormal projection pair: out_proj starts as the transpose of
  // in_proj, so the model is the identity map at initialization (exactly so
  // when d_model >= attr width) and every residual branch starts at zero.
  {
    const int big = std::max(attr, d);
    const int small = std::min(attr, d);
    Mat g = gaussian(big, small, 1.0);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(big, small);
    if (d >= attr) {
      params_["in_proj/W"] = q.transpose();
      params_["out_proj/W"] = q;
    } else {
      params_["in_proj/W"] = q;
      params_["out_proj/W"] = q.transpose();
    }
  }
  params_["in_proj/b"] = Mat::Zero(1, d);
  params_["out_proj/b"] = Mat::Zero(1, attr);
  params_["temb/W"] = Mat::Zero(kTimestepEmbedDim, d);

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto init_attention = [&](const std::string& prefix, int kv_dim) {
    double kv_scale = 1.0 / std::sqrt(static_cast<double>(kv_dim));
    params_[prefix + "/Wq"] = gaussian(d, d, attn_scale);
    params_[prefix + "/Wk"] = gaussian(kv_dim, d, kv_scale);
    params_[prefix + "/Wv"] = gaussian(kv_dim, d, kv_scale);
    params_[prefix + "/Wo"] = Mat::Zero(d, d);
    params_[prefix + "/bq"] = Mat::Zero(1, d);
    params_[prefix + "/bk"] = Mat::Zero(1, d);
    params_[prefix + "/bv"] = Mat::Zero(1, d);
    params_[prefix + "/bo"] = Mat::Zero(1, d);
    params_[prefix + "/norm"] = Mat::Ones(1, d);
  };
  auto init_expert = [&](const std::string& prefix) {
    params_[prefix + "/W1"] = gaussian(d, config_.expert_hidden, attn_scale);
    params_[prefix + "/b1"] = Mat::Zero(1, config_.expert_hidden);
    params_[prefix + "/W2"] = Mat::Zero(config_.expert_hidden, d);
    params_[prefix + "/b2"] = Mat::Zero(1, d);
  };

  for (int layer = 0; layer < config_.n_layers; ++layer) {
    const std::string L = "layer" + std::to_string(layer);
    init_attention(L + "/local_attn", d);
    init_attention(L + "/global_attn", d);
    if (config_.cond_dim > 0) init_attention(L + "/cross", config_.cond_dim);
    params_[L + "/moe/norm"] = Mat::Ones(1, d);
    params_[L + "/moe/gate/W"] = gaussian(d + kRoutingDim, config_.n_experts, 0.02);
    params_[L + "/moe/gate/b"] = Mat::Zero(1, config_.n_experts);
    init_expert(L + "/moe/shared");
    for (int e = 0; e < config_.n_experts; ++e)
      init_expert(L + "/moe/expert" + std::to_string(e));
  }
}

std::vector<std::string> Denoiser::param_names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto& [name, value] : params_) names.push_back(name);
  return names;
}

const Eigen::MatrixXd& Denoiser::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named " + name);
  return it->second;
}

void Denoiser::set_param(const std::string& name,
                         const Eigen::MatrixXd& value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named " + name);
  if (it->second.rows() != value.rows() || it->second.cols() != value.cols())
    throw ShapeError("parameter " + name + " is " +
                     std::to_string(it->second.rows()) + "x" +
                     std::to_string(it->second.cols()) + ", got " +
                     std::to_string(value.rows()) + "x" +
                     std::to_string(value.cols()));
  it->second = value;
}

std::size_t Denoiser::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, value] : params_)
    n += static_cast<std::size_t>(value.size());
  return n;
}

TokenBatch Denoiser::make_batch(const Eigen::MatrixXd& attrs,
                                const Eigen::MatrixXd& routing,
                                const BoolMatrix& part_mask, double t,
                                const Eigen::MatrixXd& cond) const {
  check_cond(config_, cond);
  TokenBatch b;
  b.spans = unit_spans(attrs.rows());
  batch_geometry(b.spans, static_cast<int>(attrs.rows()), routing, part_mask);
  if (attrs.cols() != config_.attr_dim())
    throw ShapeError("attribute rows are " + std::to_string(attrs.cols()) +
                     " wide, model expects " +
                     std::to_string(config_.attr_dim()));
  Mat x = (attrs * param("in_proj/W")).rowwise() + param("in_proj/b").row(0);
  Mat trow = timestep_embedding(t) * param("temb/W");
  b.tokens = x.rowwise() + trow.row(0);
  b.routing = routing;
  b.part_mask = part_mask;
  b.timestep = t;
  b.cond = cond;
  return b;
}

Eigen::MatrixXd Denoiser::forward(const TokenBatch& batch) const {
  ad::Tape tape;
  ParamVars pv = register_params(tape, *this, false);
  ad::Var out = forward_from_tokens(tape, pv, config_,
                                    tape.constant(batch.tokens), batch);
  return tape.value(out);
}

Eigen::MatrixXd Denoiser::predict_noise(const Eigen::MatrixXd& attrs,
                                        const Eigen::MatrixXd& routing,
                                        const BoolMatrix& part_mask, double t,
                                        const Eigen::MatrixXd& cond) const {
  return forward(make_batch(attrs, routing, part_mask, t, cond));
}

TokenBatch Denoiser::local_global_attention(const TokenBatch& batch,
                                            int layer) const {
  if (layer < 0 || layer >= config_.n_layers)
    throw ParameterError("layer index out of range");
  BatchGeometry g = batch_geometry(batch.spans,
                                   static_cast<int>(batch.tokens.rows()),
                                   batch.routing, batch.part_mask);
  ad::Tape tape;
  ParamVars pv = register_params(tape, *this, false);
  const std::string L = "layer" + std::to_string(layer);
  ad::Var x = tape.constant(batch.tokens);
  ad::Var n_local = tape.rmsnorm_rows(x, pv.at(L + "/local_attn/norm"));
  x = tape.add(x, attention_block(tape, pv, L + "/local_attn", n_local,
                                  n_local, &g.local_mask, config_.n_heads,
                                  config_.d_model));
  ad::Var n_global = tape.rmsnorm_rows(x, pv.at(L + "/global_attn/norm"));
  x = tape.add(x, attention_block(tape, pv, L + "/global_attn", n_global,
                                  n_global, &g.global_mask, config_.n_heads,
                                  config_.d_model));
  TokenBatch out = batch;
  out.tokens = tape.value(x);
  return out;
}

TokenBatch Denoiser::cross_attention_inject(const TokenBatch& batch,
                                            const Eigen::MatrixXd& cond,
                                            int layer) const {
  if (layer < 0 || layer >= config_.n_layers)
    throw ParameterError("layer index out of range");
  check_cond(config_, cond);
  TokenBatch out = batch;
  if (cond.rows() == 0) return out;
  if (config_.cond_dim == 0)
    throw ShapeError("model has no conditioning pathway (cond_dim = 0)");
  ad::Tape tape;
  ParamVars pv = register_params(tape, *this, false);
  const std::string L = "layer" + std::to_string(layer);
  ad::Var x = tape.constant(batch.tokens);
  ad::Var n_cross = tape.rmsnorm_rows(x, pv.at(L + "/cross/norm"));
  x = tape.add(x, attention_block(tape, pv, L + "/cross", n_cross,
                                  tape.constant(cond), nullptr,
                                  config_.n_heads, config_.d_model));
  out.tokens = tape.value(x);
  out.cond = cond;
  return out;
}

TokenBatch Denoiser::moe_layer(const TokenBatch& batch,
                               const Eigen::MatrixXd& routing,
                               int layer) const {
  if (layer < 0 || layer >= config_.n_layers)
    throw ParameterError("layer index out of range");
  std::vector<int> part =
      token_parts(batch.spans, static_cast<int>(batch.tokens.rows()));
  Mat routing_tok = expand_routing(routing, part);
  ad::Tape tape;
  ParamVars pv = register_params(tape, *this, false);
  ad::Var z = tape.constant(batch.tokens);
  ad::Var out = moe_mix(tape, pv, "layer" + std::to_string(layer) + "/moe", z,
                        routing_tok, config_.n_experts, config_.top_k);
  TokenBatch result = batch;
  result.tokens = tape.value(out);
  return result;
}

std::vector<Eigen::MatrixXd> Denoiser::attention_weights(
    const TokenBatch& batch, AttentionPass pass, int layer) const {
  if (layer < 0 || layer >= config_.n_layers)
    throw ParameterError("layer index out of range");
  const std::string L = "layer" + std::to_string(layer);
  ad::Tape tape;
  ParamVars pv = register_params(tape, *this, false);
  ad::Var x = tape.constant(batch.tokens);
  std::vector<Mat> weights;
  if (pass == AttentionPass::Cross) {
    if (batch.cond.rows() == 0)
      throw ParameterError("batch carries no condition tokens");
    check_cond(config_, batch.cond);
    ad::Var n = tape.rmsnorm_rows(x, pv.at(L + "/cross/norm"));
    attention_block(tape, pv, L + "/cross", n, tape.constant(batch.cond),
                    nullptr, config_.n_heads, config_.d_model, &weights);
    return weights;
  }
  BatchGeometry g = batch_geometry(batch.spans,
                                   static_cast<int>(batch.tokens.rows()),
                                   batch.routing, batch.part_mask);
  const bool local = pass == AttentionPass::Local;
  const std::string prefix = L + (local ? "/local_attn" : "/global_attn");
  const Mat& mask = local ? g.local_mask : g.global_mask;
  ad::Var n = tape.rmsnorm_rows(x, pv.at(prefix + "/norm"));
  attention_block(tape, pv, prefix, n, n, &mask, config_.n_heads,
                  config_.d_model, &weights);
  return weights;
}

Eigen::MatrixXd Denoiser::moe_gate_weights(const TokenBatch& batch,
                                           const Eigen::MatrixXd& routing,
                                           int layer) const {
  if (layer < 0 || layer >= config_.n_layers)
    throw ParameterError("layer index out of range");
  std::vector<int> part =
      token_parts(batch.spans, static_cast<int>(batch.tokens.rows()));
  Mat routing_tok = expand_routing(routing, part);
  ad::Tape tape;
  ParamVars pv = register_params(tape, *this, false);
  ad::Var z = tape.constant(batch.tokens);
  Mat gates;
  moe_mix(tape, pv, "layer" + std::to_string(layer) + "/moe", z, routing_tok,
          config_.n_experts, config_.top_k, &gates);
  return gates;
}

// ---- training objective ----------------------------------------------------

LossResult diffusion_loss(const Denoiser& model,
                          const std::vector<LossItem>& items,
                          const NoiseSchedule& sched, std::uint64_t seed,
                          NoisingMode mode) {
  if (items.empty()) throw ParameterError("loss over an empty item list");
  const DenoiserConfig& cfg = model.config();
  ad::Tape tape;
  ParamVars pv = register_params(tape, model, true);
  ad::Var total;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const LossItem& item = items[i];
    Rng rng(mix_seed(seed, i));
    double t;
    if (mode == NoisingMode::Ddpm)
      t = static_cast<double>(
          1 + rng.uniform_index(static_cast<std::uint64_t>(sched.timesteps)));
    else
      t = rng.uniform();
    Mat eps = normal_matrix(rng, item.attrs0.rows(), item.attrs0.cols());
    Mat noisy = forward_noise(item.attrs0, t, eps, sched, mode);

    TokenBatch meta;
    meta.spans = unit_spans(noisy.rows());
    meta.routing = item.routing;
    meta.part_mask = item.part_mask;
    meta.timestep = t;
    meta.cond = item.cond;
    ad::Var x = project_attrs(tape, pv, cfg, noisy, t);
    ad::Var pred = forward_from_tokens(tape, pv, cfg, x, meta);
    ad::Var diff = tape.sub(pred, tape.constant(eps));
    ad::Var item_loss = tape.mean_all(tape.hadamard(diff, diff));
    total = i == 0 ? item_loss : tape.add(total, item_loss);
  }
  total = tape.scale(total, 1.0 / static_cast<double>(items.size()));
  tape.backward(total);

  LossResult result;
  result.loss = tape.value(total)(0, 0);
  for (const auto& [name, var] : pv.v) result.grads[name] = tape.grad(var);
  return result;
}

double grad_check(const Denoiser& model, const std::vector<LossItem>& items,
                  const NoiseSchedule& sched, std::uint64_t loss_seed,
                  int sample_count, double step, std::uint64_t sample_seed,
                  NoisingMode mode) {
  if (sample_count < 1) throw ParameterError("need at least one sample");
  if (!(step > 0.0)) throw ParameterError("step must be positive");
  LossResult base = diffusion_loss(model, items, sched, loss_seed, mode);

  struct Coord {
    std::string name;
    Eigen::Index r, c;
  };
  std::vector<Coord> coords;
  for (const std::string& name : model.param_names()) {
    const Mat& m = model.param(name);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        coords.push_back({name, r, c});
  }
  Rng rng(sample_seed);
  if (coords.size() > static_cast<std::size_t>(sample_count)) {
    for (int i = 0; i < sample_count; ++i) {
      std::size_t j =
          static_cast<std::size_t>(i) +
          static_cast<std::size_t>(rng.uniform_index(coords.size() - i));
      std::swap(coords[static_cast<std::size_t>(i)], coords[j]);
    }
    coords.resize(static_cast<std::size_t>(sample_count));
  }

  Denoiser probe = model;
  double max_rel = 0.0;
  for (const Coord& coord : coords) {
    Mat m = probe.param(coord.name);
    const double orig = m(coord.r, coord.c);
    m(coord.r, coord.c) = orig + step;
    probe.set_param(coord.name, m);
    double up = diffusion_loss(probe, items, sched, loss_seed, mode).loss;
    m(coord.r, coord.c) = orig - step;
    probe.set_param(coord.name, m);
    double down = diffusion_loss(probe, items, sched, loss_seed, mode).loss;
    m(coord.r, coord.c) = orig;
    probe.set_param(coord.name, m);
    double numeric = (up - down) / (2.0 * step);
    double analytic = base.grads.at(coord.name)(coord.r, coord.c);
    double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  }
  return max_rel;
}

// ---- toy training loop -------------------------------------------------------

double smoothed_loss(const std::vector<TraceRow>& trace, int window) {
  if (trace.empty()) throw ParameterError("empty loss trace");
  if (window < 1) throw ParameterError("window must be positive");
  std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(window),
                                        trace.size());
  double sum = 0.0;
  for (std::size_t i = trace.size() - n; i < trace.size(); ++i)
    sum += trace[i].loss;
  return sum / static_cast<double>(n);
}

void write_loss_trace(const std::vector<TraceRow>& trace,
                      const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write loss trace to " + path);
  f << "step,loss,learning_rate\n";
  char buf[128];
  for (const TraceRow& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", row.step, row.loss,
                  row.learning_rate);
    f << buf;
  }
  if (!f.good()) throw IoError("failed while writing loss trace to " + path);
}

TrainResult train_toy(const std::vector<ArticulatedObject>& dataset,
                      const std::vector<ConnectivityGraph>& graphs,
                      const DenoiserConfig& model_config,
                      const TrainConfig& train_config,
                      const NoiseSchedule& sched) {
  if (dataset.empty()) throw ParameterError("empty training dataset");
  if (train_config.steps < 0) throw ParameterError("negative step count");
  if (train_config.noise_draws < 1)
    throw ParameterError("noise_draws must be at least 1");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ValidationReport report = validate_object(dataset[i]);
    if (!report.ok())
      throw StructuralError("training object " + std::to_string(i) + ": " +
                            report.summary());
  }
  std::vector<ConnectivityGraph> gs = graphs;
  if (gs.empty())
    for (const ArticulatedObject& obj : dataset)
      gs.push_back(graph_from_object(obj));
  if (gs.size() != dataset.size())
    throw ParameterError("graph list does not parallel the dataset");

  struct Bundle {
    Mat attrs0;
    Mat routing;
    BoolMatrix mask;
  };
  std::vector<Bundle> bundles;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const ArticulatedObject& obj = dataset[i];
    Bundle b;
    const int n = static_cast<int>(obj.parts.size());
    b.attrs0.resize(n, model_config.attr_dim());
    for (int p = 0; p < n; ++p) {
      Eigen::VectorXd v = attributes_to_vector(obj.part_by_id(p));
      if (v.size() != model_config.attr_dim())
        throw ShapeError("object " + std::to_string(i) + " has " +
                         std::to_string(v.size() - kAttrBase) +
                         " latent channels, model expects " +
                         std::to_string(model_config.latent_dim));
      b.attrs0.row(p) = v.transpose();
    }
    b.routing = encode_routing_embeddings(gs[i], model_config.routing_seed);
    b.mask = adjacency_to_attention_mask(to_adjacency_matrix(gs[i]), true,
                                         model_config.mask_hops);
    bundles.push_back(std::move(b));
  }

  Denoiser model(model_config);
  std::vector<TraceRow> trace;
  const std::uint64_t n_obj = dataset.size();
  const std::uint64_t draws = static_cast<std::uint64_t>(train_config.noise_draws);
  for (int step = 1; step <= train_config.steps; ++step) {
    std::vector<LossItem> items;
    items.reserve(bundles.size() * draws);
    for (std::uint64_t rep = 0; rep < draws; ++rep)
    for (std::size_t oi = 0; oi < bundles.size(); ++oi) {
      const std::uint64_t slot =
          (static_cast<std::uint64_t>(step) * draws + rep) * n_obj + oi;
      LossItem item;
      item.attrs0 = bundles[oi].attrs0;
      item.routing = bundles[oi].routing;
      item.part_mask = bundles[oi].mask;
      const int n = static_cast<int>(item.attrs0.rows());
      if (train_config.resample_states) {
        std::uint64_t lane = (1ULL << 32) + slot;
        StateVector states =
            sample_states(dataset[oi], 1, mix_seed(train_config.seed, lane),
                          SampleStrategy::Uniform)[0];
        for (int p = 0; p < n; ++p) item.attrs0(p, kAttrState) = states[p];
      }
      if (train_config.shuffle_parts && n > 1) {
        std::uint64_t lane = (2ULL << 32) + slot;
        Rng perm_rng(mix_seed(train_config.seed, lane));
        std::vector<int> perm = perm_rng.permutation(n);
        Mat attrs(n, item.attrs0.cols());
        Mat routing(n, item.routing.cols());
        BoolMatrix mask(n, n);
        for (int p = 0; p < n; ++p) {
          attrs.row(perm[p]) = item.attrs0.row(p);
          routing.row(perm[p]) = item.routing.row(p);
        }
        for (int p = 0; p < n; ++p)
          for (int q = 0; q < n; ++q)
            mask(perm[p], perm[q]) = item.part_mask(p, q);
        item.attrs0 = std::move(attrs);
        item.routing = std::move(routing);
        item.part_mask = std::move(mask);
      }
      items.push_back(std::move(item));
    }

    LossResult res =
        diffusion_loss(model, items, sched,
                       mix_seed(train_config.seed, static_cast<std::uint64_t>(step)),
                       train_config.mode);
    if (!std::isfinite(res.loss) || res.loss > 1e3) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " with loss " << res.loss
          << "; recent trace:";
      std::size_t from = trace.size() > 5 ? trace.size() - 5 : 0;
      for (std::size_t i = from; i < trace.size(); ++i)
        msg << " (" << trace[i].step << ", " << trace[i].loss << ")";
      throw TrainingError(msg.str());
    }

    double sq = 0.0;
    for (const auto& [name, g] : res.grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    double scale = 1.0;
    if (train_config.clip_norm > 0.0 && norm > train_config.clip_norm)
      scale = train_config.clip_norm / norm;
    auto& params = DenoiserAccess::params(model);
    for (const auto& [name, g] : res.grads)
      params[name] -= train_config.learning_rate * scale * g;

    trace.push_back({step, res.loss, train_config.learning_rate});
  }

  if (!train_config.checkpoint_path.empty())
    save_checkpoint(model, train_config.checkpoint_path);
  return TrainResult{std::move(model), std::move(trace)};
}

// ---- sampling ----------------------------------------------------------------

ArticulatedObject sample_object(const Denoiser& model,
                                const ConnectivityGraph& g,
                                const NoiseSchedule& sched, std::uint64_t seed,
                                const Eigen::MatrixXd& cond,
                                const std::string& category) {
  ValidationReport report = validate_graph(g);
  if (!report.ok())
    throw StructuralError("structure graph: " + report.summary());
  const DenoiserConfig& cfg = model.config();

  ConnectivityGraph sorted = g;
  std::sort(sorted.nodes.begin(), sorted.nodes.end(),
            [](const GraphNode& a, const GraphNode& b) { return a.id < b.id; });
  std::map<int, int> dense;
  for (std::size_t i = 0; i < sorted.nodes.size(); ++i)
    dense[sorted.nodes[i].id] = static_cast<int>(i);
  const int n = static_cast<int>(sorted.nodes.size());

  Mat routing = encode_routing_embeddings(sorted, cfg.routing_seed);
  BoolMatrix mask = adjacency_to_attention_mask(to_adjacency_matrix(sorted),
                                                true, cfg.mask_hops);

  Rng rng(seed);
  Mat x = normal_matrix(rng, n, cfg.attr_dim());
  for (int t = sched.timesteps; t >= 1; --t) {
    Mat pred =
        model.predict_noise(x, routing, mask, static_cast<double>(t), cond);
    double beta = sched.beta(t);
    double abar = sched.alpha_bar(t);
    x = (x - (beta / std::sqrt(1.0 - abar)) * pred) / std::sqrt(sched.alpha(t));
    if (t > 1) {
      double abar_prev = sched.alpha_bar(t - 1);
      double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
      x += sigma * normal_matrix(rng, n, cfg.attr_dim());
    }
  }

  std::vector<int> parent(static_cast<std::size_t>(n), kRootParent);
  for (const auto& [from, to] : sorted.edges)
    parent[static_cast<std::size_t>(dense.at(to))] = dense.at(from);

  ArticulatedObject obj;
  obj.category = category;
  obj.root_id = dense.at(sorted.root_id);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd row = x.row(i);
    for (Eigen::Index k = 0; k < row.size(); ++k)
      if (!std::isfinite(row(k))) row(k) = 0.0;
    JointType type = i == obj.root_id ? JointType::Fixed
                                      : sorted.nodes[static_cast<std::size_t>(i)]
                                            .joint_type;
    PartNode part = vector_to_attributes(
        row, type, sorted.nodes[static_cast<std::size_t>(i)].label);
    part.part_id = i;
    part.parent_id = parent[static_cast<std::size_t>(i)];
    obj.parts.push_back(std::move(part));
  }
  ValidationReport check = validate_object(obj);
  if (!check.ok())
    throw StructuralError("sampled object failed validation: " +
                          check.summary());
  return obj;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[] = "ARTIKIT-CKPT-1";
constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

nlohmann::json config_to_json(const DenoiserConfig& c) {
  return nlohmann::json{{"d_model", c.d_model},
                        {"n_heads", c.n_heads},
                        {"n_layers", c.n_layers},
                        {"latent_dim", c.latent_dim},
                        {"n_experts", c.n_experts},
                        {"top_k", c.top_k},
                        {"expert_hidden", c.expert_hidden},
                        {"cond_dim", c.cond_dim},
                        {"mask_hops", c.mask_hops},
                        {"seed", c.seed},
                        {"routing_seed", c.routing_seed}};
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  try {
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.n_experts = j.at("n_experts").get<int>();
    c.top_k = j.at("top_k").get<int>();
    c.expert_hidden = j.at("expert_hidden").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.mask_hops = j.at("mask_hops").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.routing_seed = j.at("routing_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config block: ") + e.what());
  }
  return c;
}

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!f.good()) throw FormatError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const Denoiser& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint to " + path);
  f.write(kCheckpointMagic, static_cast<std::streamsize>(kMagicLen));
  std::string cfg = config_to_json(model.config()).dump();
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& params = DenoiserAccess::params(model);
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, m] : params) {
    write_pod<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(m.rows()));
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(m.cols()));
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) *
                                         static_cast<std::size_t>(m.size())));
  }
  if (!f.good()) throw IoError("failed while writing checkpoint to " + path);
}

Denoiser load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  char magic[kMagicLen];
  f.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!f.good() || std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0)
    throw FormatError(path + " is not a checkpoint (bad magic)");
  auto cfg_len = read_pod<std::uint32_t>(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (!f.good()) throw FormatError("checkpoint truncated");
  nlohmann::json cfg_json = nlohmann::json::parse(cfg_text, nullptr, false);
  if (cfg_json.is_discarded())
    throw FormatError("checkpoint config block is not valid JSON");
  Denoiser model(config_from_json(cfg_json));
  auto& params = DenoiserAccess::params(model);

  auto count = read_pod<std::uint32_t>(f);
  if (count != params.size())
    throw FormatError("checkpoint lists " + std::to_string(count) +
                      " parameters, model has " +
                      std::to_string(params.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = read_pod<std::uint16_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f.good()) throw FormatError("checkpoint truncated");
    auto rows = read_pod<std::uint32_t>(f);
    auto cols = read_pod<std::uint32_t>(f);
    auto it = params.find(name);
    if (it == params.end())
      throw FormatError("checkpoint parameter " + name +
                        " does not exist in the model");
    if (it->second.rows() != static_cast<Eigen::Index>(rows) ||
        it->second.cols() != static_cast<Eigen::Index>(cols))
      throw FormatError("checkpoint parameter " + name + " is " +
                        std::to_string(rows) + "x" + std::to_string(cols) +
                        ", model expects " + std::to_string(it->second.rows()) +
                        "x" + std::to_string(it->second.cols()));
    f.read(reinterpret_cast<char*>(it->second.data()),
           static_cast<std::streamsize>(sizeof(double) *
                                        static_cast<std::size_t>(
                                            it->second.size())));
    if (!f.good()) throw FormatError("checkpoint truncated");
  }
  f.peek();
  if (!f.eof()) throw FormatError("checkpoint has trailing bytes");
  return model;
}

}  // namespace artikit
