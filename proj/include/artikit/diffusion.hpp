#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "artikit/autodiff.hpp"
#include "artikit/core.hpp"
#include "artikit/error.hpp"
#include "artikit/graph.hpp"

namespace artikit {

// ---- noise schedule --------------------------------------------------------

struct NoiseSchedule {
  int timesteps = 0;
  std::vector<double> betas;       // stored 0-based, indexed 1-based below
  std::vector<double> alphas;
  std::vector<double> alpha_bars;  // running products of alphas

  double beta(int t) const;       // t in [1, T]
  double alpha(int t) const;      // t in [1, T]
  double alpha_bar(int t) const;  // t in [0, T]; alpha_bar(0) == 1
};

// Linear beta schedule. Requires 0 < beta_start <= beta_end < 1 and T >= 1.
NoiseSchedule make_noise_schedule(int timesteps = 1000,
                                  double beta_start = 1e-4,
                                  double beta_end = 0.02);

enum class NoisingMode { Ddpm, Interp };

// ddpm: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t an integer in [1, T].
// interp: x_t = t x0 + (1 - t) eps, t in [0, 1]; exact at both endpoints.
Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& x0, double t,
                              const Eigen::MatrixXd& eps,
                              const NoiseSchedule& sched,
                              NoisingMode mode = NoisingMode::Ddpm);

// ---- denoiser --------------------------------------------------------------

inline constexpr int kTimestepEmbedDim = 16;

struct DenoiserConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 4;
  int latent_dim = 0;  // shape-latent channels appended to the 20 base attrs
  int n_experts = 4;
  int top_k = 2;
  int expert_hidden = 128;
  int cond_dim = 32;  // 0 disables the conditioning pathway entirely
  int mask_hops = 1;  // structure-mask reach for the global pass
  std::uint64_t seed = 0;
  std::uint64_t routing_seed = 0;

  int attr_dim() const { return kAttrBase + latent_dim; }
  void validate() const;  // parameter error on bad shape arithmetic
};

struct Span {
  int begin = 0;
  int count = 0;
};

// Input bundle for one object: projected tokens plus the metadata every
// block needs. Spans must partition [0, tokens.rows()) in order; with the
// standard one-token-per-part projection span i is [i, i+1).
struct TokenBatch {
  Eigen::MatrixXd tokens;         // T x d_model
  std::vector<Span> spans;        // one per part
  Eigen::MatrixXd routing;        // P x kRoutingDim
  BoolMatrix part_mask;    // P x P, global-pass visibility
  double timestep = 1.0;
  Eigen::MatrixXd cond;           // C x cond_dim; 0x0 when unconditioned
};

// Throws a structural error unless spans cover [0, token_count) exactly once
// each, in order, with positive lengths.
void validate_spans(const std::vector<Span>& spans, int token_count);

// Top-k expert indices by logit value, ties broken toward the lower index.
// Result is sorted ascending by index.
std::vector<int> select_top_k(const Eigen::RowVectorXd& logits, int k);

// Full gating row: softmax over the top-k logits, zeros elsewhere.
Eigen::RowVectorXd gate_weights_from_logits(const Eigen::RowVectorXd& logits,
                                            int k);

// 16-dim sinusoidal position code: pairs (sin, cos) of t * 10000^(-k/8).
Eigen::RowVectorXd timestep_embedding(double t);

enum class AttentionPass { Local, Global, Cross };

class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }

  // Named-parameter registry; names are stable across runs and versions.
  std::vector<std::string> param_names() const;
  const Eigen::MatrixXd& param(const std::string& name) const;
  void set_param(const std::string& name, const Eigen::MatrixXd& value);
  std::size_t param_count() const;  // total scalar count

  // Projects attribute rows to tokens (one per part), adds the timestep
  // embedding, and fills in spans. routing rows and mask follow part order.
  TokenBatch make_batch(const Eigen::MatrixXd& attrs,
                        const Eigen::MatrixXd& routing,
                        const BoolMatrix& part_mask, double t,
                        const Eigen::MatrixXd& cond = Eigen::MatrixXd()) const;

  // Full forward pass over an already projected batch: per layer a local
  // then global attention block, conditioning injection when cond rows are
  // present, and the expert mixture; the head maps back to attribute width.
  Eigen::MatrixXd forward(const TokenBatch& batch) const;

  // make_batch + forward in one call.
  Eigen::MatrixXd predict_noise(const Eigen::MatrixXd& attrs,
                                const Eigen::MatrixXd& routing,
                                const BoolMatrix& part_mask, double t,
                                const Eigen::MatrixXd& cond =
                                    Eigen::MatrixXd()) const;

  // Single blocks of one layer, exposed for inspection. The attention pair
  // and the conditioning injection include their residual connections, as in
  // the pipeline. The expert mixture is the bare combination
  // SE(Z) + sum_i G_i E_i(Z) applied to the batch tokens as given.
  TokenBatch local_global_attention(const TokenBatch& batch,
                                    int layer = 0) const;
  TokenBatch cross_attention_inject(const TokenBatch& batch,
                                    const Eigen::MatrixXd& cond,
                                    int layer = 0) const;
  TokenBatch moe_layer(const TokenBatch& batch,
                       const Eigen::MatrixXd& routing, int layer = 0) const;

  // Post-softmax row-stochastic attention matrices, one per head.
  std::vector<Eigen::MatrixXd> attention_weights(const TokenBatch& batch,
                                                 AttentionPass pass,
                                                 int layer = 0) const;

  // Per-token gating weights over all experts (zeros outside the top-k).
  Eigen::MatrixXd moe_gate_weights(const TokenBatch& batch,
                                   const Eigen::MatrixXd& routing,
                                   int layer = 0) const;

 private:
  friend struct DenoiserAccess;

  DenoiserConfig config_;
  std::map<std::string, Eigen::MatrixXd> params_;

  void init_params();
};

// ---- training objective ----------------------------------------------------

// One training example: clean attribute rows plus the structural metadata.
struct LossItem {
  Eigen::MatrixXd attrs0;       // P x attr_dim
  Eigen::MatrixXd routing;      // P x kRoutingDim
  BoolMatrix part_mask;  // P x P
  Eigen::MatrixXd cond;         // optional condition tokens
};

struct LossResult {
  double loss = 0.0;
  std::map<std::string, Eigen::MatrixXd> grads;
};

// Draws (t, eps) per item from mix_seed(seed, item index), noises, runs the
// denoiser, and returns mean squared error per coordinate averaged over
// items, with reverse-mode gradients for every parameter. Parameters that
// cannot influence the loss get exactly-zero gradients.
LossResult diffusion_loss(const Denoiser& model,
                          const std::vector<LossItem>& items,
                          const NoiseSchedule& sched, std::uint64_t seed,
                          NoisingMode mode = NoisingMode::Ddpm);

// Central-difference check of diffusion_loss gradients on sample_count
// randomly chosen parameters (all of them when fewer exist). Returns the
// maximum relative error with denominators floored at 1e-8.
double grad_check(const Denoiser& model, const std::vector<LossItem>& items,
                  const NoiseSchedule& sched, std::uint64_t loss_seed,
                  int sample_count = 200, double step = 1e-5,
                  std::uint64_t sample_seed = 0,
                  NoisingMode mode = NoisingMode::Ddpm);

// ---- toy training loop -------------------------------------------------------

struct TrainConfig {
  int steps = 2000;
  double learning_rate = 1e-3;
  double clip_norm = 10.0;  // global gradient norm ceiling, <= 0 disables
  std::uint64_t seed = 0;
  NoisingMode mode = NoisingMode::Ddpm;
  bool shuffle_parts = true;     // re-permute part order every step
  bool resample_states = true;   // redraw joint states every step
  int noise_draws = 4;           // loss items per object per step
  std::string checkpoint_path;   // written after training when nonempty
};

struct TraceRow {
  int step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  Denoiser model;
  std::vector<TraceRow> trace;
};

// Full-batch SGD over the dataset. graphs must parallel the dataset or be
// empty, in which case each object's own tree is used. Divergence (loss
// above 1e3 or non-finite) raises a training error carrying recent trace
// rows in its message.
TrainResult train_toy(const std::vector<ArticulatedObject>& dataset,
                      const std::vector<ConnectivityGraph>& graphs,
                      const DenoiserConfig& model_config,
                      const TrainConfig& train_config,
                      const NoiseSchedule& sched);

// Trailing mean of the last `window` trace losses.
double smoothed_loss(const std::vector<TraceRow>& trace, int window = 100);

// step,loss,learning-rate CSV with full float precision.
void write_loss_trace(const std::vector<TraceRow>& trace,
                      const std::string& path);

// ---- sampling ----------------------------------------------------------------

// Ancestral reverse-process sampling from pure noise down to clean
// attributes, decoded against the graph's joint types and labels. The graph
// must validate; node ids are remapped densely in sorted order and the root
// becomes a fixed joint. The returned object passes validate_object.
ArticulatedObject sample_object(const Denoiser& model,
                                const ConnectivityGraph& g,
                                const NoiseSchedule& sched, std::uint64_t seed,
                                const Eigen::MatrixXd& cond = Eigen::MatrixXd(),
                                const std::string& category = "generated");

// ---- checkpoints -------------------------------------------------------------

// Binary registry dump, versioned header "ARTIKIT-CKPT-1", little-endian
// 64-bit values column-major per parameter.
void save_checkpoint(const Denoiser& model, const std::string& path);
Denoiser load_checkpoint(const std::string& path);

}  // namespace artikit
