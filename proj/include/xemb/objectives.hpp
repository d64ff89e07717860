// Training objectives: flow-matching reconstruction, CLUB mutual-information
// upper bound with its variational model, dual InfoNCE consistency, and the
// weighted total.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xemb/optim.hpp"
#include "xemb/rng.hpp"
#include "xemb/tensor.hpp"

namespace xemb::obj {

struct FlowSample {
  Tensor x0, x1, x_t, v_t;
  double t = 0.0;
};

// Linear interpolation path: x_t = t*x1 + (1-t)*x0, v_t = x1 - x0. The
// endpoints reproduce x0/x1 bitwise.
FlowSample flow_interpolate(const Tensor& x0, const Tensor& x1, double t);

// Mean squared error over all elements.
Tensor loss_fm(const Tensor& u_pred, const Tensor& v_t);

struct VariationalConfig {
  int in_dim = 64;
  int out_dim = 64;
  int hidden = 128;
  double logvar_scale = 5.0;  // tanh output is scaled into [-s, s]
  double lr = 1e-4;
  uint64_t seed = 99;
};

// q(z_emb | z_task): diagonal Gaussian whose mean and log-variance come from
// a three-linear-layer MLP with GELU activations and a Tanh-bounded
// log-variance head. Carries its own AdamW state.
class VariationalModel {
 public:
  static VariationalModel init(const VariationalConfig& cfg);

  // (mu, logvar) for a batch [b, in_dim]; with frozen=true the parameters
  // enter the graph as constants so no gradient reaches them.
  std::pair<Tensor, Tensor> forward(const Tensor& z_task, bool frozen) const;

  // Mean over the batch of log q(z_emb_i | z_task_i).
  Tensor mean_log_likelihood(const Tensor& z_task, const Tensor& z_emb,
                             bool frozen) const;

  // One maximum-likelihood AdamW step on detached embeddings; returns the
  // negative log-likelihood before the step.
  double fit_step(const Tensor& z_task, const Tensor& z_emb);

  const VariationalConfig& config() const { return cfg_; }
  AdamW& optimizer() { return opt_; }
  std::vector<std::pair<std::string, Tensor>> named_tensors();

 private:
  VariationalConfig cfg_;
  Tensor w1_, b1_, w2_, b2_, mu_w_, mu_b_, lv_w_, lv_b_;
  AdamW opt_;
};

// Eq.-style CLUB objective: mean log-likelihood of naturally paired samples
// minus the same under a shift-by-one in-batch derangement. q is frozen
// inside this call; gradients flow only into the embeddings.
Tensor club_loss(const Tensor& z_task, const Tensor& z_emb,
                 const VariationalModel& q);

// Fits a fresh variational model on the given embedding pairs and returns
// the CLUB mutual-information estimate in nats.
double club_mi_estimate(const std::vector<double>& z_task,
                        const std::vector<double>& z_emb, int count, int dim_t,
                        int dim_e, int fit_steps = 800, double fit_lr = 3e-3,
                        uint64_t seed = 5);

// InfoNCE with cosine similarity and no temperature by default (an optional
// one is exposed for experimentation).
Tensor info_nce(const Tensor& anchor, const Tensor& positive,
                const std::vector<Tensor>& negatives,
                double temperature = 1.0);

struct LossWeights {
  double dis = 1.0;
  double task = 0.5;
  double emb = 0.5;
};

struct LossParts {
  Tensor fm;
  std::optional<Tensor> disentangle;
  std::optional<Tensor> task_contrast;
  std::optional<Tensor> emb_contrast;
};

// fm + dis*L_dis + task*L_task + emb*L_emb over the parts present; throws
// naming the first non-finite part.
Tensor total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace xemb::obj
