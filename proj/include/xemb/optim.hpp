// AdamW with decoupled weight decay and bias-corrected moments.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xemb/tensor.hpp"

namespace xemb {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// One update on raw arrays; `step` is the 1-based step count after this
// update. Decay is applied to the parameter directly, never folded into the
// gradient.
void adamw_update(std::vector<double>& param, const std::vector<double>& grad,
                  std::vector<double>& m, std::vector<double>& v, int64_t step,
                  const AdamWConfig& cfg);

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  // Each parameter is registered exactly once; duplicate names throw.
  void register_param(const std::string& name, const Tensor& t);

  // Applies one update from the accumulated grads, then clears them.
  // Parameters backprop never reached see a zero gradient.
  void step();

  int64_t step_count() const { return step_; }
  AdamWConfig& config() { return cfg_; }
  const AdamWConfig& config() const { return cfg_; }
  int64_t param_count() const;
  const std::map<std::string, Tensor>& params() const { return params_; }

  // Moment/step state for checkpointing.
  struct SlotState {
    std::vector<double> m, v;
  };
  const std::map<std::string, SlotState>& slots() const { return slots_; }
  std::map<std::string, SlotState>& mutable_slots() { return slots_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  AdamWConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, Tensor> params_;
  std::map<std::string, SlotState> slots_;
};

}  // namespace xemb
