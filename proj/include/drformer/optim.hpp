#pragma once

#include <cstddef>
#include <vector>

#include "drformer/layers.hpp"

namespace drformer {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;  // throws ConfigError
};

// Adam with bias correction and a constant step size. Moment buffers follow
// the order of the parameter list handed to the constructor.
class Adam {
 public:
  Adam(ParamList params, const AdamConfig& config);

  void zero_grad();
  // Applies one update from the accumulated gradients.
  void step();

  std::size_t steps_taken() const { return t_; }
  const ParamList& params() const { return params_; }
  const AdamConfig& config() const { return config_; }

  // Checkpoint access.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  ParamList params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace drformer
