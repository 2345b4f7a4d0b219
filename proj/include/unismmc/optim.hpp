// Adam with decoupled weight decay, and a reduce-on-plateau schedule.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unismmc/autodiff.hpp"

namespace unismmc {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;
};

/// One in-place update of `param`:
///   param *= 1 - lr * weight_decay
///   param -= lr * m_hat / (sqrt(v_hat) + eps)
/// with bias-corrected moment estimates. Throws NumericError on a non-finite
/// gradient before touching anything.
inline void adam_step(std::span<double> param, std::span<const double> grad, AdamMoments& mom, const AdamHyper& hyper,
                      double lr, const std::string& name = "parameter") {
  if (grad.size() != param.size())
    throw DimensionError("adam_step: " + name + " has " + std::to_string(param.size()) + " values but " +
                         std::to_string(grad.size()) + " gradients");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericError("non-finite gradient in " + name + " at element " + std::to_string(i) + " (" +
                         std::to_string(grad[i]) + ")");
  if (mom.first.empty()) {
    mom.first.assign(param.size(), 0.0);
    mom.second.assign(param.size(), 0.0);
  }
  ++mom.step;
  const double t = static_cast<double>(mom.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const double shrink = 1.0 - lr * hyper.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    mom.first[i] = hyper.beta1 * mom.first[i] + (1.0 - hyper.beta1) * g;
    mom.second[i] = hyper.beta2 * mom.second[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = mom.first[i] / c1;
    const double v_hat = mom.second[i] / c2;
    if (hyper.weight_decay != 0.0) param[i] *= shrink;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

/// Adam over a fixed parameter list. Parameters that received no gradient
/// since their last zero_grad() are skipped entirely, weight decay included.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper), moments_(params_.size()) {}

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      if (!p.has_grad) continue;
      adam_step(p.value.data(), p.grad.data(), moments_[i], hyper_, lr, p.name);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  std::vector<Parameter*> params_;
  AdamHyper hyper_;
  std::vector<AdamMoments> moments_;
};

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without the monitored value dropping below its best.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, std::size_t patience) : lr_(lr), factor_(factor), patience_(patience) {
    if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
    if (patience == 0) throw ConfigError("plateau patience must be >= 1");
  }

  /// Feeds one epoch's monitored value (lower is better). Returns true when
  /// the rate was reduced.
  bool observe(double value) {
    if (!seen_ || value < best_) {
      best_ = value;
      seen_ = true;
      bad_epochs_ = 0;
      return false;
    }
    if (++bad_epochs_ < patience_) return false;
    lr_ *= factor_;
    bad_epochs_ = 0;
    return true;
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double best_ = 0.0;
  bool seen_ = false;
  std::size_t bad_epochs_ = 0;
};

}  // namespace unismmc
