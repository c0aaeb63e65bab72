// Central finite-difference check of every MLM parameter group, shared by the
// unit and acceptance suites.
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "vocmix/mlm.hpp"

namespace gradcheck {

struct Report {
  // tensor name -> worst relative error across its coordinates
  std::map<std::string, double> per_tensor;
  double max_rel = 0.0;
  std::string worst_tensor;
};

// rel(g, g_fd) = |g - g_fd| / max(1e-6, |g| + |g_fd|); the floor keeps
// roundoff noise on near-zero coordinates from dominating.
inline Report check_all(vocmix::MlmState& state, const vocmix::MaskedBatch& batch,
                        double eps = 1e-5) {
  auto analytic = vocmix::mlm_loss(state, batch);
  if (!analytic.has_value()) {
    throw std::runtime_error("gradient check batch has no labeled positions");
  }

  std::map<std::string, std::pair<double*, Eigen::Index>> grad_views;
  analytic->grads.for_each_tensor(
      [&](const std::string& name, double* data, Eigen::Index rows, Eigen::Index cols) {
        grad_views[name] = {data, rows * cols};
      });

  Report report;
  state.params.for_each_tensor([&](const std::string& name, double* data, Eigen::Index rows,
                                   Eigen::Index cols) {
    const auto [grad_data, size] = grad_views.at(name);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = vocmix::mlm_loss(state, batch)->loss;
      data[i] = saved - eps;
      const double down = vocmix::mlm_loss(state, batch)->loss;
      data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double g = grad_data[i];
      const double rel = std::abs(g - fd) / std::max(1e-6, std::abs(g) + std::abs(fd));
      worst = std::max(worst, rel);
    }
    report.per_tensor[name] = worst;
    if (worst > report.max_rel) {
      report.max_rel = worst;
      report.worst_tensor = name;
    }
  });
  return report;
}

}  // namespace gradcheck
