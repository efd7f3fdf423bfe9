#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "iirc/hierarchy.hpp"
#include "iirc/nn.hpp"

namespace testutil {

/// `supers` superclasses with `subs` children each, plus `solo` standalone classes.
inline iirc::Hierarchy grid_hierarchy(std::size_t supers, std::size_t subs, std::size_t solo) {
  std::vector<iirc::HierarchyRecord> records;
  for (std::size_t s = 0; s < supers; ++s) {
    for (std::size_t c = 0; c < subs; ++c) {
      records.push_back({"s" + std::to_string(s) + "c" + std::to_string(c), "super" + std::to_string(s)});
    }
  }
  for (std::size_t k = 0; k < solo; ++k) records.push_back({"solo" + std::to_string(k), std::nullopt});
  return iirc::Hierarchy::build(records);
}

/// Largest relative error between `analytic` and central differences of `loss`
/// over every coordinate of the flattened parameters.
inline double max_gradient_error(iirc::nn::ModelParams p, const std::vector<double>& analytic,
                                 const std::function<double(const iirc::nn::ModelParams&)>& loss,
                                 double step = 1e-6) {
  auto flat = p.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + step;
    p.unflatten(flat);
    const double up = loss(p);
    flat[i] = keep - step;
    p.unflatten(flat);
    const double down = loss(p);
    flat[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  p.unflatten(flat);
  return worst;
}

}  // namespace testutil
