#pragma once

// Central finite differences of the mean batch loss, used to check the
// analytic backward pass.

#include <algorithm>
#include <cmath>
#include <vector>

#include "streetreview/model.hpp"

namespace oracle {

inline double batch_loss(const streetreview::model::ModelParams& p,
                         const std::vector<streetreview::model::Example>& batch) {
  double s = 0;
  for (const auto& e : batch) {
    const auto out = streetreview::model::forward(p, e.seq);
    s += streetreview::model::loss_mse(out, e.target, e.mask);
  }
  return s / static_cast<double>(batch.size());
}

inline double central_difference(streetreview::model::ModelParams p, std::size_t index,
                                 const std::vector<streetreview::model::Example>& batch,
                                 double h = 1e-5) {
  const double x = p.values()[index];
  p.values()[index] = x + h;
  const double up = batch_loss(p, batch);
  p.values()[index] = x - h;
  const double down = batch_loss(p, batch);
  return (up - down) / (2 * h);
}

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
// turning round-off into huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
