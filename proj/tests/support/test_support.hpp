#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cactus/network.hpp"
#include "cactus/rng.hpp"

namespace cactus::testing {

/// Random chain of 1-3 Dense layers with ReLUs, at most ~max_params parameters.
inline Architecture random_mlp(Rng& rng, std::size_t in, std::size_t classes, std::size_t max_params = 500) {
  for (;;) {
    Architecture arch{{in}, {}};
    const std::size_t depth = 1 + uniform_index(rng, 3);
    std::size_t width = in;
    std::size_t params = 0;
    for (std::size_t d = 0; d < depth; ++d) {
      const bool last = d + 1 == depth;
      const std::size_t out = last ? classes : 2 + uniform_index(rng, 10);
      arch.layers.push_back(DenseSpec{width, out, uniform01(rng) < 0.8});
      params += width * out + out;
      if (!last) arch.layers.push_back(ReluSpec{});
      width = out;
    }
    if (params <= max_params) return arch;
  }
}

/// Network with parameters drawn from N(0, scale^2), so activations stay away
/// from the initialiser's structure.
inline Network random_network(const Architecture& arch, std::uint64_t seed, double scale = 0.7) {
  Network net = Network::build(arch, seed);
  Rng rng(derive_seed(seed, 99));
  std::vector<double> flat(net.num_params());
  for (double& v : flat) v = scale * standard_normal(rng);
  net.set_flat_params(flat);
  return net;
}

inline Tensor random_inputs(Rng& rng, const Shape& sample_shape, std::size_t batch, double lo = 0.0, double hi = 1.0) {
  Shape shape{batch};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor x(shape);
  for (double& v : x.data()) v = uniform(rng, lo, hi);
  return x;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t batch, std::size_t classes) {
  std::vector<int> y(batch);
  for (int& v : y) v = static_cast<int>(uniform_index(rng, classes));
  return y;
}

/// Central differences of f at theta, one coordinate at a time.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> theta, double h = 1e-5) {
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f(theta);
    theta[i] = keep - h;
    const double down = f(theta);
    theta[i] = keep;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

struct GradientCheck {
  double worst = 0.0;  ///< largest |a - n| / max(|a|, |n|) over coordinates above the floor
  std::size_t worst_index = 0;
  bool ok = true;
};

/// Coordinates pass when |a - n| <= abs_floor or the relative error is below rel_tol.
inline GradientCheck compare_gradients(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                       double rel_tol = 1e-4, double abs_floor = 1e-7) {
  GradientCheck c;
  if (analytic.size() != numeric.size()) {
    c.ok = false;
    return c;
  }
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    if (diff <= abs_floor) continue;
    const double rel = diff / std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    if (rel > c.worst) {
      c.worst = rel;
      c.worst_index = i;
    }
    if (rel >= rel_tol) c.ok = false;
  }
  return c;
}

/// Smallest distance of any pre-activation to 0 over a batch: finite
/// differences are only meaningful away from ReLU kinks.
inline double relu_kink_distance(const Network& net, const Tensor& x) {
  double best = INFINITY;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!std::holds_alternative<ReluSpec>(net.layers()[i])) continue;
    Architecture arch{net.input_shape(), {net.layers().begin(), net.layers().begin() + static_cast<std::ptrdiff_t>(i)}};
    Network part = Network::build(arch, 0);
    std::vector<double> flat = net.flat_params();
    flat.resize(part.num_params());
    part.set_flat_params(flat);
    for (double v : forward(NetworkView(part), x).data()) best = std::min(best, std::abs(v));
  }
  return best;
}

}  // namespace cactus::testing
