#pragma once

// Independent reference computations used by the tests: direct evaluation
// from the recursive definitions, finite differences, a second SVD.

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "llrkit/netzoo.hpp"

namespace oracle {

using llrkit::netzoo::Activation;
using llrkit::netzoo::Family;
using llrkit::netzoo::NetworkSpec;
using llrkit::netzoo::ParamPoint;
using llrkit::netzoo::Role;

inline double act(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::Gelu: return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)));
  }
  return 0.0;
}

// Straight from the definitions, through the structured accessors only.
inline double forward(const ParamPoint& p, const std::vector<double>& x) {
  const NetworkSpec& s = p.spec();
  if (s.family == Family::FC) {
    std::vector<double> h = x;
    const int L = s.depth();
    for (int l = 1; l < L; ++l) {
      const int m = s.hidden_widths[static_cast<std::size_t>(l - 1)];
      std::vector<double> next(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        double z = s.hidden_bias ? p.at(l, Role::Bias, {i}) : 0.0;
        for (std::size_t j = 0; j < h.size(); ++j) z += p.at(l, Role::Weight, {i, static_cast<int>(j)}) * h[j];
        next[static_cast<std::size_t>(i)] = act(s.activation, z);
      }
      h = std::move(next);
    }
    double y = s.output_bias ? p.at(L, Role::Bias, {0}) : 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) y += p.at(L, Role::OutputWeight, {static_cast<int>(i)}) * h[i];
    return y;
  }

  const int d = s.input_dim, k = s.kernel_size, P = d + 1 - k;
  const bool ws = s.family == Family::CNN_WS;
  double y = s.output_bias ? p.at(2, Role::Bias, {0}) : 0.0;
  for (int l = 0; l < s.kernel_count; ++l) {
    if (s.conv_dims == 1) {
      for (int i = 0; i < P; ++i) {
        double z = s.hidden_bias ? (ws ? p.at(1, Role::Bias, {l}) : p.at(1, Role::Bias, {l, i})) : 0.0;
        for (int a = 0; a < k; ++a)
          z += (ws ? p.at(1, Role::Kernel, {l, a}) : p.at(1, Role::Kernel, {l, i, a})) * x[static_cast<std::size_t>(i + a)];
        y += p.at(2, Role::OutputWeight, {l, i}) * act(s.activation, z);
      }
    } else {
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) {
          double z = s.hidden_bias ? (ws ? p.at(1, Role::Bias, {l}) : p.at(1, Role::Bias, {l, i, j})) : 0.0;
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
              z += (ws ? p.at(1, Role::Kernel, {l, a, b}) : p.at(1, Role::Kernel, {l, i, j, a, b})) *
                   x[static_cast<std::size_t>((i + a) * d + j + b)];
          y += p.at(2, Role::OutputWeight, {l, i, j}) * act(s.activation, z);
        }
    }
  }
  return y;
}

// Central differences of the reference forward pass.
inline std::vector<double> fd_gradient(const ParamPoint& p, const std::vector<double>& x, double h = 1e-5) {
  std::vector<double> g(p.size());
  ParamPoint q = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double v = p.values()[k];
    q.values()[k] = v + h;
    const double up = forward(q, x);
    q.values()[k] = v - h;
    const double down = forward(q, x);
    q.values()[k] = v;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

// Rank via one-sided Jacobi SVD with a fixed relative threshold.
inline int jacobi_rank(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double tau = 100.0 * sv(0) * static_cast<double>(std::max(m.rows(), m.cols())) * 2.220446049250313e-16;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) r += sv(i) > tau;
  return r;
}

template <class Rng>
NetworkSpec random_spec(Rng& rng, Family family, int max_depth = 3) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const auto activation = static_cast<Activation>(pick(0, 2));
  const bool hb = pick(0, 1) == 1, ob = pick(0, 1) == 1;
  if (family == Family::FC) {
    std::vector<int> widths(static_cast<std::size_t>(pick(1, max_depth - 1)));
    for (auto& w : widths) w = pick(1, 4);
    return NetworkSpec::fc(pick(1, 5), widths, hb, ob, activation);
  }
  const int dims = pick(1, 2);
  const int s = pick(1, 3);
  const int d = s + pick(0, dims == 1 ? 4 : 2);
  return NetworkSpec::cnn(family, d, s, pick(1, 3), dims, hb, ob, activation);
}

template <class Rng>
ParamPoint random_point(Rng& rng, const NetworkSpec& spec, double scale = 1.0) {
  ParamPoint p(spec);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : p.values()) v = n(rng);
  return p;
}

template <class Rng>
std::vector<double> random_input(Rng& rng, const NetworkSpec& spec) {
  std::vector<double> x(static_cast<std::size_t>(spec.input_size()));
  std::normal_distribution<double> n;
  for (double& v : x) v = n(rng);
  return x;
}

// Two-layer tanh no-bias points with the degenerate structures the rank
// formulas distinguish: sign-mirrored and duplicated units, zero input
// weights with live outputs (FC only), dead outputs, and null units.
template <class Rng>
ParamPoint structured_point(Rng& rng, Family family, int max_m = 6, int max_d = 6) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::normal_distribution<double> normal;
  auto fill = [&](std::span<double> v) {
    for (double& x : v) x = normal(rng);
  };
  // Kernel entries: random sign, magnitude in [0.25, 1.5].
  std::uniform_real_distribution<double> magnitude(0.25, 1.5);
  auto fill_kernel = [&](std::span<double> v) {
    for (double& x : v) x = (pick(0, 1) ? 1.0 : -1.0) * magnitude(rng);
  };
  const int m = pick(1, max_m);

  if (family == Family::FC) {
    const int d = pick(1, max_d);
    // At most 2 units on a scalar input.
    ParamPoint p(NetworkSpec::fc(d, {d == 1 ? std::min(m, 2) : m}));
    const int width = p.spec().hidden_widths[0];
    auto w = [&](int i) { return p.block(1, Role::Weight).subspan(static_cast<std::size_t>(i * d), static_cast<std::size_t>(d)); };
    auto a = p.block(2, Role::OutputWeight);
    for (int i = 0; i < width; ++i) {
      const int kind = i == 0 ? pick(0, 1) * 3 : pick(0, 5);
      const int j = pick(0, std::max(0, i - 1));
      const double sign = pick(0, 1) ? 1.0 : -1.0;
      switch (kind) {
        case 0: fill(w(i)); a[i] = normal(rng); break;  // generic
        case 1:                                         // mirrored or duplicated
          for (int t = 0; t < d; ++t) w(i)[t] = sign * w(j)[t];
          a[i] = pick(0, 1) ? normal(rng) : sign * a[j];
          break;
        case 2: a[i] = normal(rng); break;  // zero input weights
        case 3: fill(w(i)); break;          // dead output
        case 4: break;                      // null
        default: fill(w(i)); a[i] = normal(rng); break;
      }
    }
    return p;
  }

  const int dims = pick(1, 2);
  const int s = pick(1, 3);
  const int d = std::min(max_d, s + pick(0, dims == 1 ? 4 : 2));
  // At most 2 kernels for 1x1 patches, 3 for unshared 2-d.
  const int mm = s == 1 ? std::min(m, 2) : family == Family::CNN_NS && dims == 2 ? std::min(m, 3) : m;
  ParamPoint p(NetworkSpec::cnn(family, std::max(d, s), s, mm, dims));
  const auto q = static_cast<std::size_t>(p.spec().patch_size());
  const auto P = static_cast<std::size_t>(p.spec().positions());
  auto out = [&](int l) { return p.block(2, Role::OutputWeight).subspan(static_cast<std::size_t>(l) * P, P); };

  if (family == Family::CNN_WS) {
    auto K = [&](int l) { return p.block(1, Role::Kernel).subspan(static_cast<std::size_t>(l) * q, q); };
    for (int l = 0; l < mm; ++l) {
      const int kind = l == 0 ? 0 : pick(0, 4);
      const int j = pick(0, std::max(0, l - 1));
      const double sign = pick(0, 1) ? 1.0 : -1.0;
      switch (kind) {
        case 1:  // mirrored or duplicated kernel, dependent or fresh outputs
          for (std::size_t t = 0; t < q; ++t) K(l)[t] = sign * K(j)[t];
          if (std::all_of(K(l).begin(), K(l).end(), [](double v) { return v == 0.0; })) fill_kernel(K(l));
          if (pick(0, 1)) {
            const double c = normal(rng);
            for (std::size_t t = 0; t < P; ++t) out(l)[t] = c * out(j)[t];
          } else {
            fill(out(l));
          }
          break;
        case 2: fill_kernel(K(l)); break;  // dead outputs
        case 3: break;              // null kernel
        default: fill_kernel(K(l)); fill(out(l)); break;
      }
    }
    return p;
  }

  // CNN-ns: each (kernel, position) neuron independently.
  const auto neurons = static_cast<std::size_t>(mm) * P;
  auto K = [&](std::size_t n) { return p.block(1, Role::Kernel).subspan(n * q, q); };
  auto a = p.block(2, Role::OutputWeight);
  for (std::size_t n = 0; n < neurons; ++n) {
    const int kind = n == 0 ? 0 : pick(0, 5);
    const auto j = static_cast<std::size_t>(pick(0, static_cast<int>(n) - 1));
    const double sign = pick(0, 1) ? 1.0 : -1.0;
    switch (kind) {
      case 1:  // same kernel values as another neuron, possibly mirrored
        for (std::size_t t = 0; t < q; ++t) K(n)[t] = sign * K(j)[t];
        if (std::all_of(K(n).begin(), K(n).end(), [](double v) { return v == 0.0; })) fill_kernel(K(n));
        a[n] = normal(rng);
        break;
      case 2: fill_kernel(K(n)); break;  // dead output
      case 3: break;              // null
      default: fill_kernel(K(n)); a[n] = normal(rng); break;
    }
  }
  return p;
}

}  // namespace oracle
