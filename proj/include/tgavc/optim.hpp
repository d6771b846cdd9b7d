// Adam with global-norm gradient clipping.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "tgavc/autograd.hpp"
#include "tgavc/errors.hpp"

namespace tgavc::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Moments for one ParamStore.
template <typename S>
struct AdamState {
  std::int64_t steps = 0;
  std::vector<Matrix<S>> m, v;

  bool operator==(const AdamState&) const = default;
};

/// Named groups of moments, one per network driven by the same optimizer.
template <typename S>
using OptimizerState = std::map<std::string, AdamState<S>>;

template <typename S>
double global_norm(std::span<const GradList<S>* const> grads) {
  double total = 0.0;
  for (const GradList<S>* g : grads)
    for (const auto& m : *g)
      if (m.size()) total += m.template cast<double>().squaredNorm();
  return std::sqrt(total);
}

/// Scales every gradient so the joint norm is at most `max_norm`; returns the
/// norm before clipping.
template <typename S>
double clip_global_norm(std::span<GradList<S>* const> grads, double max_norm) {
  std::vector<const GradList<S>*> view(grads.begin(), grads.end());
  const double norm = global_norm<S>(view);
  if (max_norm > 0.0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / (norm + 1e-12));
    for (GradList<S>* g : grads)
      for (auto& m : *g)
        if (m.size()) m *= factor;
  }
  return norm;
}

/// One bias-corrected Adam update. Entries without a gradient are left
/// untouched, including their moments.
template <typename S>
void adam_step(ParamStore<S>& params, const GradList<S>& grads, AdamState<S>& state, const AdamConfig& cfg) {
  if (static_cast<int>(grads.size()) != params.size()) throw ContractError("adam_step: gradient list does not match parameters");
  if (state.m.empty()) {
    for (int i = 0; i < params.size(); ++i) {
      state.m.push_back(Matrix<S>::Zero(params.value(i).rows(), params.value(i).cols()));
      state.v.push_back(Matrix<S>::Zero(params.value(i).rows(), params.value(i).cols()));
    }
  }
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S step = static_cast<S>(cfg.lr / bc1);
  const S inv_bc2 = static_cast<S>(1.0 / bc2);
  const S eps = static_cast<S>(cfg.eps);
  for (int i = 0; i < params.size(); ++i) {
    const Matrix<S>& g = grads[i];
    if (g.size() == 0) continue;
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g.cwiseProduct(g);
    params.value(i).array() -= step * state.m[i].array() / ((state.v[i].array() * inv_bc2).sqrt() + eps);
  }
}

/// Accumulates `src` into `dst` entry by entry.
template <typename S>
void accumulate(GradList<S>& dst, const GradList<S>& src) {
  if (dst.empty()) dst.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].size() == 0) continue;
    if (dst[i].size() == 0) {
      dst[i] = src[i];
    } else {
      dst[i] += src[i];
    }
  }
}

template <typename S>
bool all_finite(const GradList<S>& g) {
  for (const auto& m : g)
    if (m.size() && !m.allFinite()) return false;
  return true;
}

}  // namespace tgavc::optim
