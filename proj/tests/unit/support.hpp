#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tgavc/autograd.hpp"
#include "tgavc/models.hpp"
#include "tgavc/random.hpp"

namespace testing {

using namespace tgavc;

inline models::ModelConfig tiny_config(int speakers = 3) {
  models::ModelConfig c = models::default_config(speakers);
  c.d_model = 8;
  c.d_style = 4;
  c.n_heads = 2;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.d_ff = 8;
  c.style_hidden = 8;
  c.classifier_hidden = 8;
  c.autovc_dim = 4;
  c.autovc_factor = 4;
  return c;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline std::vector<int> random_durations(Rng& rng, int n, int lo, int hi) {
  std::vector<int> d(n);
  for (auto& x : d) x = rng.uniform_int(lo, hi);
  return d;
}

/// Central-difference check of the gradient of `loss` with respect to `store`.
/// `analytic` is the tape gradient of the same loss. At most `per_tensor`
/// entries of each tensor are probed. Returns ||analytic - numeric|| / max norm.
inline double gradient_error(ParamStore<double>& store, const GradList<double>& analytic,
                             const std::function<double()>& loss, int per_tensor = 12, double h = 1e-5,
                             std::uint64_t seed = 1) {
  Rng rng(seed);
  double diff = 0, na = 0, nn = 0;
  for (int p = 0; p < store.size(); ++p) {
    Eigen::MatrixXd& v = store.value(p);
    const Eigen::Index n = v.size();
    for (int k = 0; k < std::min<Eigen::Index>(per_tensor, n); ++k) {
      const Eigen::Index i = n <= per_tensor ? k : static_cast<Eigen::Index>(rng.next() % static_cast<std::uint64_t>(n));
      const double keep = v.data()[i];
      v.data()[i] = keep + h;
      const double up = loss();
      v.data()[i] = keep - h;
      const double down = loss();
      v.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[p].size() ? analytic[p].data()[i] : 0.0;
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / scale;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tgavc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
