// Training objectives. Every loss is built from tape operations, so the same
// code yields values and gradients; the matrix overloads are for evaluation.
//
// Masks are either empty (no mask), frames x 1 (per frame) or the full input
// shape; 1 marks a valid element. Reductions are means over valid elements.

#pragma once

#include <cmath>
#include <string>

#include "tgavc/autograd.hpp"
#include "tgavc/errors.hpp"

namespace tgavc::objectives {

using ag::Tape;
using ag::Var;

inline constexpr double kPosteriorFloor = 1e-8;
inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kGe2eMinScale = 1e-4;

struct LossReport {
  double recon = 0.0;
  double content = 0.0;
  double adv = 0.0;
  double total_l1 = 0.0;
  double total_l2 = 0.0;
  double ge2e = 0.0;  // style pretraining only
  double lambda = kDefaultLambda;
  double lambda_autovc = 1.0;
};

/// total_l1 = recon; total_l2 = content + lambda * adv.
inline LossReport tgavc_report(double recon, double content, double adv, double lambda) {
  LossReport r;
  r.recon = recon;
  r.content = content;
  r.adv = adv;
  r.lambda = lambda;
  r.total_l1 = recon;
  r.total_l2 = content + lambda * adv;
  return r;
}

/// total_l1 = recon + lambda_autovc * content.
inline LossReport autovc_report(double recon, double content, double lambda_autovc) {
  LossReport r;
  r.recon = recon;
  r.content = content;
  r.lambda_autovc = lambda_autovc;
  r.total_l1 = recon + lambda_autovc * content;
  return r;
}

namespace detail {

template <typename S>
Matrix<S> expand_mask(const Matrix<S>& mask, Eigen::Index rows, Eigen::Index cols) {
  if (mask.rows() != rows || (mask.cols() != 1 && mask.cols() != cols))
    throw ContractError("loss mask shape does not match input");
  if (mask.cols() == cols) return mask;
  return mask * Matrix<S>::Ones(1, cols);
}

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

/// Mean of `elementwise` over valid elements.
template <typename S>
Var<S> masked_mean(Var<S> elementwise, const Matrix<S>& mask) {
  if (mask.size() == 0) return mean(elementwise);
  Matrix<S> m = expand_mask(mask, elementwise.rows(), elementwise.cols());
  const S count = m.sum();
  if (!(count > S(0))) throw ContractError("loss mask selects no elements");
  return scale(sum(mul(elementwise, elementwise.tape->constant(std::move(m)))), S(1) / count);
}

}  // namespace detail

/// Mean squared error.
template <typename S>
Var<S> recon_loss(Var<S> pred, Var<S> target, const Matrix<S>& mask = {}) {
  detail::require_same_shape(pred, target, "recon_loss");
  return detail::masked_mean(square(sub(pred, target)), mask);
}

/// Mean absolute error.
template <typename S>
Var<S> content_match_loss(Var<S> desired, Var<S> estimated, const Matrix<S>& mask = {}) {
  detail::require_same_shape(desired, estimated, "content_match_loss");
  return detail::masked_mean(abs(sub(desired, estimated)), mask);
}

/// log p_y from a 1 x K log posterior, floored at log(kPosteriorFloor).
template <typename S>
Var<S> adversarial_term(Var<S> log_posterior, int speaker) {
  if (log_posterior.rows() != 1) throw ContractError("adversarial_term: expected a single posterior row");
  if (speaker < 0 || speaker >= log_posterior.cols())
    throw ParameterError("adversarial_term: speaker id " + std::to_string(speaker) + " outside [0, " +
                         std::to_string(log_posterior.cols()) + ")");
  return clamp_min(pick(log_posterior, 0, speaker), static_cast<S>(std::log(kPosteriorFloor)));
}

/// Value form on a probability vector.
inline double adversarial_term(const Eigen::VectorXd& posterior, int speaker) {
  if (speaker < 0 || speaker >= posterior.size())
    throw ParameterError("adversarial_term: speaker id " + std::to_string(speaker) + " outside [0, " +
                         std::to_string(posterior.size()) + ")");
  return std::log(std::max(posterior[speaker], kPosteriorFloor));
}

/// Softmax GE2E loss. `embeddings` holds N*M rows in speaker-major order; w and
/// b are 1x1. The own-speaker centroid excludes the utterance itself.
template <typename S>
Var<S> ge2e_loss(Var<S> embeddings, int num_speakers, int per_speaker, Var<S> w, Var<S> b) {
  const int n = num_speakers, m = per_speaker;
  if (n < 2 || m < 2) throw ParameterError("ge2e_loss: needs at least 2 speakers with 2 utterances each");
  if (embeddings.rows() != static_cast<Eigen::Index>(n) * m)
    throw ContractError("ge2e_loss: expected " + std::to_string(n * m) + " embeddings, got " + std::to_string(embeddings.rows()));
  Tape<S>& t = *embeddings.tape;
  const Eigen::Index rows = embeddings.rows();
  Matrix<S> average = Matrix<S>::Zero(n, rows);
  Matrix<S> own = Matrix<S>::Zero(rows, n);
  std::vector<int> speaker_of(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int k = static_cast<int>(r / m);
    average(k, r) = S(1) / S(m);
    own(r, k) = S(1);
    speaker_of[r] = k;
  }
  Var<S> e = l2_normalize_rows(embeddings);
  Var<S> centroids = matmul(t.constant(average), e);
  Var<S> sim_all = matmul_nt(e, l2_normalize_rows(centroids));
  Var<S> exclusive = scale(sub(scale(gather_rows(centroids, speaker_of), S(m)), e), S(1) / S(m - 1));
  Var<S> sim_own = row_dot(e, l2_normalize_rows(exclusive));
  Var<S> own_mask = t.constant(own);
  Var<S> other_mask = t.constant(Matrix<S>::Ones(rows, n) - own);
  Var<S> sim = add(mul(sim_all, other_mask), mul(matmul(sim_own, t.constant(Matrix<S>::Ones(1, n))), own_mask));
  Var<S> logits = add_scalar(mul_scalar(sim, w), b);
  return scale(sum(mul(log_softmax_rows(logits), own_mask)), S(-1) / S(rows));
}

template <typename S>
struct AutoVcTerms {
  Var<S> recon, content, total;
};

/// Reconstruction plus lambda_autovc times the L1 distance between the codes of
/// the input and the codes of its reconstruction.
template <typename S>
AutoVcTerms<S> autovc_losses(Var<S> mel, Var<S> mel_pred, Var<S> codes, Var<S> codes_of_pred, double lambda_autovc,
                             const Matrix<S>& mask = {}) {
  if (lambda_autovc < 0) throw ParameterError("autovc_losses: negative weight");
  detail::require_same_shape(codes, codes_of_pred, "autovc_losses");
  Var<S> recon = recon_loss(mel_pred, mel, mask);
  Var<S> content = content_match_loss(codes, codes_of_pred);
  Var<S> total = lambda_autovc == 0.0 ? recon : add(recon, scale(content, static_cast<S>(lambda_autovc)));
  return {recon, content, total};
}

// --- value forms -------------------------------------------------------------------

template <typename S>
double recon_loss(const Matrix<S>& pred, const Matrix<S>& target, const Matrix<S>& mask = {}) {
  Tape<S> t;
  return recon_loss(t.constant(pred), t.constant(target), mask).item();
}

template <typename S>
double content_match_loss(const Matrix<S>& desired, const Matrix<S>& estimated, const Matrix<S>& mask = {}) {
  Tape<S> t;
  return content_match_loss(t.constant(desired), t.constant(estimated), mask).item();
}

template <typename S>
double ge2e_loss(const Matrix<S>& embeddings, int num_speakers, int per_speaker, S w, S b) {
  Tape<S> t;
  return ge2e_loss(t.constant(embeddings), num_speakers, per_speaker, t.constant(Matrix<S>::Constant(1, 1, w)),
                   t.constant(Matrix<S>::Constant(1, 1, b)))
      .item();
}

}  // namespace tgavc::objectives
