#pragma once

#include <array>
#include <functional>
#include <vector>

#include "enaet/rng.hpp"
#include "enaet/tensor.hpp"
#include "enaet/transforms.hpp"

// The training objective: mixmatch semi-supervised loss, KL consistency
// between original and transformed predictions, and the five transformation
// regression losses with their warm-up schedule.
//
//   total = l_x + lambda_u * l_u + kl_lambda * l_kl + sum_k lambda_k * l_aet_k
//
// Gradient-producing variants take logits plus their softmax and add into a
// dlogits buffer, so several terms can share one backward pass.

namespace enaet {

inline constexpr double kProbFloor = 1e-8;

struct LambdaSchedule {
  std::array<double, kNumFamilies> warm = {10.0, 7.5, 5.0, 2.0, 0.5};  // epochs of linear ramp
  std::array<double, kNumFamilies> max = {1.0, 0.75, 0.5, 0.2, 0.05};
  double kl_lambda = 1.0;
};

// lambda_k(epoch) = max_k * min(epoch / warm_k, 1); warm_k = 0 skips the ramp.
std::array<double, kNumFamilies> lambda_at(const LambdaSchedule& schedule, double epoch);

// Optional ramp for the unlabeled-loss weight; warm = 0 returns lambda_u as is.
double lambda_u_at(double lambda_u, double warm, double epoch);

struct LossTerms {
  double l_x = 0;  // labeled cross-entropy over X'
  double l_u = 0;  // unlabeled squared-L2 over U'
  double l_mix = 0;
  double l_kl = 0;
  std::array<double, kNumFamilies> l_aet = {};
  double l_total = 0;
};

// Fills terms.l_total from the other fields and returns it.
double total_loss(LossTerms& terms, const LambdaSchedule& schedule, double epoch);

// Mean over batch and coordinates of (pred - encode_params(target))^2.
template <typename T>
double aet_loss(const Tensor<T>& pred, const TransformSpec& target);

// Same value; adds weight * d(loss)/d(pred) into dpred (which must be sized).
template <typename T>
double aet_loss_grad(const Tensor<T>& pred, const TransformSpec& target, Tensor<T>& dpred,
                     double weight);

// Mean over samples and paths of KL(p_orig row || p_trans row), probabilities
// floored at kProbFloor inside the logs. p_orig is a fixed target.
template <typename T>
double kl_consistency_loss(const Tensor<T>& p_orig, const std::vector<Tensor<T>>& p_trans);

// One path's contribution when the loss averages over n_paths paths. Adds
// weight * gradient w.r.t. the path's logits into dlogits.
template <typename T>
double kl_path_loss_grad(const Tensor<T>& target_probs, const Tensor<T>& path_probs,
                         Tensor<T>& dlogits, int n_paths, double weight);

// Mean cross-entropy -sum targets*log(probs) with floored probs; targets are
// probability rows. Adds weight * gradient w.r.t. logits into dlogits.
template <typename T>
double cross_entropy_loss_grad(const Tensor<T>& probs, const Tensor<T>& targets,
                               Tensor<T>& dlogits, double weight);

// Mean over batch and classes of (probs - targets)^2, gradient through the
// softmax. Adds weight * gradient into dlogits.
template <typename T>
double l2_prob_loss_grad(const Tensor<T>& probs, const Tensor<T>& targets, Tensor<T>& dlogits,
                         double weight);

template <typename T>
struct MixMatchBatch {
  Tensor<T> x_mixed;    // [Nl, ch, h, w]
  Tensor<T> x_targets;  // [Nl, classes]
  Tensor<T> u_mixed;    // [Nu, ch, h, w]
  Tensor<T> u_targets;  // [Nu, classes] guessed labels q, already sharpened
  std::vector<double> mix_coeffs;  // recorded lambda' per row, x rows then u rows
  double lambda_u = 75.0;
};

// Predicts class probabilities for a batch (the teacher in eval mode).
template <typename T>
using Predictor = std::function<Tensor<T>(const Tensor<T>&)>;

// Stochastic augmentation used for label guessing; receives the seed-stream.
template <typename T>
using Augmenter = std::function<Tensor<T>(const Tensor<T>&, SeedStream&)>;

// Guesses labels for the unlabeled batch (sharpened mean prediction over
// k_aug augmentations), then mixes the concatenated labeled+unlabeled pool
// pairwise against a shuffled copy of itself with lambda' = max(l, 1-l),
// l ~ Beta(a_mix, a_mix). a_mix = 0 disables mixing (lambda' = 1).
template <typename T>
MixMatchBatch<T> mixmatch_build(const Tensor<T>& labeled, const Tensor<T>& onehot_labels,
                                const Tensor<T>& unlabeled, const Predictor<T>& teacher,
                                const Augmenter<T>& augment, double temperature, int k_aug,
                                double a_mix, double lambda_u, SeedStream& rng);

// l_x, l_u and l_mix = l_x + lambda_u * l_u for student predictions on the
// mixed sets.
template <typename T>
std::array<double, 3> mixmatch_loss(const MixMatchBatch<T>& mixed, const Tensor<T>& probs_x,
                                    const Tensor<T>& probs_u);

// Temperature sharpening p^(1/T) / sum, rowwise.
template <typename T>
void sharpen_rows(Tensor<T>& probs, double temperature);

}  // namespace enaet
