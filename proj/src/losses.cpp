#include "enaet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace enaet {

std::array<double, kNumFamilies> lambda_at(const LambdaSchedule& schedule, double epoch) {
  if (epoch < 0.0) throw std::invalid_argument("lambda_at: epoch must be nonnegative");
  std::array<double, kNumFamilies> out{};
  for (int k = 0; k < kNumFamilies; ++k) {
    const double w = schedule.warm[static_cast<std::size_t>(k)];
    if (w < 0.0) throw std::invalid_argument("lambda_at: warm must be nonnegative");
    const double ramp = (w == 0.0) ? 1.0 : std::min(epoch / w, 1.0);
    out[static_cast<std::size_t>(k)] = schedule.max[static_cast<std::size_t>(k)] * ramp;
  }
  return out;
}

double lambda_u_at(double lambda_u, double warm, double epoch) {
  if (warm < 0.0) throw std::invalid_argument("lambda_u_at: warm must be nonnegative");
  if (epoch < 0.0) throw std::invalid_argument("lambda_u_at: epoch must be nonnegative");
  if (warm == 0.0) return lambda_u;
  return lambda_u * std::min(epoch / warm, 1.0);
}

double total_loss(LossTerms& terms, const LambdaSchedule& schedule, double epoch) {
  const auto lam = lambda_at(schedule, epoch);
  double total = terms.l_mix + schedule.kl_lambda * terms.l_kl;
  for (int k = 0; k < kNumFamilies; ++k)
    total += lam[static_cast<std::size_t>(k)] * terms.l_aet[static_cast<std::size_t>(k)];
  terms.l_total = total;
  return total;
}

namespace {

template <typename T>
void check_pred_shape(const Tensor<T>& pred, const TransformSpec& target, const char* where) {
  const std::vector<double>& p = encode_params(target);
  if (pred.ndim() != 2 || pred.dim(1) != static_cast<int>(p.size())) {
    std::ostringstream oss;
    oss << where << ": prediction shape " << pred.shape_str() << " does not match "
        << family_name(target.family) << " parameter count " << p.size();
    throw std::invalid_argument(oss.str());
  }
  if (pred.dim(0) == 0) throw std::invalid_argument(std::string(where) + ": empty batch");
}

template <typename T>
void check_prob_pair(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    std::ostringstream oss;
    oss << where << ": shape mismatch " << a.shape_str() << " vs " << b.shape_str();
    throw std::invalid_argument(oss.str());
  }
  if (a.dim(0) == 0 || a.dim(1) == 0)
    throw std::invalid_argument(std::string(where) + ": empty batch");
}

}  // namespace

template <typename T>
double aet_loss(const Tensor<T>& pred, const TransformSpec& target) {
  check_pred_shape(pred, target, "aet_loss");
  const std::vector<double>& tv = encode_params(target);
  const int n = pred.dim(0);
  const int d = pred.dim(1);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double r =
          static_cast<double>(pred.at(i, j)) - tv[static_cast<std::size_t>(j)];
      acc += r * r;
    }
  return acc / (static_cast<double>(n) * d);
}

template <typename T>
double aet_loss_grad(const Tensor<T>& pred, const TransformSpec& target, Tensor<T>& dpred,
                     double weight) {
  check_pred_shape(pred, target, "aet_loss_grad");
  check_same_shape(pred, dpred, "aet_loss_grad");
  const std::vector<double>& tv = encode_params(target);
  const int n = pred.dim(0);
  const int d = pred.dim(1);
  const double scale = 2.0 * weight / (static_cast<double>(n) * d);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double r =
          static_cast<double>(pred.at(i, j)) - tv[static_cast<std::size_t>(j)];
      acc += r * r;
      dpred.at(i, j) += static_cast<T>(scale * r);
    }
  return acc / (static_cast<double>(n) * d);
}

namespace {

// KL(p || q) for one row pair with both probabilities floored inside the logs.
template <typename T>
double row_kl(const T* p, const T* q, int c) {
  double acc = 0.0;
  for (int y = 0; y < c; ++y) {
    const double py = static_cast<double>(p[y]);
    const double pf = std::max(py, kProbFloor);
    const double qf = std::max(static_cast<double>(q[y]), kProbFloor);
    acc += py * (std::log(pf) - std::log(qf));
  }
  return acc;
}

}  // namespace

template <typename T>
double kl_consistency_loss(const Tensor<T>& p_orig, const std::vector<Tensor<T>>& p_trans) {
  if (p_trans.empty()) throw std::invalid_argument("kl_consistency_loss: no transformed paths");
  for (const Tensor<T>& pt : p_trans) check_prob_pair(p_orig, pt, "kl_consistency_loss");
  const int n = p_orig.dim(0);
  const int c = p_orig.dim(1);
  double acc = 0.0;
  for (const Tensor<T>& pt : p_trans)
    for (int i = 0; i < n; ++i) acc += row_kl(p_orig.data() + i * c, pt.data() + i * c, c);
  return acc / (static_cast<double>(n) * static_cast<double>(p_trans.size()));
}

template <typename T>
double kl_path_loss_grad(const Tensor<T>& target_probs, const Tensor<T>& path_probs,
                         Tensor<T>& dlogits, int n_paths, double weight) {
  check_prob_pair(target_probs, path_probs, "kl_path_loss_grad");
  check_same_shape(path_probs, dlogits, "kl_path_loss_grad");
  if (n_paths < 1) throw std::invalid_argument("kl_path_loss_grad: n_paths must be positive");
  const int n = target_probs.dim(0);
  const int c = target_probs.dim(1);
  const double scale = weight / (static_cast<double>(n) * n_paths);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* p = target_probs.data() + i * c;
    const T* q = path_probs.data() + i * c;
    T* dz = dlogits.data() + i * c;
    acc += row_kl(p, q, c);
    // d/dz_j of -sum_y p_y log(max(q_y, floor)) with q = softmax(z); the floor
    // zeroes the log derivative wherever it is active.
    double s = 0.0;
    for (int y = 0; y < c; ++y)
      if (static_cast<double>(q[y]) > kProbFloor) s += static_cast<double>(p[y]);
    for (int j = 0; j < c; ++j) {
      const double qj = static_cast<double>(q[j]);
      const double pj = (qj > kProbFloor) ? static_cast<double>(p[j]) : 0.0;
      dz[j] += static_cast<T>(scale * (qj * s - pj));
    }
  }
  return acc / (static_cast<double>(n) * n_paths);
}

template <typename T>
double cross_entropy_loss_grad(const Tensor<T>& probs, const Tensor<T>& targets,
                               Tensor<T>& dlogits, double weight) {
  check_prob_pair(probs, targets, "cross_entropy_loss_grad");
  check_same_shape(probs, dlogits, "cross_entropy_loss_grad");
  const int n = probs.dim(0);
  const int c = probs.dim(1);
  const double scale = weight / static_cast<double>(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* q = probs.data() + i * c;
    const T* t = targets.data() + i * c;
    T* dz = dlogits.data() + i * c;
    double s = 0.0;
    for (int y = 0; y < c; ++y) {
      const double qf = std::max(static_cast<double>(q[y]), kProbFloor);
      acc -= static_cast<double>(t[y]) * std::log(qf);
      if (static_cast<double>(q[y]) > kProbFloor) s += static_cast<double>(t[y]);
    }
    for (int j = 0; j < c; ++j) {
      const double qj = static_cast<double>(q[j]);
      const double tj = (qj > kProbFloor) ? static_cast<double>(t[j]) : 0.0;
      dz[j] += static_cast<T>(scale * (qj * s - tj));
    }
  }
  return acc / static_cast<double>(n);
}

template <typename T>
double l2_prob_loss_grad(const Tensor<T>& probs, const Tensor<T>& targets, Tensor<T>& dlogits,
                         double weight) {
  check_prob_pair(probs, targets, "l2_prob_loss_grad");
  check_same_shape(probs, dlogits, "l2_prob_loss_grad");
  const int n = probs.dim(0);
  const int c = probs.dim(1);
  const double scale = 2.0 * weight / (static_cast<double>(n) * c);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* q = probs.data() + i * c;
    const T* t = targets.data() + i * c;
    T* dz = dlogits.data() + i * c;
    double s = 0.0;
    for (int y = 0; y < c; ++y) {
      const double r = static_cast<double>(q[y]) - static_cast<double>(t[y]);
      acc += r * r;
      s += r * static_cast<double>(q[y]);
    }
    for (int j = 0; j < c; ++j) {
      const double qj = static_cast<double>(q[j]);
      const double rj = qj - static_cast<double>(t[j]);
      dz[j] += static_cast<T>(scale * qj * (rj - s));
    }
  }
  return acc / (static_cast<double>(n) * c);
}

template <typename T>
void sharpen_rows(Tensor<T>& probs, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("sharpen_rows: temperature must be positive");
  if (probs.ndim() != 2) throw std::invalid_argument("sharpen_rows: expected a 2d tensor");
  const int n = probs.dim(0);
  const int c = probs.dim(1);
  const double inv_t = 1.0 / temperature;
  for (int i = 0; i < n; ++i) {
    T* row = probs.data() + i * c;
    double sum = 0.0;
    for (int y = 0; y < c; ++y) {
      const double v = std::pow(std::max(static_cast<double>(row[y]), 0.0), inv_t);
      row[y] = static_cast<T>(v);
      sum += v;
    }
    if (sum <= 0.0) {
      for (int y = 0; y < c; ++y) row[y] = static_cast<T>(1.0 / c);
    } else {
      for (int y = 0; y < c; ++y) row[y] = static_cast<T>(static_cast<double>(row[y]) / sum);
    }
  }
}

namespace {

template <typename T>
void copy_row(const Tensor<T>& src, int i, T* dst, int row_len) {
  std::memcpy(dst, src.data() + static_cast<std::size_t>(i) * row_len,
              sizeof(T) * static_cast<std::size_t>(row_len));
}

template <typename T>
void mix_rows(const T* a, const T* b, T* out, int len, double lam) {
  const double one_m = 1.0 - lam;
  for (int j = 0; j < len; ++j)
    out[j] = static_cast<T>(lam * static_cast<double>(a[j]) +
                            one_m * static_cast<double>(b[j]));
}

}  // namespace

template <typename T>
MixMatchBatch<T> mixmatch_build(const Tensor<T>& labeled, const Tensor<T>& onehot_labels,
                                const Tensor<T>& unlabeled, const Predictor<T>& teacher,
                                const Augmenter<T>& augment, double temperature, int k_aug,
                                double a_mix, double lambda_u, SeedStream& rng) {
  if (labeled.ndim() != 4 || unlabeled.ndim() != 4)
    throw std::invalid_argument("mixmatch_build: image batches must be 4d");
  const int nl = labeled.dim(0);
  const int nu = unlabeled.dim(0);
  if (nl == 0) throw std::invalid_argument("mixmatch_build: labeled pool is empty");
  if (nu == 0) throw std::invalid_argument("mixmatch_build: unlabeled pool is empty");
  if (onehot_labels.ndim() != 2 || onehot_labels.dim(0) != nl)
    throw std::invalid_argument("mixmatch_build: label rows do not match the labeled batch");
  if (labeled.dim(1) != unlabeled.dim(1) || labeled.dim(2) != unlabeled.dim(2) ||
      labeled.dim(3) != unlabeled.dim(3))
    throw std::invalid_argument("mixmatch_build: labeled and unlabeled image shapes differ");
  if (k_aug < 1) throw std::invalid_argument("mixmatch_build: k_aug must be positive");
  if (a_mix < 0.0) throw std::invalid_argument("mixmatch_build: a_mix must be nonnegative");
  if (lambda_u < 0.0) throw std::invalid_argument("mixmatch_build: lambda_u must be nonnegative");
  if (!teacher) throw std::invalid_argument("mixmatch_build: teacher predictor is empty");

  const int num_classes = onehot_labels.dim(1);
  const int row_len = labeled.dim(1) * labeled.dim(2) * labeled.dim(3);

  // Guessed labels: mean teacher prediction over k_aug augmented views.
  Tensor<T> q({nu, num_classes});
  q.zero();
  for (int a = 0; a < k_aug; ++a) {
    Tensor<T> view = augment ? augment(unlabeled, rng) : unlabeled;
    Tensor<T> probs = teacher(view);
    if (probs.ndim() != 2 || probs.dim(0) != nu || probs.dim(1) != num_classes)
      throw std::invalid_argument("mixmatch_build: teacher output shape mismatch");
    for (std::size_t i = 0; i < q.numel(); ++i) q.data()[i] += probs.data()[i];
  }
  const T inv_k = static_cast<T>(1.0 / k_aug);
  for (std::size_t i = 0; i < q.numel(); ++i) q.data()[i] *= inv_k;
  sharpen_rows(q, temperature);

  // Pairing pool: all rows, shuffled.
  const int total = nl + nu;
  std::vector<int> perm(static_cast<std::size_t>(total));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  MixMatchBatch<T> out;
  out.lambda_u = lambda_u;
  out.x_mixed.resize({nl, labeled.dim(1), labeled.dim(2), labeled.dim(3)});
  out.x_targets.resize({nl, num_classes});
  out.u_mixed.resize({nu, unlabeled.dim(1), unlabeled.dim(2), unlabeled.dim(3)});
  out.u_targets.resize({nu, num_classes});
  out.mix_coeffs.resize(static_cast<std::size_t>(total));

  std::vector<T> row_a(static_cast<std::size_t>(row_len));
  std::vector<T> row_b(static_cast<std::size_t>(row_len));
  std::vector<T> tgt_a(static_cast<std::size_t>(num_classes));
  std::vector<T> tgt_b(static_cast<std::size_t>(num_classes));

  auto fetch = [&](int idx, T* img, T* tgt) {
    if (idx < nl) {
      copy_row(labeled, idx, img, row_len);
      copy_row(onehot_labels, idx, tgt, num_classes);
    } else {
      copy_row(unlabeled, idx - nl, img, row_len);
      copy_row(q, idx - nl, tgt, num_classes);
    }
  };

  for (int i = 0; i < total; ++i) {
    double lam = 1.0;
    if (a_mix > 0.0) {
      const double l = rng.beta(a_mix, a_mix);
      lam = std::max(l, 1.0 - l);
    }
    out.mix_coeffs[static_cast<std::size_t>(i)] = lam;
    fetch(i, row_a.data(), tgt_a.data());
    fetch(perm[static_cast<std::size_t>(i)], row_b.data(), tgt_b.data());
    T* img_dst = (i < nl) ? out.x_mixed.data() + static_cast<std::size_t>(i) * row_len
                          : out.u_mixed.data() + static_cast<std::size_t>(i - nl) * row_len;
    T* tgt_dst = (i < nl)
                     ? out.x_targets.data() + static_cast<std::size_t>(i) * num_classes
                     : out.u_targets.data() + static_cast<std::size_t>(i - nl) * num_classes;
    mix_rows(row_a.data(), row_b.data(), img_dst, row_len, lam);
    mix_rows(tgt_a.data(), tgt_b.data(), tgt_dst, num_classes, lam);
  }
  return out;
}

template <typename T>
std::array<double, 3> mixmatch_loss(const MixMatchBatch<T>& mixed, const Tensor<T>& probs_x,
                                    const Tensor<T>& probs_u) {
  check_prob_pair(probs_x, mixed.x_targets, "mixmatch_loss");
  check_prob_pair(probs_u, mixed.u_targets, "mixmatch_loss");
  const int nx = probs_x.dim(0);
  const int cx = probs_x.dim(1);
  double l_x = 0.0;
  for (int i = 0; i < nx; ++i) {
    const T* q = probs_x.data() + i * cx;
    const T* t = mixed.x_targets.data() + i * cx;
    for (int y = 0; y < cx; ++y)
      l_x -= static_cast<double>(t[y]) *
             std::log(std::max(static_cast<double>(q[y]), kProbFloor));
  }
  l_x /= static_cast<double>(nx);

  const int nu = probs_u.dim(0);
  const int cu = probs_u.dim(1);
  double l_u = 0.0;
  for (int i = 0; i < nu; ++i) {
    const T* q = probs_u.data() + i * cu;
    const T* t = mixed.u_targets.data() + i * cu;
    for (int y = 0; y < cu; ++y) {
      const double r = static_cast<double>(q[y]) - static_cast<double>(t[y]);
      l_u += r * r;
    }
  }
  l_u /= static_cast<double>(nu) * cu;

  return {l_x, l_u, l_x + mixed.lambda_u * l_u};
}

#define ENAET_LOSS_INST(T)                                                                  \
  template double aet_loss<T>(const Tensor<T>&, const TransformSpec&);                      \
  template double aet_loss_grad<T>(const Tensor<T>&, const TransformSpec&, Tensor<T>&,      \
                                   double);                                                 \
  template double kl_consistency_loss<T>(const Tensor<T>&, const std::vector<Tensor<T>>&); \
  template double kl_path_loss_grad<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&,      \
                                       int, double);                                        \
  template double cross_entropy_loss_grad<T>(const Tensor<T>&, const Tensor<T>&,            \
                                             Tensor<T>&, double);                           \
  template double l2_prob_loss_grad<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&,      \
                                       double);                                             \
  template void sharpen_rows<T>(Tensor<T>&, double);                                        \
  template MixMatchBatch<T> mixmatch_build<T>(const Tensor<T>&, const Tensor<T>&,           \
                                              const Tensor<T>&, const Predictor<T>&,        \
                                              const Augmenter<T>&, double, int, double,     \
                                              double, SeedStream&);                         \
  template std::array<double, 3> mixmatch_loss<T>(const MixMatchBatch<T>&,                  \
                                                  const Tensor<T>&, const Tensor<T>&);

ENAET_LOSS_INST(float)
ENAET_LOSS_INST(double)

#undef ENAET_LOSS_INST

}  // namespace enaet
