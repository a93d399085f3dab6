#include "enaet/networks.hpp"

#include <cmath>
#include <stdexcept>

#include "enaet/kernels.hpp"

namespace enaet {

template <typename T>
void BasicBlock<T>::init(int in_ch, int out_ch, int stride, SeedStream& rng) {
  bn1.init(in_ch);
  conv1.init(in_ch, out_ch, 3, stride, 1, rng);
  bn2.init(out_ch);
  conv2.init(out_ch, out_ch, 3, 1, 1, rng);
  has_proj = in_ch != out_ch || stride != 1;
  if (has_proj) proj.init(in_ch, out_ch, 1, stride, 0, rng);
}

template <typename T>
void BasicBlock<T>::forward(const Tensor<T>& x, Tensor<T>& y, bool train) {
  bn1.forward(x, act_, train);
  kern::relu_forward(act_, o1_);
  conv1.forward(o1_, act_);
  bn2.forward(act_, tmp_, train);
  kern::relu_forward(tmp_, o2_);
  conv2.forward(o2_, y);
  if (has_proj) {
    proj.forward(o1_, tmp_);
    kern::add_inplace(y, tmp_);
  } else {
    kern::add_inplace(y, x);
  }
}

template <typename T>
void BasicBlock<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  Tensor<T> d1, d2;
  conv2.backward(dy, d2);
  kern::relu_backward(o2_, d2, d1);
  bn2.backward(d1, d2);
  conv1.backward(d2, d1);
  if (has_proj) {
    proj.backward(dy, d2);
    kern::add_inplace(d1, d2);
  }
  kern::relu_backward(o1_, d1, d2);
  bn1.backward(d2, dx);
  if (!has_proj) kern::add_inplace(dx, dy);
}

template <typename T>
void ResidualGroup<T>::init(int in_ch, int out_ch, int stride, int n_blocks, SeedStream& rng) {
  blocks.resize(static_cast<std::size_t>(n_blocks));
  for (int i = 0; i < n_blocks; ++i)
    blocks[static_cast<std::size_t>(i)].init(i == 0 ? in_ch : out_ch, out_ch, i == 0 ? stride : 1,
                                             rng);
}

template <typename T>
void ResidualGroup<T>::forward(const Tensor<T>& x, Tensor<T>& y, bool train) {
  const Tensor<T>* cur = &x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Tensor<T>& dst = i + 1 == blocks.size() ? y : scratch_[i % 2];
    blocks[i].forward(*cur, dst, train);
    cur = &dst;
  }
}

template <typename T>
void ResidualGroup<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const Tensor<T>* cur = &dy;
  for (std::size_t i = blocks.size(); i-- > 0;) {
    Tensor<T>& dst = i == 0 ? dx : scratch_[i % 2];
    blocks[i].backward(*cur, dst);
    cur = &dst;
  }
}

template <typename T>
void Encoder<T>::init(int base, int width, int n_blocks, SeedStream& rng) {
  stem.init(3, base, 3, 1, 1, rng);
  g1.init(base, base * width, 1, n_blocks, rng);
  g2.init(base * width, 2 * base * width, 2, n_blocks, rng);
  g3.init(2 * base * width, 4 * base * width, 2, n_blocks, rng);
  out_ch = 4 * base * width;
}

template <typename T>
void Encoder<T>::forward(const Tensor<T>& x, Tensor<T>& y, bool train) {
  stem.forward(x, a1_);
  g1.forward(a1_, a2_, train);
  g2.forward(a2_, a3_, train);
  g3.forward(a3_, y, train);
}

template <typename T>
void Encoder<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  Tensor<T> d1, d2;
  g3.backward(dy, d1);
  g2.backward(d1, d2);
  g1.backward(d2, d1);
  stem.backward(d1, dx);
}

template <typename T>
void Head<T>::init(int in_channels, int base, int width, int n_blocks, int out_dim_,
                   SeedStream& rng) {
  in_ch = in_channels;
  mid_ch = 8 * base * width;
  out_dim = out_dim_;
  g4.init(in_ch, mid_ch, 2, n_blocks, rng);
  bn.init(mid_ch);
  fc.init(mid_ch, out_dim, rng);
}

template <typename T>
void Head<T>::forward(const Tensor<T>& x, Tensor<T>& y, bool train) {
  g4.forward(x, feat_, train);
  bn.forward(feat_, bnout_, train);
  kern::relu_forward(bnout_, relu_);
  h_ = relu_.dim(2);
  w_ = relu_.dim(3);
  kern::global_avg_pool_forward(relu_, pooled_);
  fc.forward(pooled_, y);
}

template <typename T>
void Head<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  Tensor<T> d1, d2;
  fc.backward(dy, d1);
  kern::global_avg_pool_backward(d1, h_, w_, d2);
  kern::relu_backward(relu_, d2, d1);
  bn.backward(d1, d2);
  g4.backward(d2, dx);
}

template <typename T>
void build_networks(int num_classes, const std::vector<int>& param_counts, int width, int depth,
                    int base_channels, SeedStream& rng, NetworkBundle<T>& bundle,
                    TeacherState<T>& teacher) {
  if (depth < 10 || (depth - 4) % 6 != 0)
    throw std::invalid_argument("build_networks: depth must be 6n+4 with n >= 1");
  if (width < 1 || base_channels < 1)
    throw std::invalid_argument("build_networks: width and base_channels must be positive");
  if (num_classes < 2) throw std::invalid_argument("build_networks: need at least 2 classes");
  const int n = (depth - 4) / 6;
  bundle.num_classes = num_classes;
  bundle.depth = depth;
  bundle.width = width;
  bundle.base_channels = base_channels;
  bundle.encoder.init(base_channels, width, n, rng);
  bundle.classifier.init(bundle.encoder.out_ch, base_channels, width, n, num_classes, rng);
  bundle.decoders.resize(param_counts.size());
  for (std::size_t k = 0; k < param_counts.size(); ++k)
    bundle.decoders[k].init(2 * bundle.encoder.out_ch, base_channels, width, n, param_counts[k],
                            rng);
  teacher.net = bundle;
}

template <typename T>
void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs) {
  const int N = logits.dim(0), C = logits.dim(1);
  probs.resize(logits.dims());
  for (int n = 0; n < N; ++n) {
    T mx = logits.at(n, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(n, c));
    double sum = 0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(static_cast<double>(logits.at(n, c) - mx));
      probs.at(n, c) = static_cast<T>(e);
      sum += e;
    }
    for (int c = 0; c < C; ++c) probs.at(n, c) = static_cast<T>(probs.at(n, c) / sum);
  }
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_str() + " vs " +
                                b.shape_str());
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor<T> out({N, Ca + Cb, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(&a.at(n, 0, 0, 0), Ca * plane, &out.at(n, 0, 0, 0));
    std::copy_n(&b.at(n, 0, 0, 0), Cb * plane, &out.at(n, Ca, 0, 0));
  }
  return out;
}

template <typename T>
void split_channels_add(const Tensor<T>& d, Tensor<T>& da, Tensor<T>& db) {
  const int N = d.dim(0), Ca = da.dim(1), Cb = db.dim(1), H = d.dim(2), W = d.dim(3);
  if (da.dim(0) != N || db.dim(0) != N || Ca + Cb != d.dim(1))
    throw std::invalid_argument("split_channels_add: incompatible shapes");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    const T* src = &d.at(n, 0, 0, 0);
    T* pa = &da.at(n, 0, 0, 0);
    for (std::size_t i = 0; i < Ca * plane; ++i) pa[i] += src[i];
    const T* srcb = &d.at(n, Ca, 0, 0);
    T* pb = &db.at(n, 0, 0, 0);
    for (std::size_t i = 0; i < Cb * plane; ++i) pb[i] += srcb[i];
  }
}

template <typename T>
ForwardResult<T> forward(NetworkBundle<T>& bundle, const Tensor<T>& batch,
                         const std::vector<Tensor<T>>& transformed, bool train) {
  for (const Tensor<T>& t : transformed) check_same_shape(batch, t, "forward");
  if (!transformed.empty() && transformed.size() != bundle.decoders.size())
    throw std::invalid_argument("forward: expected one transformed batch per decoder");
  ForwardResult<T> out;
  Tensor<T> feat_x;
  bundle.encoder.forward(batch, feat_x, train);
  bundle.classifier.forward(feat_x, out.logits_orig, train);
  softmax_rows(out.logits_orig, out.probs_orig);
  out.logits_trans.resize(transformed.size());
  out.probs_trans.resize(transformed.size());
  out.pred_params.resize(transformed.size());
  for (std::size_t k = 0; k < transformed.size(); ++k) {
    Tensor<T> feat_t;
    bundle.encoder.forward(transformed[k], feat_t, train);
    bundle.classifier.forward(feat_t, out.logits_trans[k], train);
    softmax_rows(out.logits_trans[k], out.probs_trans[k]);
    const Tensor<T> joint = concat_channels(feat_x, feat_t);
    bundle.decoders[k].forward(joint, out.pred_params[k], train);
  }
  return out;
}

namespace {

template <typename T>
void collect_block(BasicBlock<T>& b, const std::string& prefix, bool with_running,
                   std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".bn1.gamma", &b.bn1.gamma, &b.bn1.dgamma});
  out.push_back({prefix + ".bn1.beta", &b.bn1.beta, &b.bn1.dbeta});
  out.push_back({prefix + ".conv1.w", &b.conv1.w, &b.conv1.dw});
  out.push_back({prefix + ".bn2.gamma", &b.bn2.gamma, &b.bn2.dgamma});
  out.push_back({prefix + ".bn2.beta", &b.bn2.beta, &b.bn2.dbeta});
  out.push_back({prefix + ".conv2.w", &b.conv2.w, &b.conv2.dw});
  if (b.has_proj) out.push_back({prefix + ".proj.w", &b.proj.w, &b.proj.dw});
  if (with_running) {
    out.push_back({prefix + ".bn1.running_mean", &b.bn1.running_mean, nullptr});
    out.push_back({prefix + ".bn1.running_var", &b.bn1.running_var, nullptr});
    out.push_back({prefix + ".bn2.running_mean", &b.bn2.running_mean, nullptr});
    out.push_back({prefix + ".bn2.running_var", &b.bn2.running_var, nullptr});
  }
}

template <typename T>
void collect_group(ResidualGroup<T>& g, const std::string& prefix, bool with_running,
                   std::vector<ParamRef<T>>& out) {
  for (std::size_t i = 0; i < g.blocks.size(); ++i)
    collect_block(g.blocks[i], prefix + ".b" + std::to_string(i), with_running, out);
}

template <typename T>
void collect_head(Head<T>& h, const std::string& prefix, bool with_running,
                  std::vector<ParamRef<T>>& out) {
  collect_group(h.g4, prefix + ".g4", with_running, out);
  out.push_back({prefix + ".bn.gamma", &h.bn.gamma, &h.bn.dgamma});
  out.push_back({prefix + ".bn.beta", &h.bn.beta, &h.bn.dbeta});
  if (with_running) {
    out.push_back({prefix + ".bn.running_mean", &h.bn.running_mean, nullptr});
    out.push_back({prefix + ".bn.running_var", &h.bn.running_var, nullptr});
  }
  out.push_back({prefix + ".fc.w", &h.fc.w, &h.fc.dw});
  out.push_back({prefix + ".fc.b", &h.fc.b, &h.fc.db});
}

template <typename T>
std::vector<ParamRef<T>> collect(NetworkBundle<T>& bundle, bool with_running) {
  std::vector<ParamRef<T>> out;
  out.push_back({"encoder.stem.w", &bundle.encoder.stem.w, &bundle.encoder.stem.dw});
  collect_group(bundle.encoder.g1, "encoder.g1", with_running, out);
  collect_group(bundle.encoder.g2, "encoder.g2", with_running, out);
  collect_group(bundle.encoder.g3, "encoder.g3", with_running, out);
  collect_head(bundle.classifier, "classifier", with_running, out);
  for (std::size_t k = 0; k < bundle.decoders.size(); ++k)
    collect_head(bundle.decoders[k], "decoder" + std::to_string(k), with_running, out);
  return out;
}

}  // namespace

template <typename T>
std::vector<ParamRef<T>> trainable_params(NetworkBundle<T>& bundle) {
  return collect(bundle, false);
}

template <typename T>
std::vector<ParamRef<T>> state_tensors(NetworkBundle<T>& bundle) {
  return collect(bundle, true);
}

template <typename T>
void zero_grads(NetworkBundle<T>& bundle) {
  for (ParamRef<T>& p : trainable_params(bundle)) p.grad->zero();
}

template <typename T>
void ema_update(TeacherState<T>& teacher, NetworkBundle<T>& student) {
  std::vector<ParamRef<T>> t = state_tensors(teacher.net);
  std::vector<ParamRef<T>> s = state_tensors(student);
  if (t.size() != s.size()) throw std::invalid_argument("ema_update: bundle structure mismatch");
  const T a = static_cast<T>(teacher.alpha);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t[i].value->same_shape(*s[i].value))
      throw std::invalid_argument("ema_update: shape mismatch at " + t[i].name);
    T* tv = t[i].value->data();
    const T* sv = s[i].value->data();
    const std::size_t n = t[i].value->numel();
    for (std::size_t j = 0; j < n; ++j) tv[j] = a * tv[j] + (T(1) - a) * sv[j];
  }
}

#define ENAET_NET_INST(T)                                                                     \
  template struct BasicBlock<T>;                                                              \
  template struct ResidualGroup<T>;                                                           \
  template struct Encoder<T>;                                                                 \
  template struct Head<T>;                                                                    \
  template void build_networks<T>(int, const std::vector<int>&, int, int, int, SeedStream&,   \
                                  NetworkBundle<T>&, TeacherState<T>&);                       \
  template ForwardResult<T> forward<T>(NetworkBundle<T>&, const Tensor<T>&,                   \
                                       const std::vector<Tensor<T>>&, bool);                  \
  template void softmax_rows<T>(const Tensor<T>&, Tensor<T>&);                                \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template void split_channels_add<T>(const Tensor<T>&, Tensor<T>&, Tensor<T>&);              \
  template std::vector<ParamRef<T>> trainable_params<T>(NetworkBundle<T>&);                   \
  template std::vector<ParamRef<T>> state_tensors<T>(NetworkBundle<T>&);                      \
  template void zero_grads<T>(NetworkBundle<T>&);                                             \
  template void ema_update<T>(TeacherState<T>&, NetworkBundle<T>&);

ENAET_NET_INST(float)
ENAET_NET_INST(double)

#undef ENAET_NET_INST

}  // namespace enaet
