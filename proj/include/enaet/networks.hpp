#pragma once

#include <array>
#include <string>
#include <vector>

#include "enaet/layers.hpp"

// Wide residual network split for the transformation-ensemble model.
// depth d with (d-4) % 6 == 0 gives n = (d-4)/6 pre-activation blocks per
// group. The encoder is the stem convolution plus groups 1-3; every head
// (classifier and each decoder) is its own copy of group 4 followed by
// batch norm, relu, global average pooling and a linear layer. Heads taking
// concatenated originals-plus-transformed features double their input
// channel count.

namespace enaet {

template <typename T>
struct BasicBlock {
  BatchNorm2d<T> bn1, bn2;
  Conv2d<T> conv1, conv2;
  Conv2d<T> proj;  // 1x1 shortcut, only when shape changes
  bool has_proj = false;

  void init(int in_ch, int out_ch, int stride, SeedStream& rng);
  void forward(const Tensor<T>& x, Tensor<T>& y, bool train);
  void backward(const Tensor<T>& dy, Tensor<T>& dx);

 private:
  Tensor<T> o1_, o2_, act_, tmp_;
};

template <typename T>
struct ResidualGroup {
  std::vector<BasicBlock<T>> blocks;

  void init(int in_ch, int out_ch, int stride, int n_blocks, SeedStream& rng);
  void forward(const Tensor<T>& x, Tensor<T>& y, bool train);
  void backward(const Tensor<T>& dy, Tensor<T>& dx);

 private:
  std::array<Tensor<T>, 2> scratch_;
};

template <typename T>
struct Encoder {
  Conv2d<T> stem;
  ResidualGroup<T> g1, g2, g3;
  int out_ch = 0;

  void init(int base, int width, int n_blocks, SeedStream& rng);
  void forward(const Tensor<T>& x, Tensor<T>& y, bool train);
  void backward(const Tensor<T>& dy, Tensor<T>& dx);

 private:
  Tensor<T> a1_, a2_, a3_;
};

// Group 4 + bn + relu + global average pool + linear.
template <typename T>
struct Head {
  ResidualGroup<T> g4;
  BatchNorm2d<T> bn;
  Linear<T> fc;
  int in_ch = 0, mid_ch = 0, out_dim = 0;

  void init(int in_channels, int base, int width, int n_blocks, int out_dim_, SeedStream& rng);
  void forward(const Tensor<T>& x, Tensor<T>& y, bool train);
  void backward(const Tensor<T>& dy, Tensor<T>& dx);

 private:
  Tensor<T> feat_, bnout_, relu_, pooled_;
  int h_ = 0, w_ = 0;
};

template <typename T>
struct NetworkBundle {
  Encoder<T> encoder;
  Head<T> classifier;
  std::vector<Head<T>> decoders;
  int num_classes = 0, depth = 0, width = 0, base_channels = 0;
};

template <typename T>
struct TeacherState {
  NetworkBundle<T> net;
  double alpha = 0.999;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits_orig, probs_orig;               // [N, classes]
  std::vector<Tensor<T>> logits_trans, probs_trans;
  std::vector<Tensor<T>> pred_params;              // [N, param_count(k)]
};

// param_counts orders the decoders; width/depth follow the usual wide-resnet
// naming (depth 28, width 2 is the paper configuration). base_channels stays
// 16 except in tests that need tiny nets.
template <typename T>
void build_networks(int num_classes, const std::vector<int>& param_counts, int width, int depth,
                    int base_channels, SeedStream& rng, NetworkBundle<T>& bundle,
                    TeacherState<T>& teacher);

// Runs x and each transformed batch through the shared encoder/classifier and
// decoder k on concat(E(x), E(t_k(x))). transformed may be empty. Training
// mode uses batch statistics; gradients are not produced by this entry point
// (the trainer drives layers directly).
template <typename T>
ForwardResult<T> forward(NetworkBundle<T>& bundle, const Tensor<T>& batch,
                         const std::vector<Tensor<T>>& transformed, bool train);

// Eq. 1: teacher = alpha * teacher + (1 - alpha) * student, over every weight
// and running statistic.
template <typename T>
void ema_update(TeacherState<T>& teacher, NetworkBundle<T>& student);

template <typename T>
void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs);

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for running statistics
};

// Trainable tensors with their gradient slots. Decoder tensors are the ones
// whose names start with "decoder".
template <typename T>
std::vector<ParamRef<T>> trainable_params(NetworkBundle<T>& bundle);

// Trainable tensors plus running statistics; the checkpoint/EMA view.
template <typename T>
std::vector<ParamRef<T>> state_tensors(NetworkBundle<T>& bundle);

template <typename T>
void zero_grads(NetworkBundle<T>& bundle);

// Stacks b after a along channels: [N,Ca+Cb,H,W].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Splits a channel-concat gradient back into its two halves, adding into da
// and db (which must be pre-sized).
template <typename T>
void split_channels_add(const Tensor<T>& d, Tensor<T>& da, Tensor<T>& db);

}  // namespace enaet
