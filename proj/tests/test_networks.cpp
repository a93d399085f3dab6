#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "enaet/networks.hpp"
#include "enaet/transforms.hpp"

using namespace enaet;

namespace {

const std::vector<int> kParamCounts = {8, 6, 4, 3, 4};

template <typename T>
Tensor<T> random_batch(int n, int side, SeedStream& rng) {
  Tensor<T> x({n, 3, side, side});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(0, 1));
  return x;
}

template <typename T>
void build_tiny(NetworkBundle<T>& bundle, TeacherState<T>& teacher, int classes = 4,
                std::uint64_t seed = 101) {
  SeedStream rng(seed);
  build_networks(classes, kParamCounts, 1, 10, 2, rng, bundle, teacher);
}

template <typename T>
double max_param_diff(NetworkBundle<T>& a, NetworkBundle<T>& b) {
  auto ra = state_tensors(a), rb = state_tensors(b);
  REQUIRE(ra.size() == rb.size());
  double m = 0;
  for (std::size_t i = 0; i < ra.size(); ++i)
    for (std::size_t j = 0; j < ra[i].value->numel(); ++j)
      m = std::max(m, std::abs(static_cast<double>((*ra[i].value)[j]) -
                               static_cast<double>((*rb[i].value)[j])));
  return m;
}

}  // namespace

TEST_CASE("paper-shaped bundle: five decoders with the family param dims") {
  SeedStream rng(7);
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_networks(27, kParamCounts, 2, 28, 4, rng, bundle, teacher);
  REQUIRE(bundle.decoders.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(bundle.decoders[k].out_dim == kParamCounts[k]);
  CHECK(bundle.classifier.out_dim == 27);
  CHECK(bundle.encoder.g1.blocks.size() == 4);
  // decoders read concatenated features: twice the encoder channel count
  CHECK(bundle.decoders[0].in_ch == 2 * bundle.encoder.out_ch);
  CHECK(bundle.classifier.in_ch == bundle.encoder.out_ch);

  Tensor<float> x = random_batch<float>(2, 32, rng);
  std::vector<Tensor<float>> trans;
  for (int k = 0; k < 5; ++k) trans.push_back(random_batch<float>(2, 32, rng));
  ForwardResult<float> out = forward(bundle, x, trans, true);
  CHECK(out.logits_orig.dim(1) == 27);
  for (int k = 0; k < 5; ++k) {
    CHECK(out.pred_params[k].dim(0) == 2);
    CHECK(out.pred_params[k].dim(1) == kParamCounts[k]);
  }
}

TEST_CASE("invalid configurations are rejected") {
  SeedStream rng(8);
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  CHECK_THROWS_AS(build_networks(4, kParamCounts, 1, 29, 2, rng, bundle, teacher),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_networks(4, kParamCounts, 0, 10, 2, rng, bundle, teacher),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_networks(1, kParamCounts, 1, 10, 2, rng, bundle, teacher),
                  std::invalid_argument);
}

TEST_CASE("teacher starts as an exact copy of the student") {
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_tiny(bundle, teacher);
  CHECK(max_param_diff(bundle, teacher.net) == 0.0);
}

TEST_CASE("classifier head tracks num_classes") {
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_tiny(bundle, teacher, 2);
  SeedStream rng(9);
  Tensor<float> x = random_batch<float>(3, 8, rng);
  ForwardResult<float> out = forward(bundle, x, {}, false);
  CHECK(out.logits_orig.dim(1) == 2);
  CHECK(out.logits_trans.empty());
  CHECK(out.pred_params.empty());
}

TEST_CASE("predicted probability rows sum to one") {
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_tiny(bundle, teacher, 5);
  SeedStream rng(10);
  Tensor<float> x = random_batch<float>(4, 8, rng);
  std::vector<Tensor<float>> trans;
  for (int k = 0; k < 5; ++k) trans.push_back(random_batch<float>(4, 8, rng));
  for (bool train : {true, false}) {
    ForwardResult<float> out = forward(bundle, x, trans, train);
    for (int n = 0; n < 4; ++n) {
      double s = 0;
      for (int c = 0; c < 5; ++c) {
        CHECK(out.probs_orig.at(n, c) >= 0.f);
        s += out.probs_orig.at(n, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
      for (const Tensor<float>& p : out.probs_trans) {
        double st = 0;
        for (int c = 0; c < 5; ++c) st += p.at(n, c);
        CHECK(std::abs(st - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("forward rejects mismatched batches") {
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_tiny(bundle, teacher);
  SeedStream rng(11);
  Tensor<float> x = random_batch<float>(2, 8, rng);
  std::vector<Tensor<float>> bad = {random_batch<float>(2, 16, rng)};
  CHECK_THROWS_AS(forward(bundle, x, bad, false), std::invalid_argument);
  std::vector<Tensor<float>> wrong_count = {random_batch<float>(2, 8, rng)};
  CHECK_THROWS_AS(forward(bundle, x, wrong_count, false), std::invalid_argument);
}

TEST_CASE("encoder and classifier are Siamese across paths") {
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_tiny(bundle, teacher);
  SeedStream rng(12);
  Tensor<float> x = random_batch<float>(2, 8, rng);
  std::vector<Tensor<float>> trans;
  for (int k = 0; k < 5; ++k) trans.push_back(random_batch<float>(2, 8, rng));

  const ForwardResult<float> base = forward(bundle, x, trans, false);
  bundle.encoder.stem.w[0] += 0.25f;
  const ForwardResult<float> bumped = forward(bundle, x, trans, false);

  double d_orig = 0, d_trans = 0;
  for (std::size_t i = 0; i < base.logits_orig.numel(); ++i)
    d_orig = std::max(d_orig, std::abs(static_cast<double>(base.logits_orig[i]) -
                                       bumped.logits_orig[i]));
  for (std::size_t i = 0; i < base.logits_trans[2].numel(); ++i)
    d_trans = std::max(d_trans, std::abs(static_cast<double>(base.logits_trans[2][i]) -
                                         bumped.logits_trans[2][i]));
  CHECK(d_orig > 0);
  CHECK(d_trans > 0);
}

TEST_CASE("decoders are independent of each other and of the classifier") {
  NetworkBundle<float> bundle;
  TeacherState<float> teacher;
  build_tiny(bundle, teacher);
  SeedStream rng(13);
  Tensor<float> x = random_batch<float>(2, 8, rng);
  std::vector<Tensor<float>> trans;
  for (int k = 0; k < 5; ++k) trans.push_back(random_batch<float>(2, 8, rng));

  const ForwardResult<float> base = forward(bundle, x, trans, false);
  for (std::size_t i = 0; i < bundle.decoders[0].fc.w.numel(); ++i)
    bundle.decoders[0].fc.w[i] += 0.5f;
  const ForwardResult<float> bumped = forward(bundle, x, trans, false);

  bool dec0_changed = false;
  for (std::size_t i = 0; i < base.pred_params[0].numel(); ++i)
    dec0_changed |= base.pred_params[0][i] != bumped.pred_params[0][i];
  CHECK(dec0_changed);
  for (int k = 1; k < 5; ++k)
    for (std::size_t i = 0; i < base.pred_params[k].numel(); ++i)
      CHECK(base.pred_params[k][i] == bumped.pred_params[k][i]);
  for (std::size_t i = 0; i < base.logits_orig.numel(); ++i)
    CHECK(base.logits_orig[i] == bumped.logits_orig[i]);
}

TEST_CASE("ema_update endpoints and geometric decay") {
  NetworkBundle<double> student;
  TeacherState<double> teacher;
  build_tiny(student, teacher);

  // t0 differs from the constant student everywhere
  auto trefs = state_tensors(teacher.net);
  std::vector<std::vector<double>> t0;
  for (auto& r : trefs) {
    std::vector<double> snap(r.value->numel());
    for (std::size_t j = 0; j < snap.size(); ++j) snap[j] = (*r.value)[j];
    t0.push_back(std::move(snap));
  }
  for (auto& r : state_tensors(student))
    for (std::size_t j = 0; j < r.value->numel(); ++j) (*r.value)[j] = 0.25;

  SUBCASE("alpha 0 copies the student") {
    teacher.alpha = 0.0;
    ema_update(teacher, student);
    CHECK(max_param_diff(teacher.net, student) == 0.0);
  }
  SUBCASE("alpha 1 freezes the teacher") {
    teacher.alpha = 1.0;
    ema_update(teacher, student);
    auto now = state_tensors(teacher.net);
    for (std::size_t i = 0; i < now.size(); ++i)
      for (std::size_t j = 0; j < now[i].value->numel(); ++j)
        CHECK((*now[i].value)[j] == t0[i][j]);
  }
  SUBCASE("n steps against a constant student follow the closed form") {
    teacher.alpha = 0.7;
    const int n = 5;
    for (int step = 0; step < n; ++step) ema_update(teacher, student);
    const double an = std::pow(0.7, n);
    auto now = state_tensors(teacher.net);
    for (std::size_t i = 0; i < now.size(); ++i)
      for (std::size_t j = 0; j < now[i].value->numel(); ++j)
        CHECK((*now[i].value)[j] ==
              doctest::Approx(an * t0[i][j] + (1 - an) * 0.25).epsilon(1e-10));
  }
  SUBCASE("each step contracts toward the student") {
    teacher.alpha = 0.6;
    auto before = state_tensors(teacher.net);
    std::vector<std::vector<double>> gap0;
    for (auto& r : before) {
      std::vector<double> g(r.value->numel());
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = std::abs((*r.value)[j] - 0.25);
      gap0.push_back(std::move(g));
    }
    ema_update(teacher, student);
    auto after = state_tensors(teacher.net);
    for (std::size_t i = 0; i < after.size(); ++i)
      for (std::size_t j = 0; j < after[i].value->numel(); ++j)
        CHECK(std::abs((*after[i].value)[j] - 0.25) <= gap0[i][j] + 1e-15);
  }
}

TEST_CASE("ema_update rejects mismatched bundles") {
  NetworkBundle<float> s1, s2;
  TeacherState<float> t1, t2;
  SeedStream rng(14);
  build_networks(4, kParamCounts, 1, 10, 2, rng, s1, t1);
  build_networks(4, kParamCounts, 2, 10, 2, rng, s2, t2);
  CHECK_THROWS_AS(ema_update(t1, s2), std::invalid_argument);
}

TEST_CASE("channel concat and split round-trip gradients") {
  SeedStream rng(15);
  Tensor<float> a = random_batch<float>(2, 4, rng);
  Tensor<float> b = random_batch<float>(2, 4, rng);
  Tensor<float> j = concat_channels(a, b);
  REQUIRE(j.dim(1) == 6);
  CHECK(j.at(1, 0, 2, 3) == a.at(1, 0, 2, 3));
  CHECK(j.at(1, 3, 2, 3) == b.at(1, 0, 2, 3));
  Tensor<float> da(a.dims()), db(b.dims());
  da.fill(1.f);
  db.fill(2.f);
  split_channels_add(j, da, db);
  CHECK(da.at(1, 0, 2, 3) == 1.f + a.at(1, 0, 2, 3));
  CHECK(db.at(1, 0, 2, 3) == 2.f + b.at(1, 0, 2, 3));
}

TEST_CASE("backward pass matches finite differences through the full stack") {
  NetworkBundle<double> bundle;
  TeacherState<double> teacher;
  build_tiny(bundle, teacher, 3, 202);
  SeedStream rng(16);
  const Tensor<double> x = random_batch<double>(2, 8, rng);
  Tensor<double> g({2, 3});
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = rng.uniform(-1, 1);

  auto loss = [&]() {
    Tensor<double> feat, logits;
    bundle.encoder.forward(x, feat, true);
    bundle.classifier.forward(feat, logits, true);
    double s = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) s += g[i] * logits[i];
    return s;
  };

  loss();
  zero_grads(bundle);
  Tensor<double> dfeat, dx;
  bundle.classifier.backward(g, dfeat);
  bundle.encoder.backward(dfeat, dx);

  auto refs = trainable_params(bundle);
  const double h = 1e-5;
  int checked = 0;
  for (auto& r : refs) {
    if (r.name.rfind("decoder", 0) == 0) continue;
    const std::size_t idx = r.value->numel() / 2;
    const double orig = (*r.value)[idx];
    (*r.value)[idx] = orig + h;
    const double lp = loss();
    (*r.value)[idx] = orig - h;
    const double lm = loss();
    (*r.value)[idx] = orig;
    const double fd = (lp - lm) / (2 * h);
    const double an = (*r.grad)[idx];
    CHECK(std::abs(fd - an) < 1e-4 * std::max({1.0, std::abs(fd), std::abs(an)}));
    ++checked;
  }
  CHECK(checked > 20);
}
