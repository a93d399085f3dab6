#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "enaet/checkpoint.hpp"
#include "enaet/data.hpp"
#include "enaet/losses.hpp"
#include "enaet/networks.hpp"
#include "enaet/optim.hpp"
#include "enaet/transforms.hpp"

// The training loop. Each step runs two backward passes sharing one gradient
// accumulation: the mixmatch pass over the mixed labeled/unlabeled batches,
// then the transformation pass over [x; t_1(x) .. t_5(x)] feeding the
// consistency term and the five decoders. One update per optimizer per step,
// then the teacher moves by exponential moving average. A supervised baseline
// mode trains encoder + classifier on the labeled pool alone.

namespace enaet {

struct TrainConfig {
  int epochs = 100;
  double lr_backbone = 0.002;  // adaptive moments, encoder + classifier
  double lr_aet = 0.1;         // momentum sgd, decoders
  int batch_size = 128;
  double kl_lambda = 1.0;
  std::array<double, kNumFamilies> warm_lambda = {10.0, 7.5, 5.0, 2.0, 0.5};
  std::array<double, kNumFamilies> max_lambda = {1.0, 0.75, 0.5, 0.2, 0.05};
  double data_portion = 1.0;
  double lambda_u = 75.0;
  double ema_alpha = 0.999;
  int image_size = 32;
  std::uint64_t seed = 1;
  std::string mode = "enaet";  // or "supervised_baseline"

  double temperature = 0.5;
  int k_aug = 2;
  double mixup_alpha = 0.75;
  double lambda_u_warm = 0.0;  // epochs of linear ramp on lambda_u; 0 = off
  int steps_per_epoch = 0;     // 0 = one pass over the labeled pool
  int depth = 28;
  int width = 2;
  int base_channels = 16;
  bool ema_warmup = true;  // effective alpha min(alpha, 1 - 1/(step+1))
  bool cosine_lr = false;
  double sgd_momentum = 0.9;
  double weight_decay = 5e-4;

  void validate() const;
};

// Flat key=value text; unknown keys and malformed values are errors. The
// serialization round-trips every field exactly.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string config_text(const TrainConfig& config);
void save_config(const std::string& path, const TrainConfig& config);

// One training step's inputs with every stochastic choice already resolved,
// so the loss is a deterministic function of the network parameters. Targets
// (mixed labels, guessed labels, the consistency target when given) are
// constants: gradients do not flow through them.
template <typename T>
struct StepBatch {
  Tensor<T> x_mixed;  // [Nl,3,h,w]
  Tensor<T> x_targets;
  Tensor<T> u_mixed;  // empty disables the unlabeled term
  Tensor<T> u_targets;
  double lambda_u = 0;

  Tensor<T> aet_orig;                // empty disables the transformation pass
  std::vector<TransformSpec> specs;  // included families
  std::vector<Tensor<T>> aet_trans;  // parallel to specs
  std::vector<double> aet_weights;   // lambda_k; 0 skips that decoder
  double kl_weight = 0;
  Tensor<T> kl_target;  // optional frozen target; empty = live original-row
                        // predictions (detached)
};

// Forward (and optionally backward) of the full objective; gradients
// accumulate into the bundle. l_total = l_mix + kl_weight * l_kl +
// sum_k weight_k * l_aet_k.
template <typename T>
LossTerms compute_step(NetworkBundle<T>& net, const StepBatch<T>& step, bool backward);

struct EpochRecord {
  int epoch = 0;  // 1-based in reports
  LossTerms mean_terms;
  double val_accuracy = 0;
  double seconds = 0;
  std::string checkpoint;
};

struct TrainingRun {
  std::vector<EpochRecord> history;
  std::string run_dir;
  std::string final_checkpoint;
  int best_epoch = -1;  // 1-based epoch with highest validation accuracy
  bool already_complete = false;
};

struct TrainerState {
  TrainConfig config;
  std::vector<std::string> vocabulary;
  ChannelStats stats;
  NetworkBundle<float> student;
  TeacherState<float> teacher;
  Adam<float> adam{AdamConfig{}};
  Sgd<float> sgd{SgdConfig{}};
  std::int64_t global_step = 0;
  int completed_epochs = 0;
};

// Bit-exact round trip of weights, teacher, optimizer state and progress.
// Baseline-mode checkpoints carry no decoder tensors.
void save_checkpoint(TrainerState& state, const std::string& path);
void load_checkpoint(const std::string& path, TrainerState& state);
TrainConfig checkpoint_config(const std::string& path);

// Raised on a non-finite loss after writing a checkpoint of the last finite
// state and a diagnostic report.
struct TrainAbort : std::runtime_error {
  TrainAbort(const std::string& msg, std::string component_, std::string checkpoint_,
             std::string report_)
      : std::runtime_error(msg),
        component(std::move(component_)),
        checkpoint(std::move(checkpoint_)),
        report(std::move(report_)) {}
  std::string component, checkpoint, report;
};

// Runs the loop, writing config.snapshot, vocabulary.txt, splits.csv,
// history.csv, curve.csv and checkpoints/epoch_N under run_dir. resume_from
// restarts from a checkpoint at its recorded epoch boundary; the result then
// matches the uninterrupted run step for step.
TrainingRun train(const TrainConfig& config, const DatasetManifest& manifest,
                  const SplitPlan& plan, const std::string& run_dir,
                  const std::string& resume_from = "");

}  // namespace enaet
