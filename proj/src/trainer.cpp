#include "enaet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "enaet/evaluator.hpp"
#include "enaet/kernels.hpp"

namespace enaet {

namespace {

// ---------------------------------------------------------------- config ---

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim_ws(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double_field(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || value.empty())
    throw std::invalid_argument("config: bad number for " + key + ": '" + value + "'");
  return v;
}

long long parse_int_field(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0' || value.empty())
    throw std::invalid_argument("config: bad integer for " + key + ": '" + value + "'");
  return v;
}

std::uint64_t parse_u64_field(const std::string& key, const std::string& value) {
  const char* begin = value.c_str();
  char* end = nullptr;
  unsigned long long v = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0' || value.empty() || value[0] == '-')
    throw std::invalid_argument("config: bad unsigned integer for " + key + ": '" + value + "'");
  return v;
}

bool parse_bool_field(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + value + "'");
}

std::array<double, kNumFamilies> parse_array_field(const std::string& key,
                                                   const std::string& value) {
  std::array<double, kNumFamilies> out{};
  std::stringstream ss(value);
  std::string item;
  int n = 0;
  while (std::getline(ss, item, ',')) {
    if (n >= kNumFamilies)
      throw std::invalid_argument("config: " + key + " needs exactly 5 values");
    out[static_cast<std::size_t>(n++)] = parse_double_field(key, trim_ws(item));
  }
  if (n != kNumFamilies)
    throw std::invalid_argument("config: " + key + " needs exactly 5 values");
  return out;
}

std::string fmt_array(const std::array<double, kNumFamilies>& a) {
  std::string s;
  for (int i = 0; i < kNumFamilies; ++i) {
    if (i) s += ',';
    s += fmt_double(a[static_cast<std::size_t>(i)]);
  }
  return s;
}

// Returns false for an unknown key.
bool assign_field(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "epochs") c.epochs = static_cast<int>(parse_int_field(key, value));
  else if (key == "lr_backbone") c.lr_backbone = parse_double_field(key, value);
  else if (key == "lr_aet") c.lr_aet = parse_double_field(key, value);
  else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int_field(key, value));
  else if (key == "kl_lambda") c.kl_lambda = parse_double_field(key, value);
  else if (key == "warm_lambda") c.warm_lambda = parse_array_field(key, value);
  else if (key == "max_lambda") c.max_lambda = parse_array_field(key, value);
  else if (key == "data_portion") c.data_portion = parse_double_field(key, value);
  else if (key == "lambda_u") c.lambda_u = parse_double_field(key, value);
  else if (key == "ema_alpha") c.ema_alpha = parse_double_field(key, value);
  else if (key == "image_size") c.image_size = static_cast<int>(parse_int_field(key, value));
  else if (key == "seed") c.seed = parse_u64_field(key, value);
  else if (key == "mode") c.mode = value;
  else if (key == "temperature") c.temperature = parse_double_field(key, value);
  else if (key == "k_aug") c.k_aug = static_cast<int>(parse_int_field(key, value));
  else if (key == "mixup_alpha") c.mixup_alpha = parse_double_field(key, value);
  else if (key == "lambda_u_warm") c.lambda_u_warm = parse_double_field(key, value);
  else if (key == "steps_per_epoch")
    c.steps_per_epoch = static_cast<int>(parse_int_field(key, value));
  else if (key == "depth") c.depth = static_cast<int>(parse_int_field(key, value));
  else if (key == "width") c.width = static_cast<int>(parse_int_field(key, value));
  else if (key == "base_channels")
    c.base_channels = static_cast<int>(parse_int_field(key, value));
  else if (key == "ema_warmup") c.ema_warmup = parse_bool_field(key, value);
  else if (key == "cosine_lr") c.cosine_lr = parse_bool_field(key, value);
  else if (key == "sgd_momentum") c.sgd_momentum = parse_double_field(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_double_field(key, value);
  else return false;
  return true;
}

// -------------------------------------------------------------- run files ---

std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += '\n';
    out += v[i];
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

bool is_decoder_param(const std::string& name) { return name.rfind("decoder", 0) == 0; }

void split_params(NetworkBundle<float>& net, std::vector<ParamRef<float>>& backbone,
                  std::vector<ParamRef<float>>& decoders) {
  backbone.clear();
  decoders.clear();
  for (const ParamRef<float>& p : trainable_params(net))
    (is_decoder_param(p.name) ? decoders : backbone).push_back(p);
}

const char* kHistoryHeader =
    "epoch,l_x,l_u,l_mix,l_kl,l_aet_projective,l_aet_affine,l_aet_similarity,"
    "l_aet_euclidean,l_aet_photometric,l_total,val_accuracy,seconds";

std::string history_row(const EpochRecord& r) {
  std::string s = std::to_string(r.epoch);
  s += ',' + fmt_double(r.mean_terms.l_x);
  s += ',' + fmt_double(r.mean_terms.l_u);
  s += ',' + fmt_double(r.mean_terms.l_mix);
  s += ',' + fmt_double(r.mean_terms.l_kl);
  for (int k = 0; k < kNumFamilies; ++k)
    s += ',' + fmt_double(r.mean_terms.l_aet[static_cast<std::size_t>(k)]);
  s += ',' + fmt_double(r.mean_terms.l_total);
  s += ',' + fmt_double(r.val_accuracy);
  s += ',' + fmt_double(r.seconds);
  return s;
}

std::vector<EpochRecord> parse_history(const std::string& path, int max_epoch,
                                       const std::string& run_dir) {
  std::vector<EpochRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (trim_ws(line).empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 13) continue;
    EpochRecord r;
    r.epoch = std::atoi(cells[0].c_str());
    r.mean_terms.l_x = std::atof(cells[1].c_str());
    r.mean_terms.l_u = std::atof(cells[2].c_str());
    r.mean_terms.l_mix = std::atof(cells[3].c_str());
    r.mean_terms.l_kl = std::atof(cells[4].c_str());
    for (int k = 0; k < kNumFamilies; ++k)
      r.mean_terms.l_aet[static_cast<std::size_t>(k)] =
          std::atof(cells[static_cast<std::size_t>(5 + k)].c_str());
    r.mean_terms.l_total = std::atof(cells[10].c_str());
    r.val_accuracy = std::atof(cells[11].c_str());
    r.seconds = std::atof(cells[12].c_str());
    r.checkpoint = run_dir + "/checkpoints/epoch_" + std::to_string(r.epoch);
    if (r.epoch >= 1 && r.epoch <= max_epoch) out.push_back(r);
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_history(const std::string& path, const std::vector<EpochRecord>& rows) {
  std::string text = kHistoryHeader;
  text += '\n';
  for (const EpochRecord& r : rows) text += history_row(r) + "\n";
  write_text_file(path, text);
}

void write_curve(const std::string& path, const std::vector<EpochRecord>& rows) {
  std::string text = "epoch,val_accuracy\n";
  for (const EpochRecord& r : rows)
    text += std::to_string(r.epoch) + "," + fmt_double(r.val_accuracy) + "\n";
  write_text_file(path, text);
}

// Fills n indices, wrapping the cycler as often as needed.
std::vector<int> draw_exact(BatchCycler& cycler, std::size_t n) {
  std::vector<int> out;
  while (out.size() < n) {
    std::vector<int> chunk = cycler.next_indices();
    if (chunk.empty()) break;
    for (int v : chunk) {
      out.push_back(v);
      if (out.size() == n) break;
    }
  }
  return out;
}

// The component whose value went non-finite, or nullptr when all are finite.
const char* nonfinite_component(const LossTerms& t) {
  if (!std::isfinite(t.l_x)) return "supervised term";
  if (!std::isfinite(t.l_u)) return "unlabeled term";
  if (!std::isfinite(t.l_kl)) return "consistency term";
  for (int k = 0; k < kNumFamilies; ++k)
    if (!std::isfinite(t.l_aet[static_cast<std::size_t>(k)]))
      return family_name(kAllFamilies[static_cast<std::size_t>(k)]);
  if (!std::isfinite(t.l_total)) return "total loss";
  return nullptr;
}

double effective_alpha(const TrainConfig& cfg, std::int64_t global_step) {
  if (!cfg.ema_warmup) return cfg.ema_alpha;
  const double ramp = 1.0 - 1.0 / static_cast<double>(global_step + 1);
  return std::min(cfg.ema_alpha, ramp);
}

}  // namespace

// ------------------------------------------------------------ TrainConfig ---

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(lr_backbone > 0)) fail("lr_backbone must be positive");
  if (!(lr_aet > 0)) fail("lr_aet must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(kl_lambda >= 0)) fail("kl_lambda must be >= 0");
  for (int k = 0; k < kNumFamilies; ++k) {
    if (!(warm_lambda[static_cast<std::size_t>(k)] >= 0)) fail("warm_lambda must be >= 0");
    if (!(max_lambda[static_cast<std::size_t>(k)] >= 0)) fail("max_lambda must be >= 0");
  }
  if (!(data_portion > 0 && data_portion <= 1)) fail("data_portion must be in (0, 1]");
  if (!(lambda_u >= 0)) fail("lambda_u must be >= 0");
  if (!(ema_alpha >= 0 && ema_alpha < 1)) fail("ema_alpha must be in [0, 1)");
  if (image_size < 8) fail("image_size must be >= 8");
  if (mode != "enaet" && mode != "supervised_baseline")
    fail("mode must be 'enaet' or 'supervised_baseline'");
  if (!(temperature > 0)) fail("temperature must be positive");
  if (k_aug < 1) fail("k_aug must be >= 1");
  if (!(mixup_alpha >= 0)) fail("mixup_alpha must be >= 0");
  if (!(lambda_u_warm >= 0)) fail("lambda_u_warm must be >= 0");
  if (steps_per_epoch < 0) fail("steps_per_epoch must be >= 0");
  if (depth < 10 || (depth - 4) % 6 != 0) fail("depth must be 6n + 4 with n >= 1");
  if (width < 1) fail("width must be >= 1");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (!(sgd_momentum >= 0 && sgd_momentum < 1)) fail("sgd_momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::vector<std::string> lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim_ws(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(i + 1) +
                                  ": expected key=value");
    std::string key = trim_ws(line.substr(0, eq));
    std::string value = trim_ws(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(i + 1) + ": empty key");
    if (!seen.insert(key).second)
      throw std::invalid_argument("config line " + std::to_string(i + 1) + ": duplicate key '" +
                                  key + "'");
    if (!assign_field(cfg, key, value))
      throw std::invalid_argument("config line " + std::to_string(i + 1) + ": unknown key '" +
                                  key + "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_text(const TrainConfig& c) {
  std::string s;
  s += "epochs=" + std::to_string(c.epochs) + "\n";
  s += "lr_backbone=" + fmt_double(c.lr_backbone) + "\n";
  s += "lr_aet=" + fmt_double(c.lr_aet) + "\n";
  s += "batch_size=" + std::to_string(c.batch_size) + "\n";
  s += "kl_lambda=" + fmt_double(c.kl_lambda) + "\n";
  s += "warm_lambda=" + fmt_array(c.warm_lambda) + "\n";
  s += "max_lambda=" + fmt_array(c.max_lambda) + "\n";
  s += "data_portion=" + fmt_double(c.data_portion) + "\n";
  s += "lambda_u=" + fmt_double(c.lambda_u) + "\n";
  s += "ema_alpha=" + fmt_double(c.ema_alpha) + "\n";
  s += "image_size=" + std::to_string(c.image_size) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  s += "mode=" + c.mode + "\n";
  s += "temperature=" + fmt_double(c.temperature) + "\n";
  s += "k_aug=" + std::to_string(c.k_aug) + "\n";
  s += "mixup_alpha=" + fmt_double(c.mixup_alpha) + "\n";
  s += "lambda_u_warm=" + fmt_double(c.lambda_u_warm) + "\n";
  s += "steps_per_epoch=" + std::to_string(c.steps_per_epoch) + "\n";
  s += "depth=" + std::to_string(c.depth) + "\n";
  s += "width=" + std::to_string(c.width) + "\n";
  s += "base_channels=" + std::to_string(c.base_channels) + "\n";
  s += std::string("ema_warmup=") + (c.ema_warmup ? "1" : "0") + "\n";
  s += std::string("cosine_lr=") + (c.cosine_lr ? "1" : "0") + "\n";
  s += "sgd_momentum=" + fmt_double(c.sgd_momentum) + "\n";
  s += "weight_decay=" + fmt_double(c.weight_decay) + "\n";
  return s;
}

void save_config(const std::string& path, const TrainConfig& config) {
  write_text_file(path, config_text(config));
}

// ------------------------------------------------------------ compute_step ---

template <typename T>
LossTerms compute_step(NetworkBundle<T>& net, const StepBatch<T>& step, bool backward) {
  const int classes = net.num_classes;
  if (step.x_mixed.ndim() != 4 || step.x_mixed.dim(0) < 1)
    throw std::invalid_argument("compute_step: labeled batch must be [n,c,h,w]");
  if (step.x_targets.ndim() != 2 || step.x_targets.dim(0) != step.x_mixed.dim(0) ||
      step.x_targets.dim(1) != classes)
    throw std::invalid_argument("compute_step: labeled targets shape mismatch");
  const bool have_u = step.u_mixed.numel() > 0;
  if (have_u) {
    if (step.u_mixed.ndim() != 4 || step.u_targets.ndim() != 2 ||
        step.u_targets.dim(0) != step.u_mixed.dim(0) || step.u_targets.dim(1) != classes)
      throw std::invalid_argument("compute_step: unlabeled batch shape mismatch");
  }
  if (step.specs.size() != step.aet_trans.size() || step.specs.size() != step.aet_weights.size())
    throw std::invalid_argument("compute_step: transformation lists must be parallel");
  bool any_aet_weight = false;
  for (double w : step.aet_weights) any_aet_weight = any_aet_weight || w > 0;
  const bool do_trans =
      !step.specs.empty() && (step.kl_weight > 0 || any_aet_weight);
  if (do_trans) {
    if (step.aet_orig.ndim() != 4 || step.aet_orig.dim(0) < 1)
      throw std::invalid_argument("compute_step: original batch must be [n,c,h,w]");
    std::set<int> fams;
    for (std::size_t k = 0; k < step.specs.size(); ++k) {
      if (!fams.insert(static_cast<int>(step.specs[k].family)).second)
        throw std::invalid_argument("compute_step: duplicate transformation family");
      if (step.aet_trans[k].dims() != step.aet_orig.dims())
        throw std::invalid_argument("compute_step: transformed batch shape mismatch");
    }
    if (step.kl_target.numel() > 0 &&
        (step.kl_target.ndim() != 2 || step.kl_target.dim(0) != step.aet_orig.dim(0) ||
         step.kl_target.dim(1) != classes))
      throw std::invalid_argument("compute_step: consistency target shape mismatch");
  }

  LossTerms terms;
  const int nl = step.x_mixed.dim(0);

  // Mixmatch pass: one concatenated batch through encoder and classifier so
  // batch statistics cover the mixed labeled and unlabeled rows together.
  Tensor<T> in_mix = have_u ? concat_rows(step.x_mixed, step.u_mixed) : step.x_mixed;
  Tensor<T> feat, logits, probs;
  net.encoder.forward(in_mix, feat, true);
  net.classifier.forward(feat, logits, true);
  softmax_rows(logits, probs);

  Tensor<T> probs_x = slice_rows(probs, 0, nl);
  Tensor<T> dl_x({nl, classes});
  dl_x.zero();
  terms.l_x = cross_entropy_loss_grad(probs_x, step.x_targets, dl_x, 1.0);
  Tensor<T> dl_u;
  if (have_u) {
    const int nu = step.u_mixed.dim(0);
    Tensor<T> probs_u = slice_rows(probs, nl, nl + nu);
    dl_u.resize({nu, classes});
    dl_u.zero();
    terms.l_u = l2_prob_loss_grad(probs_u, step.u_targets, dl_u, step.lambda_u);
  }
  terms.l_mix = terms.l_x + step.lambda_u * terms.l_u;
  if (backward) {
    Tensor<T> dlogits(logits.dims());
    dlogits.zero();
    paste_rows(dlogits, 0, dl_x);
    if (have_u) paste_rows(dlogits, nl, dl_u);
    Tensor<T> dfeat, dx;
    net.classifier.backward(dlogits, dfeat);
    net.encoder.backward(dfeat, dx);
  }

  double total = terms.l_mix;

  // Transformation pass: [x; t_1(x); ...] through the encoder once, the
  // classifier adding the consistency term over the transformed rows, and
  // decoder k regressing spec k from concat(E(x), E(t_k(x))).
  if (do_trans) {
    const int n = step.aet_orig.dim(0);
    const int paths = static_cast<int>(step.specs.size());
    std::vector<int> in_dims = step.aet_orig.dims();
    in_dims[0] = n * (paths + 1);
    Tensor<T> in_all(in_dims);
    paste_rows(in_all, 0, step.aet_orig);
    for (int k = 0; k < paths; ++k)
      paste_rows(in_all, (k + 1) * n, step.aet_trans[static_cast<std::size_t>(k)]);

    Tensor<T> feat_all;
    net.encoder.forward(in_all, feat_all, true);
    Tensor<T> dfeat_all;
    if (backward) {
      dfeat_all.resize(feat_all.dims());
      dfeat_all.zero();
    }

    if (step.kl_weight > 0) {
      Tensor<T> logits_all, probs_all;
      net.classifier.forward(feat_all, logits_all, true);
      softmax_rows(logits_all, probs_all);
      // The original-row predictions act as a detached target unless the
      // caller froze one explicitly.
      Tensor<T> target = step.kl_target.numel() > 0 ? step.kl_target
                                                    : slice_rows(probs_all, 0, n);
      Tensor<T> dlogits_all(logits_all.dims());
      dlogits_all.zero();
      double l_kl = 0;
      for (int k = 0; k < paths; ++k) {
        Tensor<T> probs_k = slice_rows(probs_all, (k + 1) * n, (k + 2) * n);
        Tensor<T> dk({n, classes});
        dk.zero();
        l_kl += kl_path_loss_grad(target, probs_k, dk, paths, step.kl_weight);
        if (backward) paste_rows(dlogits_all, (k + 1) * n, dk);
      }
      terms.l_kl = l_kl;
      total += step.kl_weight * l_kl;
      if (backward) {
        Tensor<T> dfeat_cls;
        net.classifier.backward(dlogits_all, dfeat_cls);
        kern::add_inplace(dfeat_all, dfeat_cls);
      }
    }

    Tensor<T> feat_orig = slice_rows(feat_all, 0, n);
    Tensor<T> dfeat_orig;
    if (backward) {
      dfeat_orig.resize(feat_orig.dims());
      dfeat_orig.zero();
    }
    for (int k = 0; k < paths; ++k) {
      const double w = step.aet_weights[static_cast<std::size_t>(k)];
      const int fam = static_cast<int>(step.specs[static_cast<std::size_t>(k)].family);
      // A zero weight leaves the decoder untouched so its parameters and
      // optimizer state cannot drift.
      if (!(w > 0)) continue;
      Tensor<T> feat_k = slice_rows(feat_all, (k + 1) * n, (k + 2) * n);
      Tensor<T> dec_in = concat_channels(feat_orig, feat_k);
      Tensor<T> pred;
      net.decoders[static_cast<std::size_t>(fam)].forward(dec_in, pred, true);
      double lv;
      if (backward) {
        Tensor<T> dpred(pred.dims());
        dpred.zero();
        lv = aet_loss_grad(pred, step.specs[static_cast<std::size_t>(k)], dpred, w);
        Tensor<T> dconcat;
        net.decoders[static_cast<std::size_t>(fam)].backward(dpred, dconcat);
        Tensor<T> dfeat_k(feat_k.dims());
        dfeat_k.zero();
        split_channels_add(dconcat, dfeat_orig, dfeat_k);
        paste_rows_add(dfeat_all, (k + 1) * n, dfeat_k);
      } else {
        lv = aet_loss(pred, step.specs[static_cast<std::size_t>(k)]);
      }
      terms.l_aet[static_cast<std::size_t>(fam)] = lv;
      total += w * lv;
    }
    if (backward) {
      paste_rows_add(dfeat_all, 0, dfeat_orig);
      Tensor<T> dx_all;
      net.encoder.backward(dfeat_all, dx_all);
    }
  }

  terms.l_total = total;
  return terms;
}

template LossTerms compute_step<float>(NetworkBundle<float>&, const StepBatch<float>&, bool);
template LossTerms compute_step<double>(NetworkBundle<double>&, const StepBatch<double>&, bool);

// ------------------------------------------------------------- checkpoints ---

void save_checkpoint(TrainerState& state, const std::string& path) {
  const bool baseline = state.config.mode == "supervised_baseline";
  Archive a;
  a.put_str("config", config_text(state.config));
  a.put_str("vocabulary", join_lines(state.vocabulary));
  a.put_f64("stats.mean", state.stats.mean.data(), {3});
  a.put_f64("stats.std", state.stats.std.data(), {3});
  a.put_i64("progress.completed_epochs", state.completed_epochs);
  a.put_i64("progress.global_step", state.global_step);
  for (const ParamRef<float>& p : state_tensors(state.student)) {
    if (baseline && is_decoder_param(p.name)) continue;
    a.put_tensor("student." + p.name, *p.value);
  }
  for (const ParamRef<float>& p : state_tensors(state.teacher.net)) {
    if (baseline && is_decoder_param(p.name)) continue;
    a.put_tensor("teacher." + p.name, *p.value);
  }
  a.put_i64("adam.t", state.adam.steps_taken());
  std::vector<std::vector<float>>& m = state.adam.first_moments();
  std::vector<std::vector<float>>& v = state.adam.second_moments();
  a.put_i64("adam.count", static_cast<std::int64_t>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    a.put_f32("adam.m." + std::to_string(i), m[i].data(),
              {static_cast<int>(m[i].size())});
    a.put_f32("adam.v." + std::to_string(i), v[i].data(),
              {static_cast<int>(v[i].size())});
  }
  if (!baseline) {
    std::vector<std::vector<float>>& sv = state.sgd.velocities();
    a.put_i64("sgd.count", static_cast<std::int64_t>(sv.size()));
    for (std::size_t i = 0; i < sv.size(); ++i)
      a.put_f32("sgd.v." + std::to_string(i), sv[i].data(),
                {static_cast<int>(sv[i].size())});
  }
  a.save(path);
}

void load_checkpoint(const std::string& path, TrainerState& state) {
  Archive a = Archive::load(path);
  state.config = parse_config(a.get_str("config"));
  state.vocabulary = split_lines(a.get_str("vocabulary"));
  if (state.vocabulary.empty()) throw std::runtime_error("checkpoint: empty vocabulary");
  a.get_f64_buffer("stats.mean", state.stats.mean.data(), 3);
  a.get_f64_buffer("stats.std", state.stats.std.data(), 3);
  state.completed_epochs = static_cast<int>(a.get_i64("progress.completed_epochs"));
  state.global_step = a.get_i64("progress.global_step");
  const TrainConfig& cfg = state.config;
  const bool baseline = cfg.mode == "supervised_baseline";

  std::vector<int> counts;
  for (TransformFamily fam : kAllFamilies) counts.push_back(param_count(fam));
  // Same init stream as a fresh run, so tensors a checkpoint does not carry
  // (baseline decoders) come back exactly as the run left them.
  SeedStream init = StreamFactory(cfg.seed).make("init");
  build_networks(static_cast<int>(state.vocabulary.size()), counts, cfg.width, cfg.depth,
                 cfg.base_channels, init, state.student, state.teacher);
  state.teacher.alpha = cfg.ema_alpha;
  for (const ParamRef<float>& p : state_tensors(state.student)) {
    const std::string key = "student." + p.name;
    if (a.has(key)) a.get_tensor(key, *p.value);
    else if (baseline && is_decoder_param(p.name)) continue;
    else throw std::runtime_error("checkpoint: missing tensor " + key);
  }
  for (const ParamRef<float>& p : state_tensors(state.teacher.net)) {
    const std::string key = "teacher." + p.name;
    if (a.has(key)) a.get_tensor(key, *p.value);
    else if (baseline && is_decoder_param(p.name)) continue;
    else throw std::runtime_error("checkpoint: missing tensor " + key);
  }

  std::vector<ParamRef<float>> backbone, decoders;
  split_params(state.student, backbone, decoders);

  state.adam = Adam<float>(AdamConfig{cfg.lr_backbone, 0.9, 0.999, 1e-8});
  state.adam.restore_step_count(a.get_i64("adam.t"));
  const std::size_t n_adam = static_cast<std::size_t>(a.get_i64("adam.count"));
  if (n_adam > 0) {
    if (n_adam != backbone.size())
      throw std::runtime_error("checkpoint: adaptive-moment state count mismatch");
    std::vector<std::vector<float>>& m = state.adam.first_moments();
    std::vector<std::vector<float>>& v = state.adam.second_moments();
    m.resize(n_adam);
    v.resize(n_adam);
    for (std::size_t i = 0; i < n_adam; ++i) {
      m[i].resize(backbone[i].value->numel());
      v[i].resize(backbone[i].value->numel());
      a.get_f32_buffer("adam.m." + std::to_string(i), m[i].data(), m[i].size());
      a.get_f32_buffer("adam.v." + std::to_string(i), v[i].data(), v[i].size());
    }
  }

  state.sgd = Sgd<float>(SgdConfig{cfg.lr_aet, cfg.sgd_momentum, cfg.weight_decay, true});
  if (a.has("sgd.count")) {
    const std::size_t n_sgd = static_cast<std::size_t>(a.get_i64("sgd.count"));
    if (n_sgd > 0) {
      if (n_sgd != decoders.size())
        throw std::runtime_error("checkpoint: momentum state count mismatch");
      std::vector<std::vector<float>>& sv = state.sgd.velocities();
      sv.resize(n_sgd);
      for (std::size_t i = 0; i < n_sgd; ++i) {
        sv[i].resize(decoders[i].value->numel());
        a.get_f32_buffer("sgd.v." + std::to_string(i), sv[i].data(), sv[i].size());
      }
    }
  }
}

TrainConfig checkpoint_config(const std::string& path) {
  Archive a = Archive::load(path);
  return parse_config(a.get_str("config"));
}

// ------------------------------------------------------------------ train ---

TrainingRun train(const TrainConfig& config, const DatasetManifest& manifest,
                  const SplitPlan& plan, const std::string& run_dir,
                  const std::string& resume_from) {
  namespace fs = std::filesystem;
  config.validate();
  if (manifest.vocabulary.empty()) throw std::invalid_argument("train: empty vocabulary");
  if (plan.labeled_train.empty()) throw std::invalid_argument("train: empty labeled pool");
  const bool baseline = config.mode == "supervised_baseline";
  const int classes = static_cast<int>(manifest.vocabulary.size());

  fs::create_directories(fs::path(run_dir) / "checkpoints");

  TrainerState st;
  TrainingRun run;
  run.run_dir = run_dir;

  ImageStore store(manifest, config.image_size);

  if (resume_from.empty()) {
    st.config = config;
    st.vocabulary = manifest.vocabulary;
    std::vector<int> counts;
    for (TransformFamily fam : kAllFamilies) counts.push_back(param_count(fam));
    StreamFactory seeds(config.seed);
    SeedStream init = seeds.make("init");
    build_networks(classes, counts, config.width, config.depth, config.base_channels, init,
                   st.student, st.teacher);
    st.teacher.alpha = config.ema_alpha;
    st.adam = Adam<float>(AdamConfig{config.lr_backbone, 0.9, 0.999, 1e-8});
    st.sgd = Sgd<float>(SgdConfig{config.lr_aet, config.sgd_momentum, config.weight_decay, true});
    // Channel statistics come from the training pool only.
    std::vector<int> stat_pool = plan.labeled_train;
    stat_pool.insert(stat_pool.end(), plan.unlabeled_train.begin(), plan.unlabeled_train.end());
    st.stats = compute_channel_stats(store, stat_pool);
  } else {
    load_checkpoint(resume_from, st);
    // A resumed run may raise (or keep) the epoch budget; every other field
    // must match the checkpoint.
    TrainConfig chk = st.config;
    chk.epochs = config.epochs;
    if (config_text(chk) != config_text(config))
      throw std::invalid_argument("resume: configuration differs from the checkpoint");
    if (st.vocabulary != manifest.vocabulary)
      throw std::invalid_argument("resume: vocabulary differs from the checkpoint");
    st.config = config;
  }

  save_config((fs::path(run_dir) / "config.snapshot").string(), st.config);
  write_text_file((fs::path(run_dir) / "vocabulary.txt").string(),
                  join_lines(st.vocabulary) + "\n");
  write_split_file((fs::path(run_dir) / "splits.csv").string(), manifest, plan);

  const std::string history_path = (fs::path(run_dir) / "history.csv").string();
  if (!resume_from.empty())
    run.history = parse_history(history_path, st.completed_epochs, run_dir);
  write_history(history_path, run.history);

  if (!resume_from.empty() && st.completed_epochs >= config.epochs) {
    run.already_complete = true;
    run.final_checkpoint = resume_from;
    write_curve((fs::path(run_dir) / "curve.csv").string(), run.history);
    if (!plan.validation.empty() && !run.history.empty()) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < run.history.size(); ++i)
        if (run.history[i].val_accuracy > run.history[best].val_accuracy) best = i;
      run.best_epoch = run.history[best].epoch;
    }
    return run;
  }

  std::vector<ParamRef<float>> backbone, decoders;
  split_params(st.student, backbone, decoders);
  // The forward pass moves running statistics and the optimizer moves weights
  // before anything can be inspected, so each step first copies the student
  // state; an abort rolls back to it, making the checkpoint genuinely the
  // last finite state.
  std::vector<ParamRef<float>> student_state = state_tensors(st.student);
  std::vector<std::vector<float>> state_backup(student_state.size());

  StreamFactory seeds(config.seed);
  LambdaSchedule sched;
  sched.warm = config.warm_lambda;
  sched.max = config.max_lambda;
  sched.kl_lambda = config.kl_lambda;
  SamplingRanges ranges;

  const bool have_unlabeled = !baseline && !plan.unlabeled_train.empty();

  for (int epoch = st.completed_epochs; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (config.cosine_lr) {
      constexpr double kPi = 3.14159265358979323846;
      const double f =
          0.5 * (1.0 + std::cos(kPi * static_cast<double>(epoch) /
                                static_cast<double>(config.epochs)));
      st.adam.set_lr(config.lr_backbone * f);
      st.sgd.set_lr(config.lr_aet * f);
    }

    const std::array<double, kNumFamilies> lam =
        baseline ? std::array<double, kNumFamilies>{} : lambda_at(sched, epoch);
    const double kl_w = baseline ? 0.0 : config.kl_lambda;
    const double lu = have_unlabeled
                          ? lambda_u_at(config.lambda_u, config.lambda_u_warm, epoch)
                          : 0.0;
    bool any_family = kl_w > 0;
    for (double w : lam) any_family = any_family || w > 0;

    // Every stream is scoped to (seed, epoch), so a resumed run replays the
    // remaining epochs exactly and checkpoints carry no generator state.
    SeedStream aug_l = seeds.make("aug-labeled", static_cast<std::uint64_t>(epoch));
    SeedStream aug_u = seeds.make("aug-unlabeled", static_cast<std::uint64_t>(epoch));
    SeedStream mix_rng = seeds.make("mixmatch", static_cast<std::uint64_t>(epoch));
    SeedStream trans_rng = seeds.make("transforms", static_cast<std::uint64_t>(epoch));
    SeedStream still(0);  // consumed by nothing: unaugmented assembly draws no values

    BatchOptions lab_opt;
    lab_opt.batch_size = config.batch_size;
    lab_opt.augment = true;
    BatchCycler lab_cycler(plan.labeled_train, lab_opt, seeds,
                           "order-labeled@" + std::to_string(epoch));
    BatchOptions unl_opt;
    unl_opt.batch_size = config.batch_size;
    unl_opt.augment = true;
    unl_opt.mask_labels = true;
    std::unique_ptr<BatchCycler> unl_cycler;
    if (have_unlabeled)
      unl_cycler = std::make_unique<BatchCycler>(plan.unlabeled_train, unl_opt, seeds,
                                                 "order-unlabeled@" + std::to_string(epoch));

    const int steps = config.steps_per_epoch > 0 ? config.steps_per_epoch
                                                 : lab_cycler.batches_per_pass();
    LossTerms sums;
    for (int s = 0; s < steps; ++s) {
      std::vector<int> l_idx = lab_cycler.next_indices();
      Batch bl = assemble_batch(store, l_idx, manifest, st.stats, lab_opt, aug_l);
      if (bl.indices.empty()) continue;
      Tensor<float> onehot = one_hot_labels(bl, classes);

      StepBatch<float> sb;
      std::vector<int> u_idx;
      Batch bu;
      // lambda_u = 0 keeps the whole mixmatch machinery out of the step, so
      // the loop degenerates to plain supervised training.
      const bool mix_on = have_unlabeled && lu > 0;
      if (mix_on) {
        u_idx = draw_exact(*unl_cycler, bl.indices.size());
        bu = assemble_batch(store, u_idx, manifest, st.stats, unl_opt, aug_u);
      }
      if (mix_on && !bu.indices.empty()) {
        Predictor<float> guesser = [&st](const Tensor<float>& x) {
          Tensor<float> f, lg, p;
          st.teacher.net.encoder.forward(x, f, false);
          st.teacher.net.classifier.forward(f, lg, false);
          softmax_rows(lg, p);
          return p;
        };
        Augmenter<float> views = [](const Tensor<float>& x, SeedStream& r) {
          return augment_views(x, r);
        };
        MixMatchBatch<float> mb =
            mixmatch_build(bl.images, onehot, bu.images, guesser, views, config.temperature,
                           config.k_aug, config.mixup_alpha, lu, mix_rng);
        sb.x_mixed = std::move(mb.x_mixed);
        sb.x_targets = std::move(mb.x_targets);
        sb.u_mixed = std::move(mb.u_mixed);
        sb.u_targets = std::move(mb.u_targets);
        sb.lambda_u = lu;
      } else {
        sb.x_mixed = bl.images;
        sb.x_targets = std::move(onehot);
      }

      if (any_family) {
        // Transformations act on raw [0,1] pixels; both the original and the
        // transformed views are normalized afterwards.
        std::vector<int> all_idx = bl.indices;
        if (mix_on) all_idx.insert(all_idx.end(), bu.indices.begin(), bu.indices.end());
        BatchOptions raw_opt;
        raw_opt.batch_size = static_cast<int>(all_idx.size());
        raw_opt.mask_labels = true;
        Batch raw = assemble_batch(store, all_idx, manifest, ChannelStats{}, raw_opt, still);
        for (int k = 0; k < kNumFamilies; ++k) {
          const double w = lam[static_cast<std::size_t>(k)];
          if (!(w > 0) && !(kl_w > 0)) continue;
          TransformSpec spec =
              sample_transform(kAllFamilies[static_cast<std::size_t>(k)], ranges, trans_rng);
          Tensor<float> timg = apply_transform(raw.images, spec);
          normalize_batch(timg, st.stats);
          sb.specs.push_back(std::move(spec));
          sb.aet_trans.push_back(std::move(timg));
          sb.aet_weights.push_back(w);
        }
        sb.aet_orig = raw.images;
        normalize_batch(sb.aet_orig, st.stats);
        sb.kl_weight = kl_w;
      }

      for (std::size_t i = 0; i < student_state.size(); ++i)
        state_backup[i].assign(student_state[i].value->data(),
                               student_state[i].value->data() +
                                   student_state[i].value->numel());
      auto abort_run = [&](const std::string& comp) {
        for (std::size_t i = 0; i < student_state.size(); ++i)
          std::copy(state_backup[i].begin(), state_backup[i].end(),
                    student_state[i].value->data());
        const std::string ckpt = (fs::path(run_dir) / "checkpoints" / "abort").string();
        save_checkpoint(st, ckpt);
        const std::string msg = "non-finite value in " + comp + " at epoch " +
                                std::to_string(epoch + 1) + " step " + std::to_string(s + 1) +
                                " (global step " + std::to_string(st.global_step + 1) + ")";
        const std::string report_path = (fs::path(run_dir) / "abort_report.txt").string();
        write_text_file(report_path, msg + "\ncheckpoint: " + ckpt + "\n");
        throw TrainAbort("training aborted: " + msg, comp, ckpt, report_path);
      };

      zero_grads(st.student);
      LossTerms terms = compute_step(st.student, sb, true);
      if (const char* comp = nonfinite_component(terms)) abort_run(comp);
      st.adam.step(backbone);
      if (!baseline) st.sgd.step(decoders);
      // An update can overflow on its own while the loss that produced it was
      // still finite; catching it here keeps the rollback meaningful.
      for (const ParamRef<float>& p : student_state) {
        if (p.grad == nullptr) continue;
        bool ok = true;
        for (std::size_t i = 0; i < p.value->numel() && ok; ++i)
          ok = std::isfinite(static_cast<double>(p.value->data()[i]));
        if (!ok) abort_run("parameter " + p.name);
      }
      ++st.global_step;
      if (!baseline) {
        st.teacher.alpha = effective_alpha(config, st.global_step);
        ema_update(st.teacher, st.student);
      }

      sums.l_x += terms.l_x;
      sums.l_u += terms.l_u;
      sums.l_mix += terms.l_mix;
      sums.l_kl += terms.l_kl;
      for (int k = 0; k < kNumFamilies; ++k)
        sums.l_aet[static_cast<std::size_t>(k)] += terms.l_aet[static_cast<std::size_t>(k)];
      sums.l_total += terms.l_total;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    if (steps > 0) {
      const double inv = 1.0 / static_cast<double>(steps);
      rec.mean_terms.l_x = sums.l_x * inv;
      rec.mean_terms.l_u = sums.l_u * inv;
      rec.mean_terms.l_mix = sums.l_mix * inv;
      rec.mean_terms.l_kl = sums.l_kl * inv;
      for (int k = 0; k < kNumFamilies; ++k)
        rec.mean_terms.l_aet[static_cast<std::size_t>(k)] =
            sums.l_aet[static_cast<std::size_t>(k)] / static_cast<double>(steps);
      rec.mean_terms.l_total = sums.l_total * inv;
    }
    if (!plan.validation.empty()) {
      NetworkBundle<float>& eval_net = baseline ? st.student : st.teacher.net;
      MetricsReport mr =
          evaluate(eval_net, store, manifest, plan.validation, st.stats, config.batch_size);
      rec.val_accuracy = mr.top1_accuracy;
    }

    st.completed_epochs = epoch + 1;
    rec.checkpoint =
        (fs::path(run_dir) / "checkpoints" / ("epoch_" + std::to_string(epoch + 1))).string();
    save_checkpoint(st, rec.checkpoint);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.history.push_back(rec);
    {
      std::ofstream out(history_path, std::ios::binary | std::ios::app);
      out << history_row(rec) << "\n";
    }
    write_curve((fs::path(run_dir) / "curve.csv").string(), run.history);
  }

  if (!run.history.empty()) run.final_checkpoint = run.history.back().checkpoint;
  if (!plan.validation.empty() && !run.history.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < run.history.size(); ++i)
      if (run.history[i].val_accuracy > run.history[best].val_accuracy) best = i;
    run.best_epoch = run.history[best].epoch;
  }
  return run;
}

}  // namespace enaet
