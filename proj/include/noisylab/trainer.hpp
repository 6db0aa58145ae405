#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "noisylab/dataset.hpp"
#include "noisylab/detection.hpp"
#include "noisylab/nn.hpp"

namespace noisylab {

enum class TrainMode { baseline, augmentation, regularization, separation };

std::string to_string(TrainMode m);
std::string to_string(DecisionKind d);
TrainMode train_mode_from_string(const std::string& s);
DecisionKind decision_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::regularization;
  DecisionKind decision = DecisionKind::elastic;
  double reg_weight = 1.0;  // alpha in the regularization objective
  double cutoff = 0.5;      // c in the separation objective
  int warmup_epochs = 10;
  int max_epochs = 40;
  nn::SgdConfig sgd;
  TemperatureSchedule schedule;
  DetectionConfig detection;
  nn::NetArch arch;
  uint64_t seed = 1;
  int subset = 0;      // 0 = full training split (class-balanced prefix otherwise)
  int val_limit = 0;   // 0 = full validation split
  int threads = 0;     // 0 = hardware default
  // Test hook: replaces every detector lambda with a constant.
  std::optional<double> lambda_override;

  void validate() const;
  bool evaluates_four_rotation() const { return mode != TrainMode::baseline; }
  bool uses_detection() const {
    return mode == TrainMode::regularization || mode == TrainMode::separation;
  }
};

struct EpochReport {
  int epoch = 0;
  double mean_train_loss = 0;
  std::vector<double> batch_losses;
  double val_acc_1img = 0;                // percent
  double val_acc_4rot = nan("");          // percent; NaN when not evaluated
  double clean_pred_acc = nan("");        // from the freshest detection pass
  double predicted_clean_fraction = nan("");
  double mean_lambda = nan("");
  double wall_time_s = 0;
};

struct TrainResult {
  nn::TwoHeadNetwork<float> final_net;
  nn::TwoHeadNetwork<float> best_net;
  int best_epoch = -1;
  double best_val_acc_1img = 0;
  std::vector<EpochReport> reports;
};

// File writers and progress hooks; every member may be left empty.
struct RunSinks {
  std::function<void(const EpochReport&)> on_epoch;
  // Detection pass tagged with the epoch whose training it will steer
  // (warm-up pass -> warmup_epochs; end of epoch e -> e+1).
  std::function<void(const DetectionPass&, const std::vector<char>& noisy_truth)>
      on_detection;
  std::function<void(const std::string&)> on_warning;
};

// Per-sample weights of the composite objective
//   L = mean_i [ cw_i * CE_class_i + rw_i * CE_rot_i ].
struct LossWeights {
  std::vector<double> class_w;
  std::vector<double> rot_w;
};
LossWeights make_loss_weights(TrainMode mode, const std::vector<double>& lambda,
                              double reg_weight, double cutoff);

// Scalar objectives as defined per sample; all reduce by arithmetic mean.
double loss_baseline(const std::vector<double>& ce_class);
double loss_regularization(const std::vector<double>& ce_class,
                           const std::vector<double>& ce_rot,
                           const std::vector<double>& lambda, double reg_weight);
double loss_separation(const std::vector<double>& ce_class,
                       const std::vector<double>& ce_rot,
                       const std::vector<double>& lambda, double cutoff);

// Algorithm: warm-up epochs train plain CE on un-rotated inputs; once
// warm-up ends the detector initializes lambda; afterwards every epoch
// rotates each sample afresh, trains the configured objective, and
// refreshes lambda from a detection pass at epoch end. Baseline never
// rotates; augmentation rotates from epoch 0 but keeps the plain CE
// objective; neither runs detection.
TrainResult run_training(const TrainConfig& cfg,
                         const std::vector<SampleRecord>& train_full,
                         const std::vector<SampleRecord>& validation,
                         const NormStats& norm, const RunSinks& sinks = {});

}  // namespace noisylab
