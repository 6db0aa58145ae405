#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisylab/common.hpp"
#include "noisylab/dataset.hpp"
#include "noisylab/nn.hpp"

namespace noisylab {

enum class GmmFeature { loss, confidence };
enum class DecisionKind { loss_only, hard, elastic };

struct PerSampleStats {
  int id = 0;
  double ce_loss = 0;     // nats, against the observed label
  double confidence = 0;  // max softmax probability
  int epoch = 0;
};

// Two-component 1-D Gaussian mixture. clean_component is 1-based: for the
// loss feature the lower-mean component is clean, for confidence the
// higher-mean one.
struct GmmModel {
  double w1 = 0.5, w2 = 0.5;
  double mu1 = 0, mu2 = 0;
  double var1 = 1, var2 = 1;
  int clean_component = 1;
  GmmFeature feature = GmmFeature::loss;
};

struct GmmFit {
  GmmModel model;
  std::vector<double> log_likelihood;  // one entry per EM iteration
  bool degenerate = false;             // single-cluster fallback engaged
  int iterations = 0;
};

struct GmmOptions {
  int max_iters = 100;
  double tol = 1e-8;
  double var_floor_rel = 1e-6;  // floor = rel * sample variance
};

// EM fit with median-split and quantile-split restarts; keeps the better
// final log-likelihood. Degenerate input (fewer than 4 values or zero
// spread) returns the flagged single-cluster fallback with both components
// at the sample mean.
GmmFit fit_gmm_1d(const std::vector<double>& values, GmmFeature feature,
                  const GmmOptions& opt = {});

// Responsibility of the clean component at `value`, log-space stabilized.
double posterior_clean(const GmmModel& gmm, double value);

// Mixture log-likelihood of data under a model (test oracle convenience).
double gmm_log_likelihood(const GmmModel& gmm, const std::vector<double>& values);

struct TemperatureSchedule {
  double alpha_start = 0.05;
  // Default sits inside the epsilon guard band so that the elastic rule
  // ends exactly at the hard minimum.
  double alpha_end = -5e-4;
  int total_epochs = 100;
  double epsilon = 1e-3;
};

// alpha(t) = alpha_end + (alpha_start-alpha_end)/2 * (1 + cos(pi t / T)).
double temperature_at(const TemperatureSchedule& s, int epoch);

struct Decision {
  double lambda = 0;
  bool is_clean = false;
};

Decision decide_loss_only(double p_loss);
Decision decide_hard(double p_loss, double p_conf);

// alpha * ln( (exp(p_loss/alpha) + exp(p_conf/alpha)) / 2 ), clamped to
// [0,1]. Inside the guard band |alpha| < epsilon the exact max (alpha > 0)
// or exact min (alpha < 0) is used.
double smooth_combine(double p_loss, double p_conf, double alpha,
                      double epsilon = 1e-3);

Decision decide_elastic(double p_loss, double p_conf,
                        const TemperatureSchedule& schedule, int epoch);

struct CleanPosterior {
  int id = 0;
  double p_loss = 0;
  double p_conf = 0;
  double lambda = 0;
  bool is_clean = false;
};

struct DetectionConfig {
  DecisionKind decision = DecisionKind::hard;
  TemperatureSchedule schedule;
  bool normalize_loss = true;  // min-max normalize losses before the fit
  GmmOptions gmm;
};

struct DetectionPass {
  int epoch = 0;
  std::vector<PerSampleStats> stats;
  GmmFit loss_fit;
  GmmFit conf_fit;
  std::vector<CleanPosterior> posteriors;
  std::vector<int> non_finite_ids;  // excluded from the fits, lambda = 0.5
  bool degenerate() const { return loss_fit.degenerate || conf_fit.degenerate; }
};

// One evaluation pass over the training set: per-sample CE loss against the
// observed label plus prediction confidence. No rotation, no updates.
std::vector<PerSampleStats> collect_stats(const nn::TwoHeadNetwork<float>& net,
                                          const std::vector<SampleRecord>& train,
                                          const NormStats& norm, int epoch,
                                          int threads = 1, int batch_size = 256);

// Fits both GMMs and applies the configured decision rule.
DetectionPass run_detection(std::vector<PerSampleStats> stats,
                            const DetectionConfig& cfg, int epoch);

struct DetectionMetrics {
  double clean_prediction_accuracy = 0;  // decision matches !is_noisy
  double predicted_clean_fraction = 0;
  // Confusion counts with "clean" as the positive class.
  int64_t true_clean = 0, false_clean = 0, true_noisy = 0, false_noisy = 0;
};

DetectionMetrics detection_metrics(const std::vector<CleanPosterior>& posteriors,
                                   const std::vector<char>& is_noisy_truth);

// epoch,id,ce_loss,confidence,p_loss,p_conf,lambda,is_clean,is_noisy_truth
std::string detection_dump_csv(const DetectionPass& pass,
                               const std::vector<char>& is_noisy_truth);

struct DetectionDumpRow {
  int epoch = 0;
  int id = 0;
  double ce_loss = 0, confidence = 0, p_loss = 0, p_conf = 0, lambda = 0;
  bool is_clean = false;
  bool is_noisy_truth = false;
};
std::vector<DetectionDumpRow> parse_detection_dump(const std::string& csv);

}  // namespace noisylab
