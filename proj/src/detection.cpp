#include "noisylab/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "noisylab/encode.hpp"

namespace noisylab {

namespace {

double log_normal_pdf(double x, double mu, double var) {
  const double d = x - mu;
  return -0.5 * (std::log(2.0 * M_PI * var) + d * d / var);
}

// log(w1*N1 + w2*N2) via the usual max-shift.
double log_mix_pdf(const GmmModel& g, double x) {
  const double a = std::log(g.w1) + log_normal_pdf(x, g.mu1, g.var1);
  const double b = std::log(g.w2) + log_normal_pdf(x, g.mu2, g.var2);
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct EmState {
  double w1, mu1, var1;
  double w2, mu2, var2;
};

// One EM run from the given initial state. Appends per-iteration
// log-likelihood to `trace` and returns the final state.
EmState run_em(const std::vector<double>& v, EmState st, const GmmOptions& opt,
               double var_floor, std::vector<double>& trace, int& iterations) {
  const size_t n = v.size();
  std::vector<double> r1(n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iters; ++it) {
    // E step.
    double ll = 0;
    for (size_t i = 0; i < n; ++i) {
      const double a = std::log(st.w1) + log_normal_pdf(v[i], st.mu1, st.var1);
      const double b = std::log(st.w2) + log_normal_pdf(v[i], st.mu2, st.var2);
      const double m = std::max(a, b);
      const double ea = std::exp(a - m), eb = std::exp(b - m);
      r1[i] = ea / (ea + eb);
      ll += m + std::log(ea + eb);
    }
    trace.push_back(ll);
    ++iterations;
    // M step.
    double n1 = 0, s1 = 0, s2 = 0;
    for (size_t i = 0; i < n; ++i) {
      n1 += r1[i];
      s1 += r1[i] * v[i];
      s2 += (1.0 - r1[i]) * v[i];
    }
    const double n2 = static_cast<double>(n) - n1;
    if (n1 < 1e-10 || n2 < 1e-10) break;  // a component emptied out
    const double mu1 = s1 / n1, mu2 = s2 / n2;
    double q1 = 0, q2 = 0;
    for (size_t i = 0; i < n; ++i) {
      q1 += r1[i] * (v[i] - mu1) * (v[i] - mu1);
      q2 += (1.0 - r1[i]) * (v[i] - mu2) * (v[i] - mu2);
    }
    st.w1 = n1 / static_cast<double>(n);
    st.w2 = n2 / static_cast<double>(n);
    st.mu1 = mu1;
    st.mu2 = mu2;
    st.var1 = std::max(q1 / n1, var_floor);
    st.var2 = std::max(q2 / n2, var_floor);
    if (it > 0 && ll - prev_ll < opt.tol) break;
    prev_ll = ll;
  }
  // Likelihood of the state actually returned (one M step past the last
  // E-step evaluation).
  GmmModel snapshot{st.w1, st.w2, st.mu1, st.mu2, st.var1, st.var2, 1,
                    GmmFeature::loss};
  double final_ll = 0;
  for (double x : v) final_ll += log_mix_pdf(snapshot, x);
  trace.push_back(final_ll);
  return st;
}

EmState moments_split(const std::vector<double>& sorted, size_t lo_end,
                      double var_floor) {
  // Components from the value ranges [0, lo_end) and [lo_end, n).
  auto moments = [&](size_t b, size_t e) {
    double mean = 0;
    for (size_t i = b; i < e; ++i) mean += sorted[i];
    mean /= static_cast<double>(e - b);
    double var = 0;
    for (size_t i = b; i < e; ++i) var += (sorted[i] - mean) * (sorted[i] - mean);
    var = std::max(var / static_cast<double>(e - b), var_floor);
    return std::pair<double, double>{mean, var};
  };
  const size_t n = sorted.size();
  auto [m1, v1] = moments(0, lo_end);
  auto [m2, v2] = moments(lo_end, n);
  return {static_cast<double>(lo_end) / n, m1, v1,
          static_cast<double>(n - lo_end) / n, m2, v2};
}

GmmFit degenerate_fit(const std::vector<double>& values, GmmFeature feature) {
  GmmFit fit;
  fit.degenerate = true;
  double mean = 0;
  for (double v : values) mean += v;
  if (!values.empty()) mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var = values.empty() ? 1e-12 : std::max(var / values.size(), 1e-12);
  fit.model = {0.5, 0.5, mean, mean, var, var, 1, feature};
  return fit;
}

}  // namespace

GmmFit fit_gmm_1d(const std::vector<double>& values, GmmFeature feature,
                  const GmmOptions& opt) {
  if (opt.max_iters < 1) throw InputError("fit_gmm_1d: max_iters must be >= 1");
  for (double v : values)
    if (!std::isfinite(v)) throw InputError("fit_gmm_1d: non-finite value");
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const bool no_spread = sorted.empty() || sorted.front() == sorted.back();
  if (sorted.size() < 4 || no_spread) return degenerate_fit(values, feature);

  double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / sorted.size();
  double sample_var = 0;
  for (double v : sorted) sample_var += (v - mean) * (v - mean);
  sample_var /= static_cast<double>(sorted.size());
  const double var_floor = std::max(opt.var_floor_rel * sample_var, 1e-300);

  // Two restarts: median split and 25/75 quantile split.
  const size_t n = sorted.size();
  const std::array<size_t, 2> cuts{n / 2, std::max<size_t>(1, n / 4)};
  GmmFit best;
  bool have_best = false;
  for (size_t cut : cuts) {
    cut = std::clamp<size_t>(cut, 1, n - 1);
    GmmFit fit;
    EmState st = run_em(values, moments_split(sorted, cut, var_floor), opt,
                        var_floor, fit.log_likelihood, fit.iterations);
    fit.model.w1 = st.w1;
    fit.model.w2 = st.w2;
    fit.model.mu1 = st.mu1;
    fit.model.mu2 = st.mu2;
    fit.model.var1 = st.var1;
    fit.model.var2 = st.var2;
    fit.model.feature = feature;
    if (!have_best ||
        fit.log_likelihood.back() > best.log_likelihood.back()) {
      best = fit;
      have_best = true;
    }
  }
  GmmModel& m = best.model;
  const bool comp1_clean = (feature == GmmFeature::loss) ? (m.mu1 <= m.mu2)
                                                         : (m.mu1 >= m.mu2);
  m.clean_component = comp1_clean ? 1 : 2;
  return best;
}

double posterior_clean(const GmmModel& g, double value) {
  const double a = std::log(g.w1) + log_normal_pdf(value, g.mu1, g.var1);
  const double b = std::log(g.w2) + log_normal_pdf(value, g.mu2, g.var2);
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  const double r1 = ea / (ea + eb);
  return g.clean_component == 1 ? r1 : 1.0 - r1;
}

double gmm_log_likelihood(const GmmModel& g, const std::vector<double>& values) {
  double ll = 0;
  for (double v : values) ll += log_mix_pdf(g, v);
  return ll;
}

double temperature_at(const TemperatureSchedule& s, int epoch) {
  if (epoch < 0 || epoch > s.total_epochs)
    throw InputError("temperature_at: epoch " + std::to_string(epoch) +
                     " outside [0," + std::to_string(s.total_epochs) + "]");
  if (s.total_epochs == 0) return s.alpha_end;
  const double t = static_cast<double>(epoch) / s.total_epochs;
  return s.alpha_end + 0.5 * (s.alpha_start - s.alpha_end) * (1.0 + std::cos(M_PI * t));
}

Decision decide_loss_only(double p_loss) {
  return {p_loss, p_loss > 0.5};
}

Decision decide_hard(double p_loss, double p_conf) {
  const double lambda = std::min(p_loss, p_conf);
  return {lambda, lambda > 0.5};
}

double smooth_combine(double p_loss, double p_conf, double alpha, double epsilon) {
  if (std::abs(alpha) < epsilon)
    return alpha > 0 ? std::max(p_loss, p_conf) : std::min(p_loss, p_conf);
  // alpha * (logsumexp(a/alpha, b/alpha) - ln 2), stable for small |alpha|.
  const double u = p_loss / alpha, v = p_conf / alpha;
  const double m = std::max(u, v);
  const double lse = m + std::log1p(std::exp(std::min(u, v) - m));
  const double out = alpha * (lse - std::log(2.0));
  return std::clamp(out, 0.0, 1.0);
}

Decision decide_elastic(double p_loss, double p_conf,
                        const TemperatureSchedule& schedule, int epoch) {
  const double alpha = temperature_at(schedule, epoch);
  const double lambda = smooth_combine(p_loss, p_conf, alpha, schedule.epsilon);
  return {lambda, lambda > 0.5};
}

std::vector<PerSampleStats> collect_stats(const nn::TwoHeadNetwork<float>& net,
                                          const std::vector<SampleRecord>& train,
                                          const NormStats& norm, int epoch,
                                          int threads, int batch_size) {
  for (const auto& blk : net.params.m)
    if (!blk.allFinite())
      throw NumericError("collect_stats: non-finite network parameters");
  std::vector<PerSampleStats> out;
  out.reserve(train.size());
  nn::ForwardCache<float> cache;
  for (size_t begin = 0; begin < train.size(); begin += batch_size) {
    const size_t end = std::min(train.size(), begin + batch_size);
    std::vector<const Image*> images;
    std::vector<int> labels;
    images.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) {
      images.push_back(&train[i].image);
      labels.push_back(train[i].observed_label);
    }
    const auto X = input_matrix<float>(images, norm);
    nn::forward(net, X, cache, threads);
    const auto losses = nn::softmax_cross_entropy(cache.class_logits, labels);
    const auto pred = nn::predict_confidence(cache.class_logits);
    for (size_t i = begin; i < end; ++i)
      out.push_back({train[i].id, losses[i - begin], pred.confidence[i - begin],
                     epoch});
  }
  return out;
}

DetectionPass run_detection(std::vector<PerSampleStats> stats,
                            const DetectionConfig& cfg, int epoch) {
  DetectionPass pass;
  pass.epoch = epoch;
  pass.stats = std::move(stats);

  std::vector<size_t> usable;
  usable.reserve(pass.stats.size());
  for (size_t i = 0; i < pass.stats.size(); ++i) {
    if (std::isfinite(pass.stats[i].ce_loss) &&
        std::isfinite(pass.stats[i].confidence))
      usable.push_back(i);
    else
      pass.non_finite_ids.push_back(pass.stats[i].id);
  }

  std::vector<double> losses, confs;
  losses.reserve(usable.size());
  confs.reserve(usable.size());
  for (size_t i : usable) {
    losses.push_back(pass.stats[i].ce_loss);
    confs.push_back(pass.stats[i].confidence);
  }

  // Min-max normalize losses before fitting; confidences are used raw.
  std::vector<double> loss_feat = losses;
  if (cfg.normalize_loss && !losses.empty()) {
    const auto [mn_it, mx_it] = std::minmax_element(losses.begin(), losses.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx > mn)
      for (double& v : loss_feat) v = (v - mn) / (mx - mn);
    else
      for (double& v : loss_feat) v = 0.5;
  }

  pass.loss_fit = fit_gmm_1d(loss_feat, GmmFeature::loss, cfg.gmm);
  pass.conf_fit = fit_gmm_1d(confs, GmmFeature::confidence, cfg.gmm);

  pass.posteriors.resize(pass.stats.size());
  size_t u = 0;
  for (size_t i = 0; i < pass.stats.size(); ++i) {
    CleanPosterior& cp = pass.posteriors[i];
    cp.id = pass.stats[i].id;
    const bool finite = u < usable.size() && usable[u] == i;
    if (!finite) {
      cp.p_loss = cp.p_conf = cp.lambda = 0.5;
      cp.is_clean = false;
      continue;
    }
    cp.p_loss = pass.loss_fit.degenerate
                    ? 0.5
                    : posterior_clean(pass.loss_fit.model, loss_feat[u]);
    cp.p_conf = pass.conf_fit.degenerate
                    ? 0.5
                    : posterior_clean(pass.conf_fit.model, confs[u]);
    Decision d;
    switch (cfg.decision) {
      case DecisionKind::loss_only:
        d = decide_loss_only(cp.p_loss);
        break;
      case DecisionKind::hard:
        d = decide_hard(cp.p_loss, cp.p_conf);
        break;
      case DecisionKind::elastic:
        d = decide_elastic(cp.p_loss, cp.p_conf, cfg.schedule, epoch);
        break;
    }
    cp.lambda = d.lambda;
    cp.is_clean = d.is_clean;
    ++u;
  }
  return pass;
}

DetectionMetrics detection_metrics(const std::vector<CleanPosterior>& posteriors,
                                   const std::vector<char>& is_noisy_truth) {
  if (posteriors.size() != is_noisy_truth.size())
    throw InputError("detection_metrics: size mismatch");
  DetectionMetrics m;
  for (size_t i = 0; i < posteriors.size(); ++i) {
    const bool clean_truth = !is_noisy_truth[i];
    const bool clean_pred = posteriors[i].is_clean;
    if (clean_pred && clean_truth) ++m.true_clean;
    if (clean_pred && !clean_truth) ++m.false_clean;
    if (!clean_pred && !clean_truth) ++m.true_noisy;
    if (!clean_pred && clean_truth) ++m.false_noisy;
  }
  const double n = static_cast<double>(posteriors.size());
  if (n > 0) {
    m.clean_prediction_accuracy = (m.true_clean + m.true_noisy) / n;
    m.predicted_clean_fraction = (m.true_clean + m.false_clean) / n;
  }
  return m;
}

std::string detection_dump_csv(const DetectionPass& pass,
                               const std::vector<char>& is_noisy_truth) {
  if (pass.posteriors.size() != is_noisy_truth.size() ||
      pass.posteriors.size() != pass.stats.size())
    throw InputError("detection_dump_csv: size mismatch");
  std::ostringstream os;
  os << "epoch,id,ce_loss,confidence,p_loss,p_conf,lambda,is_clean,is_noisy_truth\n";
  for (size_t i = 0; i < pass.posteriors.size(); ++i) {
    const auto& st = pass.stats[i];
    const auto& cp = pass.posteriors[i];
    os << pass.epoch << ',' << cp.id << ',' << fmt_fixed(st.ce_loss) << ','
       << fmt_fixed(st.confidence) << ',' << fmt_fixed(cp.p_loss) << ','
       << fmt_fixed(cp.p_conf) << ',' << fmt_fixed(cp.lambda) << ','
       << (cp.is_clean ? 1 : 0) << ',' << (is_noisy_truth[i] ? 1 : 0) << '\n';
  }
  return os.str();
}

std::vector<DetectionDumpRow> parse_detection_dump(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line).size() != 9)
    throw InputError("detection dump: missing or malformed header");
  std::vector<DetectionDumpRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9)
      throw InputError("detection dump: bad row at line " + std::to_string(lineno));
    DetectionDumpRow r;
    r.epoch = std::stoi(f[0]);
    r.id = std::stoi(f[1]);
    r.ce_loss = std::stod(f[2]);
    r.confidence = std::stod(f[3]);
    r.p_loss = std::stod(f[4]);
    r.p_conf = std::stod(f[5]);
    r.lambda = std::stod(f[6]);
    r.is_clean = f[7] == "1";
    r.is_noisy_truth = f[8] == "1";
    rows.push_back(r);
  }
  return rows;
}

}  // namespace noisylab
