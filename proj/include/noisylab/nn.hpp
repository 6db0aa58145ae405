#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "noisylab/common.hpp"

namespace noisylab::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Small convolutional trunk: per conv layer 3x3/pad-1 convolution, ReLU,
// 2x2/stride-2 max pool; then one hidden fully-connected layer feeding two
// parallel linear heads that share the trunk feature vector.
struct NetArch {
  int in_h = 32, in_w = 32, in_c = 3;
  std::vector<int> conv_channels{8, 16};
  int hidden_dim = 64;
  int n_classes = 10;
  int n_rot = 4;

  int n_conv() const { return static_cast<int>(conv_channels.size()); }
  int pooled_h() const { return in_h >> n_conv(); }
  int pooled_w() const { return in_w >> n_conv(); }
  int feature_dim() const {
    return pooled_h() * pooled_w() * (conv_channels.empty() ? in_c : conv_channels.back());
  }
  int input_len() const { return in_h * in_w * in_c; }

  void validate() const {
    if (in_h <= 0 || in_w <= 0 || in_c <= 0)
      throw InputError("arch: invalid input shape");
    if (n_classes != 10) throw InputError("arch: class head must have 10 outputs");
    if (n_rot != 4) throw InputError("arch: rotation head must have 4 outputs");
    if (hidden_dim <= 0) throw InputError("arch: hidden_dim must be positive");
    if (conv_channels.empty()) throw InputError("arch: at least one conv layer required");
    int h = in_h, w = in_w;
    for (int c : conv_channels) {
      if (c <= 0) throw InputError("arch: conv channels must be positive");
      if (h % 2 != 0 || w % 2 != 0)
        throw InputError("arch: spatial size must halve at every pool");
      h /= 2;
      w /= 2;
    }
  }

  bool operator==(const NetArch&) const = default;
};

// Parameter blocks in checkpoint order:
//   conv0.w, conv0.b, conv1.w, conv1.b, ..., fc.w, fc.b, class.w, class.b,
//   rot.w, rot.b
// Conv weights are stored (9*C_in) x C_out with row index k*C_in + c_in,
// k being the 3x3 tap in row-major order; biases are 1 x C rows.
struct BlockShape {
  std::string name;
  int rows = 0, cols = 0;
};

inline std::vector<BlockShape> block_shapes(const NetArch& a) {
  std::vector<BlockShape> out;
  int cin = a.in_c;
  for (int l = 0; l < a.n_conv(); ++l) {
    const int cout = a.conv_channels[l];
    out.push_back({"conv" + std::to_string(l) + ".w", 9 * cin, cout});
    out.push_back({"conv" + std::to_string(l) + ".b", 1, cout});
    cin = cout;
  }
  out.push_back({"fc.w", a.feature_dim(), a.hidden_dim});
  out.push_back({"fc.b", 1, a.hidden_dim});
  out.push_back({"class.w", a.hidden_dim, a.n_classes});
  out.push_back({"class.b", 1, a.n_classes});
  out.push_back({"rot.w", a.hidden_dim, a.n_rot});
  out.push_back({"rot.b", 1, a.n_rot});
  return out;
}

template <class S>
struct ParamBlocks {
  std::vector<Mat<S>> m;

  static ParamBlocks zeros(const NetArch& a) {
    ParamBlocks p;
    for (const auto& s : block_shapes(a)) p.m.push_back(Mat<S>::Zero(s.rows, s.cols));
    return p;
  }
  void set_zero() {
    for (auto& b : m) b.setZero();
  }
  int64_t count() const {
    int64_t n = 0;
    for (const auto& b : m) n += b.size();
    return n;
  }
  template <class T>
  ParamBlocks<T> cast() const {
    ParamBlocks<T> out;
    out.m.reserve(m.size());
    for (const auto& b : m) out.m.push_back(b.template cast<T>());
    return out;
  }
};

template <class S>
struct TwoHeadNetwork {
  NetArch arch;
  ParamBlocks<S> params;

  // Block index helpers.
  Mat<S>& conv_w(int l) { return params.m[2 * l]; }
  Mat<S>& conv_b(int l) { return params.m[2 * l + 1]; }
  const Mat<S>& conv_w(int l) const { return params.m[2 * l]; }
  const Mat<S>& conv_b(int l) const { return params.m[2 * l + 1]; }
  int fc_base() const { return 2 * arch.n_conv(); }
  Mat<S>& fc_w() { return params.m[fc_base()]; }
  Mat<S>& fc_b() { return params.m[fc_base() + 1]; }
  Mat<S>& class_w() { return params.m[fc_base() + 2]; }
  Mat<S>& class_b() { return params.m[fc_base() + 3]; }
  Mat<S>& rot_w() { return params.m[fc_base() + 4]; }
  Mat<S>& rot_b() { return params.m[fc_base() + 5]; }
  const Mat<S>& fc_w() const { return params.m[fc_base()]; }
  const Mat<S>& fc_b() const { return params.m[fc_base() + 1]; }
  const Mat<S>& class_w() const { return params.m[fc_base() + 2]; }
  const Mat<S>& class_b() const { return params.m[fc_base() + 3]; }
  const Mat<S>& rot_w() const { return params.m[fc_base() + 4]; }
  const Mat<S>& rot_b() const { return params.m[fc_base() + 5]; }

  template <class T>
  TwoHeadNetwork<T> cast() const {
    return {arch, params.template cast<T>()};
  }
};

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
// Draws happen in double in block order, so float and double nets from the
// same seed agree up to rounding.
template <class S>
TwoHeadNetwork<S> init_network(const NetArch& arch, uint64_t seed) {
  arch.validate();
  TwoHeadNetwork<S> net{arch, ParamBlocks<S>::zeros(arch)};
  Rng rng(derive_seed(seed, /*stream=*/0x1417));
  const auto shapes = block_shapes(arch);
  for (size_t b = 0; b < shapes.size(); ++b) {
    if (shapes[b].name.ends_with(".b")) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(shapes[b].rows));
    Mat<S>& w = net.params.m[b];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
  }
  return net;
}

template <class S>
struct ForwardCache {
  struct ConvCache {
    Mat<S> input;   // (B*H*W) x C_in, position-major
    Mat<S> col;     // (B*H*W) x (9*C_in)
    Mat<S> act;     // post-ReLU, (B*H*W) x C_out
    Mat<S> pooled;  // (B*(H/2)*(W/2)) x C_out
    std::vector<int> argmax;  // winning input row per (pooled row, channel)
    int h = 0, w = 0;         // spatial size at layer input
  };
  std::vector<ConvCache> conv;
  Mat<S> flat;          // B x feature_dim
  Mat<S> hidden;        // post-ReLU, B x hidden_dim
  Mat<S> class_logits;  // B x 10
  Mat<S> rot_logits;    // B x 4
  int batch = 0;
};

namespace detail {

// col(row, k*C + c) = input(neighbor row for tap k, c); zero outside the image.
template <class S>
void im2col(const Mat<S>& in, int b0, int b1, int h, int w, int c, Mat<S>& col) {
  for (int b = b0; b < b1; ++b) {
    const int base = b * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int row = base + y * w + x;
        for (int ky = -1; ky <= 1; ++ky)
          for (int kx = -1; kx <= 1; ++kx) {
            const int k = (ky + 1) * 3 + (kx + 1);
            const int yy = y + ky, xx = x + kx;
            S* dst = col.data() + static_cast<int64_t>(row) * col.cols() + k * c;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
              std::memset(dst, 0, sizeof(S) * c);
            } else {
              const S* src =
                  in.data() + static_cast<int64_t>(base + yy * w + xx) * c;
              std::memcpy(dst, src, sizeof(S) * c);
            }
          }
      }
  }
}

// Scatter-add inverse of im2col.
template <class S>
void col2im(const Mat<S>& col, int b0, int b1, int h, int w, int c, Mat<S>& din) {
  for (int b = b0; b < b1; ++b) {
    const int base = b * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int row = base + y * w + x;
        for (int ky = -1; ky <= 1; ++ky)
          for (int kx = -1; kx <= 1; ++kx) {
            const int yy = y + ky, xx = x + kx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const int k = (ky + 1) * 3 + (kx + 1);
            const S* src = col.data() + static_cast<int64_t>(row) * col.cols() + k * c;
            S* dst = din.data() + static_cast<int64_t>(base + yy * w + xx) * c;
            for (int i = 0; i < c; ++i) dst[i] += src[i];
          }
      }
  }
}

}  // namespace detail

// Forward pass over a batch. X rows are channel-planar images (the CIFAR
// byte order), already normalized. Deterministic for a fixed thread count;
// thread chunking never splits a sample.
template <class S>
void forward(const TwoHeadNetwork<S>& net, const Mat<S>& X, ForwardCache<S>& cache,
             int threads = 1) {
  const NetArch& a = net.arch;
  if (X.cols() != a.input_len())
    throw InputError("forward: input row length " + std::to_string(X.cols()) +
                     " does not match architecture input " +
                     std::to_string(a.input_len()));
  const int B = static_cast<int>(X.rows());
  cache.batch = B;
  cache.conv.resize(a.n_conv());

  // Re-layout to position-major rows.
  int h = a.in_h, w = a.in_w, c = a.in_c;
  {
    Mat<S>& in0 = cache.conv[0].input;
    in0.resize(static_cast<int64_t>(B) * h * w, c);
    parallel_chunks(B, threads, [&](int, int s0, int s1) {
      for (int b = s0; b < s1; ++b)
        for (int ch = 0; ch < c; ++ch)
          for (int p = 0; p < h * w; ++p)
            in0(static_cast<int64_t>(b) * h * w + p, ch) = X(b, ch * h * w + p);
    });
  }

  for (int l = 0; l < a.n_conv(); ++l) {
    auto& cc = cache.conv[l];
    cc.h = h;
    cc.w = w;
    const int cout = a.conv_channels[l];
    cc.col.resize(static_cast<int64_t>(B) * h * w, 9 * c);
    cc.act.resize(static_cast<int64_t>(B) * h * w, cout);
    const int ph = h / 2, pw = w / 2;
    cc.pooled.resize(static_cast<int64_t>(B) * ph * pw, cout);
    cc.argmax.assign(static_cast<size_t>(B) * ph * pw * cout, 0);
    const Mat<S>& W = net.conv_w(l);
    const Mat<S>& bias = net.conv_b(l);
    parallel_chunks(B, threads, [&](int, int s0, int s1) {
      detail::im2col(cc.input, s0, s1, h, w, c, cc.col);
      const int64_t r0 = static_cast<int64_t>(s0) * h * w;
      const int64_t nr = static_cast<int64_t>(s1 - s0) * h * w;
      cc.act.middleRows(r0, nr).noalias() = cc.col.middleRows(r0, nr) * W;
      cc.act.middleRows(r0, nr).rowwise() += bias.row(0);
      cc.act.middleRows(r0, nr) = cc.act.middleRows(r0, nr).cwiseMax(S(0));
      // 2x2 max pool with argmax bookkeeping.
      for (int b = s0; b < s1; ++b)
        for (int y = 0; y < ph; ++y)
          for (int x = 0; x < pw; ++x) {
            const int64_t orow = (static_cast<int64_t>(b) * ph + y) * pw + x;
            const int64_t i00 = (static_cast<int64_t>(b) * h + 2 * y) * w + 2 * x;
            const int64_t rows[4] = {i00, i00 + 1, i00 + w, i00 + w + 1};
            for (int ch = 0; ch < cout; ++ch) {
              S best = cc.act(rows[0], ch);
              int besti = 0;
              for (int q = 1; q < 4; ++q)
                if (cc.act(rows[q], ch) > best) {
                  best = cc.act(rows[q], ch);
                  besti = q;
                }
              cc.pooled(orow, ch) = best;
              cc.argmax[orow * cout + ch] = static_cast<int>(rows[besti]);
            }
          }
    });
    if (l + 1 < a.n_conv()) cache.conv[l + 1].input = cc.pooled;
    h = ph;
    w = pw;
    c = cout;
  }

  // Flatten: pooled rows of one sample are contiguous row-major scalars.
  const int feat = a.feature_dim();
  cache.flat.resize(B, feat);
  if (a.n_conv() > 0) {
    const Mat<S>& last = cache.conv.back().pooled;
    parallel_chunks(B, threads, [&](int, int s0, int s1) {
      for (int b = s0; b < s1; ++b)
        std::memcpy(cache.flat.data() + static_cast<int64_t>(b) * feat,
                    last.data() + static_cast<int64_t>(b) * feat, sizeof(S) * feat);
    });
  }

  cache.hidden.noalias() = cache.flat * net.fc_w();
  cache.hidden.rowwise() += net.fc_b().row(0);
  cache.hidden = cache.hidden.cwiseMax(S(0));
  cache.class_logits.noalias() = cache.hidden * net.class_w();
  cache.class_logits.rowwise() += net.class_b().row(0);
  cache.rot_logits.noalias() = cache.hidden * net.rot_w();
  cache.rot_logits.rowwise() += net.rot_b().row(0);
  if (!cache.class_logits.allFinite() || !cache.rot_logits.allFinite())
    throw NumericError("forward: non-finite logits");
}

// Per-sample -log softmax(logits)[label], max-subtracted, accumulated in
// double regardless of S.
template <class S>
std::vector<double> softmax_cross_entropy(const Mat<S>& logits,
                                          const std::vector<int>& labels) {
  const int B = static_cast<int>(logits.rows());
  const int K = static_cast<int>(logits.cols());
  if (static_cast<int>(labels.size()) != B)
    throw InputError("softmax_cross_entropy: label count mismatch");
  std::vector<double> out(B);
  for (int i = 0; i < B; ++i) {
    if (labels[i] < 0 || labels[i] >= K)
      throw InputError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range [0," + std::to_string(K) + ")");
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits(i, k)));
    double denom = 0;
    for (int k = 0; k < K; ++k)
      denom += std::exp(static_cast<double>(logits(i, k)) - mx);
    out[i] = -(static_cast<double>(logits(i, labels[i])) - mx - std::log(denom));
    if (out[i] < 0 && out[i] > -1e-12) out[i] = 0;  // clip tiny negative round-off
  }
  return out;
}

// Softmax per row, computed in double.
template <class S>
Mat<double> softmax_rows(const Mat<S>& logits) {
  Mat<double> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < logits.cols(); ++k)
      mx = std::max(mx, static_cast<double>(logits(i, k)));
    double s = 0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      p(i, k) = std::exp(static_cast<double>(logits(i, k)) - mx);
      s += p(i, k);
    }
    p.row(i) /= s;
  }
  return p;
}

struct Prediction {
  std::vector<int> label;
  std::vector<double> confidence;  // max softmax probability
};

// Argmax with lowest-index tie-break; confidence is the max softmax entry.
template <class S>
Prediction predict_confidence(const Mat<S>& class_logits) {
  if (!class_logits.allFinite())
    throw InputError("predict_confidence: non-finite logits");
  const Mat<double> p = softmax_rows(class_logits);
  Prediction out;
  out.label.resize(p.rows());
  out.confidence.resize(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k)
      if (p(i, k) > p(i, best)) best = static_cast<int>(k);
    out.label[i] = best;
    out.confidence[i] = p(i, best);
  }
  return out;
}

// Backward for the composite objective
//   L = (1/B) * sum_i [ cw_i * CE(class_i) + rw_i * CE(rot_i) ].
// Prior forward() on the same cache is required. Gradients are written
// into `grads` (overwritten, not accumulated).
template <class S>
void backward(const TwoHeadNetwork<S>& net, ForwardCache<S>& cache,
              const std::vector<int>& y_class, const std::vector<int>& y_rot,
              const std::vector<double>& class_weight,
              const std::vector<double>& rot_weight, ParamBlocks<S>& grads,
              int threads = 1) {
  const NetArch& a = net.arch;
  const int B = cache.batch;
  if (static_cast<int>(y_class.size()) != B ||
      static_cast<int>(class_weight.size()) != B ||
      static_cast<int>(rot_weight.size()) != B)
    throw InputError("backward: batch size mismatch");
  if (grads.m.empty()) grads = ParamBlocks<S>::zeros(a);

  // d(logits) rows: w_i/B * (softmax - onehot).
  Mat<S> dclass = Mat<S>::Zero(B, a.n_classes);
  Mat<S> drot = Mat<S>::Zero(B, a.n_rot);
  const Mat<double> pc = softmax_rows(cache.class_logits);
  const Mat<double> pr = softmax_rows(cache.rot_logits);
  for (int i = 0; i < B; ++i) {
    if (class_weight[i] != 0.0) {
      const double s = class_weight[i] / B;
      for (int k = 0; k < a.n_classes; ++k)
        dclass(i, k) = static_cast<S>(s * (pc(i, k) - (k == y_class[i] ? 1.0 : 0.0)));
    }
    if (rot_weight[i] != 0.0) {
      if (y_rot[i] < 0 || y_rot[i] >= a.n_rot)
        throw InputError("backward: rotation label out of range");
      const double s = rot_weight[i] / B;
      for (int k = 0; k < a.n_rot; ++k)
        drot(i, k) = static_cast<S>(s * (pr(i, k) - (k == y_rot[i] ? 1.0 : 0.0)));
    }
  }

  const int fb = net.fc_base();
  const int T = std::max(1, std::min(threads, B));
  std::vector<ParamBlocks<S>> partial(T, ParamBlocks<S>::zeros(a));

  // Head and fully-connected stage, chunked over samples.
  Mat<S> dhidden(B, a.hidden_dim);
  Mat<S> dflat(B, a.feature_dim());
  parallel_chunks(B, T, [&](int tid, int s0, int s1) {
    const int n = s1 - s0;
    auto& g = partial[tid];
    g.m[fb + 2].noalias() = cache.hidden.middleRows(s0, n).transpose() *
                            dclass.middleRows(s0, n);
    g.m[fb + 3].row(0) = dclass.middleRows(s0, n).colwise().sum();
    g.m[fb + 4].noalias() = cache.hidden.middleRows(s0, n).transpose() *
                            drot.middleRows(s0, n);
    g.m[fb + 5].row(0) = drot.middleRows(s0, n).colwise().sum();
    dhidden.middleRows(s0, n).noalias() =
        dclass.middleRows(s0, n) * net.class_w().transpose();
    dhidden.middleRows(s0, n).noalias() +=
        drot.middleRows(s0, n) * net.rot_w().transpose();
    dhidden.middleRows(s0, n).array() *=
        (cache.hidden.middleRows(s0, n).array() > S(0)).template cast<S>();
    g.m[fb].noalias() =
        cache.flat.middleRows(s0, n).transpose() * dhidden.middleRows(s0, n);
    g.m[fb + 1].row(0) = dhidden.middleRows(s0, n).colwise().sum();
    dflat.middleRows(s0, n).noalias() =
        dhidden.middleRows(s0, n) * net.fc_w().transpose();
  });

  // Convolution stack, walked backwards.
  Mat<S> dpooled;
  {
    // Un-flatten into the last pooled gradient.
    const int feat = a.feature_dim();
    const auto& last = cache.conv.back();
    const int cout = a.conv_channels.back();
    dpooled.resize(static_cast<int64_t>(B) * (last.h / 2) * (last.w / 2), cout);
    parallel_chunks(B, T, [&](int, int s0, int s1) {
      for (int b = s0; b < s1; ++b)
        std::memcpy(dpooled.data() + static_cast<int64_t>(b) * feat,
                    dflat.data() + static_cast<int64_t>(b) * feat, sizeof(S) * feat);
    });
  }

  for (int l = a.n_conv() - 1; l >= 0; --l) {
    auto& cc = cache.conv[l];
    const int cout = a.conv_channels[l];
    const int cin = (l == 0) ? a.in_c : a.conv_channels[l - 1];
    const int h = cc.h, w = cc.w, ph = h / 2, pw = w / 2;
    Mat<S> dz = Mat<S>::Zero(static_cast<int64_t>(B) * h * w, cout);
    Mat<S> din;
    const bool need_din = l > 0;
    if (need_din) din = Mat<S>::Zero(static_cast<int64_t>(B) * h * w, cin);
    Mat<S> dcol(static_cast<int64_t>(B) * h * w, 9 * cin);
    parallel_chunks(B, T, [&](int tid, int s0, int s1) {
      auto& g = partial[tid];
      // Pool backward: route gradient to the recorded argmax row.
      for (int b = s0; b < s1; ++b)
        for (int y = 0; y < ph; ++y)
          for (int x = 0; x < pw; ++x) {
            const int64_t orow = (static_cast<int64_t>(b) * ph + y) * pw + x;
            for (int ch = 0; ch < cout; ++ch)
              dz(cc.argmax[orow * cout + ch], ch) += dpooled(orow, ch);
          }
      const int64_t r0 = static_cast<int64_t>(s0) * h * w;
      const int64_t nr = static_cast<int64_t>(s1 - s0) * h * w;
      // ReLU mask (act is post-ReLU; positive iff pre-activation positive).
      dz.middleRows(r0, nr).array() *=
          (cc.act.middleRows(r0, nr).array() > S(0)).template cast<S>();
      g.m[2 * l].noalias() =
          cc.col.middleRows(r0, nr).transpose() * dz.middleRows(r0, nr);
      g.m[2 * l + 1].row(0) = dz.middleRows(r0, nr).colwise().sum();
      if (need_din) {
        dcol.middleRows(r0, nr).noalias() =
            dz.middleRows(r0, nr) * net.conv_w(l).transpose();
        detail::col2im(dcol, s0, s1, h, w, cin, din);
      }
    });
    if (need_din) {
      // Becomes the pooled-gradient of the previous layer.
      dpooled = std::move(din);
    }
  }

  // Ordered reduction over per-thread partial gradients.
  grads.set_zero();
  for (int t = 0; t < T; ++t)
    for (size_t b = 0; b < grads.m.size(); ++b) grads.m[b] += partial[t].m[b];
}

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 128;
  double weight_decay = 0.0;

  void validate() const {
    if (learning_rate < 0) throw InputError("sgd: learning_rate must be >= 0");
    if (momentum < 0 || momentum >= 1) throw InputError("sgd: momentum must be in [0,1)");
    if (batch_size < 1) throw InputError("sgd: batch_size must be >= 1");
    if (weight_decay < 0) throw InputError("sgd: weight_decay must be >= 0");
  }
};

template <class S>
struct SgdState {
  ParamBlocks<S> velocity;
};

// v <- momentum*v + g + wd*p ; p <- p - lr*v. Non-finite gradients abort
// with the offending block named.
template <class S>
void sgd_step(TwoHeadNetwork<S>& net, const ParamBlocks<S>& grads, SgdState<S>& state,
              const SgdConfig& cfg) {
  if (state.velocity.m.empty()) state.velocity = ParamBlocks<S>::zeros(net.arch);
  const auto shapes = block_shapes(net.arch);
  const S lr = static_cast<S>(cfg.learning_rate);
  const S mu = static_cast<S>(cfg.momentum);
  const S wd = static_cast<S>(cfg.weight_decay);
  for (size_t b = 0; b < net.params.m.size(); ++b) {
    if (!grads.m[b].allFinite())
      throw NumericError("sgd: non-finite gradient in block " + shapes[b].name);
    Mat<S>& v = state.velocity.m[b];
    Mat<S>& p = net.params.m[b];
    if (wd != S(0))
      v = mu * v + grads.m[b] + wd * p;
    else
      v = mu * v + grads.m[b];
    p -= lr * v;
    if (!p.allFinite())
      throw NumericError("sgd: non-finite parameters in block " + shapes[b].name);
  }
}

struct LossBundle {
  double class_loss = 0;  // batch mean, nats
  double rot_loss = 0;    // batch mean, nats
  double total = 0;       // active composite objective, batch mean
  std::vector<double> per_sample_class_loss;
};

// ---- Checkpoint format ----
// "NLAB" | u32 version | u32 in_h,in_w,in_c,n_conv | u32 channels[n_conv]
// | u32 hidden,n_classes,n_rot | blocks as row-major little-endian f32.
inline constexpr uint32_t kCheckpointVersion = 1;

template <class S>
void save_checkpoint(const std::filesystem::path& path,
                     const TwoHeadNetwork<S>& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("checkpoint: cannot open for writing " + path.string());
  auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  out.write("NLAB", 4);
  put_u32(kCheckpointVersion);
  const NetArch& a = net.arch;
  put_u32(static_cast<uint32_t>(a.in_h));
  put_u32(static_cast<uint32_t>(a.in_w));
  put_u32(static_cast<uint32_t>(a.in_c));
  put_u32(static_cast<uint32_t>(a.n_conv()));
  for (int c : a.conv_channels) put_u32(static_cast<uint32_t>(c));
  put_u32(static_cast<uint32_t>(a.hidden_dim));
  put_u32(static_cast<uint32_t>(a.n_classes));
  put_u32(static_cast<uint32_t>(a.n_rot));
  std::vector<float> buf;
  for (const auto& blk : net.params.m) {
    buf.resize(blk.size());
    for (Eigen::Index i = 0; i < blk.rows(); ++i)
      for (Eigen::Index j = 0; j < blk.cols(); ++j)
        buf[static_cast<size_t>(i) * blk.cols() + j] = static_cast<float>(blk(i, j));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw InputError("checkpoint: write failed " + path.string());
}

template <class S = float>
TwoHeadNetwork<S> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "NLAB")
    throw InputError("checkpoint: bad magic in " + path.string());
  auto get_u32 = [&]() {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw InputError("checkpoint: truncated header in " + path.string());
    return v;
  };
  const uint32_t version = get_u32();
  if (version != kCheckpointVersion)
    throw InputError("checkpoint: unsupported version " + std::to_string(version) +
                     " in " + path.string());
  NetArch a;
  a.in_h = static_cast<int>(get_u32());
  a.in_w = static_cast<int>(get_u32());
  a.in_c = static_cast<int>(get_u32());
  const uint32_t n_conv = get_u32();
  a.conv_channels.resize(n_conv);
  for (auto& c : a.conv_channels) c = static_cast<int>(get_u32());
  a.hidden_dim = static_cast<int>(get_u32());
  a.n_classes = static_cast<int>(get_u32());
  a.n_rot = static_cast<int>(get_u32());
  a.validate();
  TwoHeadNetwork<S> net{a, ParamBlocks<S>::zeros(a)};
  std::vector<float> buf;
  for (auto& blk : net.params.m) {
    buf.resize(blk.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in)
      throw InputError("checkpoint: truncated parameter data in " + path.string());
    for (Eigen::Index i = 0; i < blk.rows(); ++i)
      for (Eigen::Index j = 0; j < blk.cols(); ++j)
        blk(i, j) = static_cast<S>(buf[static_cast<size_t>(i) * blk.cols() + j]);
  }
  in.peek();
  if (!in.eof())
    throw InputError("checkpoint: trailing bytes in " + path.string());
  return net;
}

}  // namespace noisylab::nn
