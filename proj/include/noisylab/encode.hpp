#pragma once

#include <vector>

#include "noisylab/dataset.hpp"
#include "noisylab/nn.hpp"

namespace noisylab {

// Batch rows in the network's input layout: channel-planar pixels mapped
// through (x/255 - mean[c]) / std[c].
template <class S = float>
nn::Mat<S> input_matrix(const std::vector<const Image*>& images,
                        const NormStats& norm) {
  if (images.empty()) return nn::Mat<S>(0, 0);
  const Image& first = *images[0];
  const int plane = first.h * first.w;
  nn::Mat<S> X(static_cast<Eigen::Index>(images.size()), plane * first.c);
  for (size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.h != first.h || img.w != first.w || img.c != first.c)
      throw InputError("input_matrix: mixed image shapes in one batch");
    for (int c = 0; c < img.c; ++c) {
      const double inv = 1.0 / (255.0 * norm.stddev[c]);
      const double off = norm.mean[c] / norm.stddev[c];
      const uint8_t* src = img.pix.data() + static_cast<size_t>(c) * plane;
      S* dst = X.data() + static_cast<int64_t>(i) * X.cols() + static_cast<int64_t>(c) * plane;
      for (int p = 0; p < plane; ++p)
        dst[p] = static_cast<S>(src[p] * inv - off);
    }
  }
  return X;
}

}  // namespace noisylab
