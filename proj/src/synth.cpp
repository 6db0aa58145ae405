#include "noisylab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace noisylab {

namespace {

struct Wave {
  double fx, fy, phase, amp;
};

// Three low-frequency waves + a channel base level per (class, channel).
struct ClassTemplate {
  std::array<std::array<Wave, 3>, kCifarChannels> waves;
  std::array<double, kCifarChannels> base;
};

ClassTemplate make_template(const SynthConfig& cfg, int cls) {
  Rng rng(derive_seed(cfg.seed, /*stream=*/0x7E3, static_cast<uint64_t>(cls)));
  ClassTemplate t;
  for (int c = 0; c < kCifarChannels; ++c) {
    t.base[c] = 100.0 + 70.0 * rng.real01();
    for (int j = 0; j < 3; ++j) {
      t.waves[c][j].fx = static_cast<double>(1 + rng.below(3));
      t.waves[c][j].fy = static_cast<double>(1 + rng.below(3));
      t.waves[c][j].phase = 2.0 * M_PI * rng.real01();
      t.waves[c][j].amp = cfg.amplitude * (0.5 + rng.real01());
    }
  }
  return t;
}

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

}  // namespace

Image synth_image(const SynthConfig& cfg, int cls, uint64_t sample_key) {
  static_assert(kCifarDim % 2 == 0);
  const ClassTemplate t = make_template(cfg, cls);
  Rng rng(derive_seed(cfg.seed, /*stream=*/0x5A3, sample_key));
  const int n = kCifarDim;
  const int dx = static_cast<int>(rng.below(2 * cfg.jitter + 1)) - cfg.jitter;
  const int dy = static_cast<int>(rng.below(2 * cfg.jitter + 1)) - cfg.jitter;
  const double contrast = 0.8 + 0.4 * rng.real01();
  Image img;
  img.h = img.w = n;
  img.c = kCifarChannels;
  img.pix.resize(static_cast<size_t>(n) * n * kCifarChannels);
  for (int c = 0; c < kCifarChannels; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double sy = (y + dy + n) % n, sx = (x + dx + n) % n;
        double v = t.base[c];
        for (const Wave& wv : t.waves[c])
          v += contrast * wv.amp *
               std::sin(2.0 * M_PI * (wv.fx * sx + wv.fy * sy) / n + wv.phase);
        // Orientation cue: top rows brighter, bottom rows darker.
        v += cfg.ramp * (0.5 - static_cast<double>(y) / (n - 1)) * 2.0;
        v += cfg.noise_sigma * rng.normal();
        img.at(c, y, x) = clamp_u8(v);
      }
  return img;
}

void write_synthetic_cifar(const std::filesystem::path& dir, const SynthConfig& cfg) {
  std::filesystem::create_directories(dir);
  auto write_file = [&](const std::filesystem::path& path, int n_records,
                        uint64_t key_base) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open for writing: " + path.string());
    Rng label_rng(derive_seed(cfg.seed, /*stream=*/0x1AB, key_base));
    std::vector<char> rec(kCifarRecordBytes);
    for (int i = 0; i < n_records; ++i) {
      const int cls = static_cast<int>(label_rng.below(kCifarClasses));
      const Image img = synth_image(cfg, cls, key_base + static_cast<uint64_t>(i));
      rec[0] = static_cast<char>(cls);
      std::copy(img.pix.begin(), img.pix.end(),
                reinterpret_cast<uint8_t*>(rec.data()) + 1);
      out.write(rec.data(), rec.size());
    }
    if (!out) throw InputError("write failed: " + path.string());
  };
  for (int b = 1; b <= cfg.train_files; ++b)
    write_file(dir / ("data_batch_" + std::to_string(b) + ".bin"),
               cfg.records_per_file, static_cast<uint64_t>(b) << 24);
  write_file(dir / "test_batch.bin", cfg.test_records, uint64_t{99} << 24);
}

}  // namespace noisylab
