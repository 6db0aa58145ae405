#pragma once

#include <cstdint>
#include <filesystem>

#include "noisylab/dataset.hpp"

namespace noisylab {

// Deterministic stand-in dataset written in the exact CIFAR-10 binary
// layout (data_batch_1..5.bin + test_batch.bin, 3073-byte records), for
// environments without the real archive. Each class is a smooth random
// template; samples add positional jitter, contrast scaling and pixel
// noise. Every image carries a top-bright vertical ramp so that the four
// quarter-turn rotations are distinguishable.
struct SynthConfig {
  uint64_t seed = 20240801;
  int train_files = 5;
  int records_per_file = 10000;
  int test_records = 10000;
  double noise_sigma = 18.0;   // additive pixel noise, uint8 scale
  int jitter = 3;              // max |shift| in pixels, toroidal
  double ramp = 26.0;          // orientation cue amplitude
  double amplitude = 34.0;     // template wave amplitude
};

void write_synthetic_cifar(const std::filesystem::path& dir, const SynthConfig& cfg);

// Single sample, exposed for tests.
Image synth_image(const SynthConfig& cfg, int cls, uint64_t sample_key);

}  // namespace noisylab
