#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "noisylab/common.hpp"

namespace noisylab {

// Planar channel-major pixels (all of channel 0, then channel 1, ...),
// rows top to bottom. Matches the CIFAR-10 binary layout.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<uint8_t> pix;

  uint8_t& at(int ch, int y, int x) { return pix[(ch * h + y) * w + x]; }
  uint8_t at(int ch, int y, int x) const { return pix[(ch * h + y) * w + x]; }
  bool operator==(const Image&) const = default;
};

struct SampleRecord {
  int id = 0;
  int true_label = 0;      // held for evaluation only
  int observed_label = 0;  // the only label training/detection may read
  bool is_noisy = false;   // true_label != observed_label
  Image image;
};

struct RotatedSample {
  Image image;
  int rotation_label = 0;  // k quarter-turns counterclockwise, k in {0,1,2,3}
  int source_id = 0;
};

struct SplitSpec {
  int train_count = 45000;
  int val_count = 5000;
  uint64_t seed = 0;
  bool stratified = false;
};

struct Cifar10 {
  std::vector<SampleRecord> train_pool;  // 50000
  std::vector<SampleRecord> test;        // 10000
};

inline constexpr int kCifarDim = 32;
inline constexpr int kCifarChannels = 3;
inline constexpr int kCifarClasses = 10;
inline constexpr int kCifarRecordBytes = 1 + kCifarDim * kCifarDim * kCifarChannels;

// Reads the six standard CIFAR-10 binary batch files from `dir`.
// Throws InputError naming the file (and byte offset, when truncated).
Cifar10 load_cifar10(const std::filesystem::path& dir);

// Reads one batch file of 3073-byte records; `id_base` offsets record ids.
std::vector<SampleRecord> load_cifar10_batch(const std::filesystem::path& file,
                                             int id_base);

// Deterministic partition of the pool into (train, validation).
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(
    const std::vector<SampleRecord>& pool, const SplitSpec& spec);

// Relabels round(rate*N) distinct samples with uniform labels in [0,10).
// The draw may restore the true label unless exclude_true is set;
// is_noisy is recomputed either way.
void inject_noise(std::vector<SampleRecord>& train, double rate, uint64_t seed,
                  bool exclude_true = false);

// Lossless quarter-turn rotation, k*90 degrees counterclockwise.
Image rotate_image(const Image& img, int k);

// One independent uniform rotation per sample.
std::vector<RotatedSample> rotate_batch(const std::vector<SampleRecord>& batch,
                                        Rng& rng);

// All four rotations of one image, in label order 0..3.
std::array<RotatedSample, 4> rotate_all_four(const Image& img, int source_id = 0);

// Class-balanced prefix of `records`: walks samples in order and keeps one
// whenever its observed-label bucket is below ceil(n/10). Returns all
// records when n == 0 or n >= size.
std::vector<SampleRecord> balanced_subset(const std::vector<SampleRecord>& records,
                                          int n);

// Per-channel mean/std of x/255 over a sample set.
struct NormStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};
};
NormStats compute_norm_stats(const std::vector<SampleRecord>& records);

// id,true_label,observed_label,is_noisy — one row per sample, audit artifact.
std::string noise_manifest_csv(const std::vector<SampleRecord>& train);
// Applies observed labels from a manifest back onto freshly loaded records.
void apply_noise_manifest(std::vector<SampleRecord>& records,
                          const std::string& manifest_csv);

std::string ids_csv(const std::vector<SampleRecord>& records);
std::vector<int> parse_ids_csv(const std::string& csv);

}  // namespace noisylab
