#include "noisylab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace noisylab {

std::vector<SampleRecord> load_cifar10_batch(const std::filesystem::path& file,
                                             int id_base) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cifar10: cannot open " + file.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.empty()) throw InputError("cifar10: " + file.string() + " is empty");
  const size_t rec = kCifarRecordBytes;
  if (bytes.size() % rec != 0) {
    const size_t offset = bytes.size() - bytes.size() % rec;
    throw InputError("cifar10: " + file.string() + ": truncated record at byte offset " +
                     std::to_string(offset) + " (file size " +
                     std::to_string(bytes.size()) + ", record size " +
                     std::to_string(rec) + ")");
  }
  const size_t n = bytes.size() / rec;
  std::vector<SampleRecord> out(n);
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes.data()) + i * rec;
    SampleRecord& s = out[i];
    s.id = id_base + static_cast<int>(i);
    s.true_label = p[0];
    if (s.true_label >= kCifarClasses)
      throw InputError("cifar10: " + file.string() + ": label " +
                       std::to_string(s.true_label) + " out of range in record " +
                       std::to_string(i));
    s.observed_label = s.true_label;
    s.is_noisy = false;
    s.image.h = s.image.w = kCifarDim;
    s.image.c = kCifarChannels;
    s.image.pix.assign(p + 1, p + rec);
  }
  return out;
}

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  Cifar10 data;
  data.train_pool.reserve(50000);
  for (int b = 1; b <= 5; ++b) {
    const auto file = dir / ("data_batch_" + std::to_string(b) + ".bin");
    auto recs = load_cifar10_batch(file, (b - 1) * 10000);
    if (recs.size() != 10000)
      throw InputError("cifar10: " + file.string() + ": expected 10000 records, got " +
                       std::to_string(recs.size()));
    data.train_pool.insert(data.train_pool.end(),
                           std::make_move_iterator(recs.begin()),
                           std::make_move_iterator(recs.end()));
  }
  const auto test_file = dir / "test_batch.bin";
  data.test = load_cifar10_batch(test_file, 0);
  if (data.test.size() != 10000)
    throw InputError("cifar10: " + test_file.string() + ": expected 10000 records, got " +
                     std::to_string(data.test.size()));
  return data;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(
    const std::vector<SampleRecord>& pool, const SplitSpec& spec) {
  if (spec.train_count < 0 || spec.val_count < 0 ||
      static_cast<size_t>(spec.train_count) + static_cast<size_t>(spec.val_count) >
          pool.size())
    throw InputError("split: counts " + std::to_string(spec.train_count) + "+" +
                     std::to_string(spec.val_count) + " exceed pool size " +
                     std::to_string(pool.size()));
  Rng rng(derive_seed(spec.seed, /*stream=*/0xA11));
  std::vector<int> order;
  if (!spec.stratified) {
    order.resize(pool.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
  } else {
    // Shuffle within each class, then allocate proportional counts per class
    // (largest remainder), interleaving so prefixes stay near-proportional.
    std::vector<std::vector<int>> by_class(kCifarClasses);
    for (size_t i = 0; i < pool.size(); ++i)
      by_class[pool[i].true_label].push_back(static_cast<int>(i));
    for (auto& v : by_class) rng.shuffle(v);
    std::vector<size_t> cursor(kCifarClasses, 0);
    order.reserve(pool.size());
    bool any = true;
    while (any) {
      any = false;
      for (int c = 0; c < kCifarClasses; ++c) {
        if (cursor[c] < by_class[c].size()) {
          order.push_back(by_class[c][cursor[c]++]);
          any = true;
        }
      }
    }
  }
  std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
  out.first.reserve(spec.train_count);
  out.second.reserve(spec.val_count);
  for (int i = 0; i < spec.train_count; ++i) out.first.push_back(pool[order[i]]);
  for (int i = 0; i < spec.val_count; ++i)
    out.second.push_back(pool[order[spec.train_count + i]]);
  return out;
}

void inject_noise(std::vector<SampleRecord>& train, double rate, uint64_t seed,
                  bool exclude_true) {
  if (rate < 0.0 || rate > 1.0)
    throw InputError("inject_noise: rate " + std::to_string(rate) +
                     " outside [0,1]");
  const auto n = static_cast<int64_t>(train.size());
  const auto m = std::llround(rate * static_cast<double>(n));
  Rng rng(derive_seed(seed, /*stream=*/0xB0B));
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first m entries are a uniform sample
  // without replacement.
  for (int64_t i = 0; i < m; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  for (int64_t i = 0; i < m; ++i) {
    SampleRecord& s = train[idx[i]];
    if (exclude_true) {
      int draw = static_cast<int>(rng.below(kCifarClasses - 1));
      if (draw >= s.true_label) ++draw;
      s.observed_label = draw;
    } else {
      s.observed_label = static_cast<int>(rng.below(kCifarClasses));
    }
  }
  for (auto& s : train) s.is_noisy = s.true_label != s.observed_label;
}

Image rotate_image(const Image& img, int k) {
  if (img.h != img.w)
    throw InputError("rotate_image: image is not square (" + std::to_string(img.h) +
                     "x" + std::to_string(img.w) + ")");
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  const int n = img.h;
  Image out;
  out.h = out.w = n;
  out.c = img.c;
  out.pix.resize(img.pix.size());
  // One counterclockwise quarter turn maps src (y, x) -> dst (n-1-x, y).
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        int dy = y, dx = x;
        for (int t = 0; t < k; ++t) {
          const int ny = n - 1 - dx, nx = dy;
          dy = ny;
          dx = nx;
        }
        out.at(c, dy, dx) = img.at(c, y, x);
      }
  return out;
}

std::vector<RotatedSample> rotate_batch(const std::vector<SampleRecord>& batch,
                                        Rng& rng) {
  std::vector<RotatedSample> out;
  out.reserve(batch.size());
  for (const auto& s : batch) {
    const int k = static_cast<int>(rng.below(4));
    out.push_back({rotate_image(s.image, k), k, s.id});
  }
  return out;
}

std::array<RotatedSample, 4> rotate_all_four(const Image& img, int source_id) {
  std::array<RotatedSample, 4> out;
  for (int k = 0; k < 4; ++k) out[k] = {rotate_image(img, k), k, source_id};
  return out;
}

std::vector<SampleRecord> balanced_subset(const std::vector<SampleRecord>& records,
                                          int n) {
  if (n <= 0 || static_cast<size_t>(n) >= records.size()) return records;
  const int cap = (n + kCifarClasses - 1) / kCifarClasses;
  std::array<int, kCifarClasses> count{};
  std::vector<char> taken(records.size(), 0);
  std::vector<SampleRecord> out;
  out.reserve(n);
  for (size_t i = 0; i < records.size(); ++i) {
    if (static_cast<int>(out.size()) == n) break;
    const auto& s = records[i];
    if (count[s.observed_label] < cap) {
      ++count[s.observed_label];
      taken[i] = 1;
      out.push_back(s);
    }
  }
  // Sparse classes can leave the quota unfilled; top up in record order.
  for (size_t i = 0; i < records.size() && static_cast<int>(out.size()) < n; ++i)
    if (!taken[i]) out.push_back(records[i]);
  return out;
}

NormStats compute_norm_stats(const std::vector<SampleRecord>& records) {
  NormStats st;
  if (records.empty()) return st;
  const int plane = kCifarDim * kCifarDim;
  std::array<double, 3> sum{0, 0, 0}, sumsq{0, 0, 0};
  for (const auto& s : records)
    for (int c = 0; c < kCifarChannels; ++c) {
      double a = 0, b = 0;
      const uint8_t* p = s.image.pix.data() + c * plane;
      for (int i = 0; i < plane; ++i) {
        const double v = p[i] / 255.0;
        a += v;
        b += v * v;
      }
      sum[c] += a;
      sumsq[c] += b;
    }
  const double n = static_cast<double>(records.size()) * plane;
  for (int c = 0; c < kCifarChannels; ++c) {
    st.mean[c] = sum[c] / n;
    const double var = std::max(sumsq[c] / n - st.mean[c] * st.mean[c], 1e-12);
    st.stddev[c] = std::sqrt(var);
  }
  return st;
}

std::string noise_manifest_csv(const std::vector<SampleRecord>& train) {
  std::ostringstream os;
  os << "id,true_label,observed_label,is_noisy\n";
  for (const auto& s : train)
    os << s.id << ',' << s.true_label << ',' << s.observed_label << ','
       << (s.is_noisy ? 1 : 0) << '\n';
  return os.str();
}

void apply_noise_manifest(std::vector<SampleRecord>& records,
                          const std::string& manifest_csv) {
  std::map<int, int> observed;
  std::istringstream in(manifest_csv);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line).size() != 4)
    throw InputError("noise manifest: missing or malformed header");
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4)
      throw InputError("noise manifest: bad row at line " + std::to_string(lineno));
    observed[std::stoi(f[0])] = std::stoi(f[2]);
  }
  for (auto& s : records) {
    const auto it = observed.find(s.id);
    if (it == observed.end())
      throw InputError("noise manifest: no row for sample id " +
                       std::to_string(s.id));
    s.observed_label = it->second;
    s.is_noisy = s.true_label != s.observed_label;
  }
}

std::string ids_csv(const std::vector<SampleRecord>& records) {
  std::ostringstream os;
  os << "id\n";
  for (const auto& s : records) os << s.id << '\n';
  return os.str();
}

std::vector<int> parse_ids_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line)[0] != "id")
    throw InputError("ids csv: missing header");
  std::vector<int> out;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    out.push_back(std::stoi(line));
  }
  return out;
}

}  // namespace noisylab
