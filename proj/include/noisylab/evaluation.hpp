#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "noisylab/dataset.hpp"
#include "noisylab/nn.hpp"

namespace noisylab {

enum class PredictionProtocol { one_image, four_rotation };

std::string to_string(PredictionProtocol p);
PredictionProtocol protocol_from_string(const std::string& s);

// Class distribution for one image: the softmax on the un-rotated image,
// or the mean of the four softmax vectors over all quarter turns.
std::vector<double> predict_distribution(const nn::TwoHeadNetwork<float>& net,
                                         const Image& img, PredictionProtocol protocol,
                                         const NormStats& norm);

// Argmax of the protocol distribution, lowest index on ties.
int predict(const nn::TwoHeadNetwork<float>& net, const Image& img,
            PredictionProtocol protocol, const NormStats& norm);

// Percent of records whose protocol prediction matches the true label.
// Throws InputError on an empty dataset.
double accuracy(const nn::TwoHeadNetwork<float>& net,
                const std::vector<SampleRecord>& records,
                PredictionProtocol protocol, const NormStats& norm, int threads = 1,
                int batch_size = 256);

struct PairAccuracy {
  double one_image = 0;
  double four_rotation = nan("");
};

// One shared evaluation pass: the rotation-0 forward serves the 1-image
// protocol, and (optionally) three more rotated passes complete the
// 4-rotation average.
PairAccuracy accuracy_both(const nn::TwoHeadNetwork<float>& net,
                           const std::vector<SampleRecord>& records,
                           const NormStats& norm, bool with_four_rotation,
                           int threads = 1, int batch_size = 256);

// ---- Report aggregation ----

struct RunSummary {
  std::string name;
  std::string mode;
  std::string decision;
  int best_epoch = -1;
  double best_val_1img = nan("");
  double best_val_4rot = nan("");
  double test_1img = nan("");
  double test_4rot = nan("");
};

std::string run_summary_csv(const RunSummary& s);
RunSummary parse_run_summary(const std::string& csv);

struct ReportFiles {
  std::filesystem::path table;
  std::vector<std::filesystem::path> series;
};

// Reads summary.csv and metrics.csv from each run directory and emits
// summary_table.csv plus one series_<name>.csv per run into out_dir.
// Duplicate run names get a numeric suffix; regeneration from the same
// inputs is byte-identical.
ReportFiles build_report(const std::vector<std::filesystem::path>& run_dirs,
                         const std::filesystem::path& out_dir);

}  // namespace noisylab
