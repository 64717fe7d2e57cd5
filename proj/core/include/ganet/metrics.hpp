#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ganet/tensor.hpp"

namespace ganet {

// Row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::uint64_t at(int truth, int predicted) const;
  void add(int truth, int predicted, std::uint64_t count = 1);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(int truth) const;
  std::uint64_t col_sum(int predicted) const;

 private:
  int k_ = 0;
  std::vector<std::uint64_t> counts_;
};

// Adds one prediction/truth pair of maps; pixels with a false mask entry are
// skipped. Throws DataError on out-of-range labels.
void accumulate(ConfusionMatrix& confusion, const IntTensor& predicted, const IntTensor& truth,
                const std::vector<std::uint8_t>* eval_mask = nullptr);

// Contest protocol: pixels within Euclidean distance <= radius of any pixel
// with a different ground-truth label are excluded from evaluation. The tile
// border itself is not treated as a boundary.
std::vector<std::uint8_t> erode_boundaries(const IntTensor& truth, int radius);

struct ClassMetrics {
  int class_id = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SegmentationReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;  // over the evaluated subset
  double overall_accuracy = 0.0;
  double average_f1 = 0.0;  // unweighted mean over the subset
  bool eroded = false;
};

// Zero-denominator precision/recall (and F1 when precision+recall = 0) are
// defined as 0. Throws DataError on an all-zero confusion.
SegmentationReport finalize(const ConfusionMatrix& confusion,
                            const std::vector<int>& class_subset);

// Aligned human-readable table; `class_names` may be empty.
std::string report_table(const SegmentationReport& report,
                         const std::vector<std::string>& class_names = {});
void write_report_json(const std::filesystem::path& path, const SegmentationReport& report);

}  // namespace ganet
