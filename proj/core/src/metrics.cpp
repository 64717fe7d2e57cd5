#include "ganet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace ganet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  GANET_CHECK(num_classes >= 1, ConfigError, "confusion matrix needs >= 1 class");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::uint64_t ConfusionMatrix::at(int truth, int predicted) const {
  GANET_CHECK(truth >= 0 && truth < k_ && predicted >= 0 && predicted < k_, DataError,
              "confusion index (", truth, ",", predicted, ") outside ", k_, " classes");
  return counts_[static_cast<std::size_t>(truth) * k_ + predicted];
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  GANET_CHECK(truth >= 0 && truth < k_ && predicted >= 0 && predicted < k_, DataError,
              "label (", truth, ",", predicted, ") outside [0, ", k_ - 1, "]");
  counts_[static_cast<std::size_t>(truth) * k_ + predicted] += count;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  GANET_CHECK(k_ == other.k_, ShapeError, "confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (int i = 0; i < k_; ++i) t += counts_[static_cast<std::size_t>(i) * k_ + i];
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int truth) const {
  std::uint64_t t = 0;
  for (int j = 0; j < k_; ++j) t += at(truth, j);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(int predicted) const {
  std::uint64_t t = 0;
  for (int i = 0; i < k_; ++i) t += at(i, predicted);
  return t;
}

void accumulate(ConfusionMatrix& confusion, const IntTensor& predicted, const IntTensor& truth,
                const std::vector<std::uint8_t>* eval_mask) {
  GANET_CHECK(predicted.shape == truth.shape, ShapeError, "accumulate: predicted ",
              shape_str(predicted.shape), " vs truth ", shape_str(truth.shape));
  if (eval_mask)
    GANET_CHECK(static_cast<std::int64_t>(eval_mask->size()) == truth.numel(), ShapeError,
                "accumulate: mask size mismatch");
  for (std::int64_t i = 0; i < truth.numel(); ++i) {
    if (eval_mask && !(*eval_mask)[static_cast<std::size_t>(i)]) continue;
    confusion.add(truth.data[static_cast<std::size_t>(i)],
                  predicted.data[static_cast<std::size_t>(i)]);
  }
}

std::vector<std::uint8_t> erode_boundaries(const IntTensor& truth, int radius) {
  GANET_CHECK(truth.shape.size() == 2, ShapeError, "erode_boundaries: expected H x W labels");
  GANET_CHECK(radius >= 0, ConfigError, "erode_boundaries: radius must be >= 0");
  const std::int64_t h = truth.dim(0), w = truth.dim(1);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w), 1);
  if (radius == 0) return mask;

  // Disk structuring element.
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius && !(dy == 0 && dx == 0))
        disk.emplace_back(dy, dx);

  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      const std::int32_t center = truth.data[static_cast<std::size_t>(r * w + c)];
      for (const auto& [dy, dx] : disk) {
        const std::int64_t rr = r + dy, cc = c + dx;
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
        if (truth.data[static_cast<std::size_t>(rr * w + cc)] != center) {
          mask[static_cast<std::size_t>(r * w + c)] = 0;
          break;
        }
      }
    }
  return mask;
}

SegmentationReport finalize(const ConfusionMatrix& confusion,
                            const std::vector<int>& class_subset) {
  GANET_CHECK(confusion.total() > 0, DataError, "finalize: empty confusion matrix");
  GANET_CHECK(!class_subset.empty(), ConfigError, "finalize: empty class subset");
  SegmentationReport report;
  report.confusion = confusion;
  report.overall_accuracy =
      static_cast<double>(confusion.trace()) / static_cast<double>(confusion.total());
  double f1_sum = 0.0;
  for (int c : class_subset) {
    const double tp = static_cast<double>(confusion.at(c, c));
    const double fp = static_cast<double>(confusion.col_sum(c)) - tp;
    const double fn = static_cast<double>(confusion.row_sum(c)) - tp;
    ClassMetrics m;
    m.class_id = c;
    m.precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0.0 ? tp / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    f1_sum += m.f1;
    report.per_class.push_back(m);
  }
  report.average_f1 = f1_sum / static_cast<double>(class_subset.size());
  return report;
}

std::string report_table(const SegmentationReport& report,
                         const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::setw(16) << "class" << std::setw(12) << "precision" << std::setw(12) << "recall"
     << std::setw(12) << "f1" << "\n";
  for (const auto& m : report.per_class) {
    std::string name = "class " + std::to_string(m.class_id);
    if (m.class_id >= 0 && m.class_id < static_cast<int>(class_names.size()))
      name = class_names[static_cast<std::size_t>(m.class_id)];
    os << std::setw(16) << name << std::setw(12) << m.precision << std::setw(12) << m.recall
       << std::setw(12) << m.f1 << "\n";
  }
  os << std::setw(16) << "OA" << std::setw(12) << report.overall_accuracy << "\n";
  os << std::setw(16) << "Average F1" << std::setw(12) << report.average_f1 << "\n";
  return os.str();
}

void write_report_json(const std::filesystem::path& path, const SegmentationReport& report) {
  nlohmann::json j;
  j["overall_accuracy"] = report.overall_accuracy;
  j["average_f1"] = report.average_f1;
  j["eroded"] = report.eroded;
  for (const auto& m : report.per_class) {
    nlohmann::json cm;
    cm["class"] = m.class_id;
    cm["precision"] = m.precision;
    cm["recall"] = m.recall;
    cm["f1"] = m.f1;
    j["per_class"].push_back(cm);
  }
  const int k = report.confusion.num_classes();
  for (int t = 0; t < k; ++t) {
    std::vector<std::uint64_t> row;
    for (int p = 0; p < k; ++p) row.push_back(report.confusion.at(t, p));
    j["confusion"].push_back(row);
  }
  std::ofstream out(path);
  GANET_CHECK(out.good(), DataError, "cannot write report '", path.string(), "'");
  out << j.dump(2) << "\n";
}

}  // namespace ganet
