#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedseg/data.hpp"

namespace fedseg {

// Square pixel-count matrix over background + foreground classes.
// counts[truth][pred].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::uint32_t num_classes = 0);

  void add_pixel(std::uint8_t truth, std::uint8_t pred);
  void merge(const ConfusionMatrix& other);

  std::uint32_t num_classes() const { return num_classes_; }
  std::uint64_t count(std::uint8_t truth, std::uint8_t pred) const;
  std::uint64_t total_pixels() const { return total_; }

  std::uint64_t true_positives(std::uint8_t cls) const;
  std::uint64_t false_positives(std::uint8_t cls) const;
  std::uint64_t false_negatives(std::uint8_t cls) const;
  std::uint64_t truth_pixels(std::uint8_t cls) const;
  double accuracy() const;

 private:
  std::uint32_t num_classes_ = 0;  // foreground classes; matrix side is +1
  std::uint64_t total_ = 0;
  std::vector<std::uint64_t> counts_;
};

struct MetricReport {
  double macc = 0.0;
  double mwp = 0.0;
  double mwf1 = 0.0;
  double mwiou = 0.0;
  // mean per-class components and mean pixel-share weights over images where
  // the class appears
  std::vector<double> class_precision;
  std::vector<double> class_f1;
  std::vector<double> class_iou;
  std::vector<double> class_weight;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// Per-image confusion matrices; class weights are the image's ground-truth
// pixel shares over foreground classes; weighted metrics averaged over images.
// Images without foreground truth contribute to mACC only.
MetricReport evaluate(const std::vector<std::vector<std::uint8_t>>& pred_masks,
                      const std::vector<std::vector<std::uint8_t>>& true_masks,
                      std::uint32_t num_classes);

// Convenience overload taking predicted masks against dataset ground truth.
MetricReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& pred,
                            const Dataset& truth, std::uint32_t num_classes);

// Test-size-weighted average of per-client reports.
MetricReport overall(const std::map<std::string, MetricReport>& reports,
                     const std::map<std::string, std::size_t>& test_sizes);

}  // namespace fedseg
