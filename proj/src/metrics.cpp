#include "fedseg/metrics.hpp"

#include <cmath>

#include "fedseg/errors.hpp"

namespace fedseg {

ConfusionMatrix::ConfusionMatrix(std::uint32_t num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes + 1) * (num_classes + 1), 0) {}

void ConfusionMatrix::add_pixel(std::uint8_t truth, std::uint8_t pred) {
  if (truth > num_classes_ || pred > num_classes_) {
    throw ShapeMismatch("class id exceeds configured class count");
  }
  counts_[static_cast<std::size_t>(truth) * (num_classes_ + 1) + pred] += 1;
  total_ += 1;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) {
    throw ShapeMismatch("cannot merge confusion matrices of different sizes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

std::uint64_t ConfusionMatrix::count(std::uint8_t truth, std::uint8_t pred) const {
  return counts_[static_cast<std::size_t>(truth) * (num_classes_ + 1) + pred];
}

std::uint64_t ConfusionMatrix::true_positives(std::uint8_t cls) const {
  return count(cls, cls);
}

std::uint64_t ConfusionMatrix::false_positives(std::uint8_t cls) const {
  std::uint64_t n = 0;
  for (std::uint32_t t = 0; t <= num_classes_; ++t) {
    if (t != cls) n += count(static_cast<std::uint8_t>(t), cls);
  }
  return n;
}

std::uint64_t ConfusionMatrix::false_negatives(std::uint8_t cls) const {
  std::uint64_t n = 0;
  for (std::uint32_t p = 0; p <= num_classes_; ++p) {
    if (p != cls) n += count(cls, static_cast<std::uint8_t>(p));
  }
  return n;
}

std::uint64_t ConfusionMatrix::truth_pixels(std::uint8_t cls) const {
  std::uint64_t n = 0;
  for (std::uint32_t p = 0; p <= num_classes_; ++p) {
    n += count(cls, static_cast<std::uint8_t>(p));
  }
  return n;
}

double ConfusionMatrix::accuracy() const {
  if (total_ == 0) return 0.0;
  std::uint64_t correct = 0;
  for (std::uint32_t c = 0; c <= num_classes_; ++c) {
    correct += count(static_cast<std::uint8_t>(c), static_cast<std::uint8_t>(c));
  }
  return static_cast<double>(correct) / static_cast<double>(total_);
}

nlohmann::json MetricReport::to_json() const {
  return {{"mACC", macc},
          {"mwP", mwp},
          {"mwF1", mwf1},
          {"mwIoU", mwiou},
          {"class_precision", class_precision},
          {"class_f1", class_f1},
          {"class_iou", class_iou},
          {"class_weight", class_weight}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.macc = j.at("mACC").get<double>();
  r.mwp = j.at("mwP").get<double>();
  r.mwf1 = j.at("mwF1").get<double>();
  r.mwiou = j.at("mwIoU").get<double>();
  if (j.contains("class_precision")) {
    r.class_precision = j.at("class_precision").get<std::vector<double>>();
    r.class_f1 = j.at("class_f1").get<std::vector<double>>();
    r.class_iou = j.at("class_iou").get<std::vector<double>>();
    r.class_weight = j.at("class_weight").get<std::vector<double>>();
  }
  return r;
}

MetricReport evaluate(const std::vector<std::vector<std::uint8_t>>& pred_masks,
                      const std::vector<std::vector<std::uint8_t>>& true_masks,
                      std::uint32_t num_classes) {
  if (pred_masks.empty()) throw EmptyEvaluationSet("no masks to evaluate");
  if (pred_masks.size() != true_masks.size()) {
    throw ShapeMismatch("prediction and truth mask counts differ");
  }

  MetricReport report;
  report.class_precision.assign(num_classes + 1, 0.0);
  report.class_f1.assign(num_classes + 1, 0.0);
  report.class_iou.assign(num_classes + 1, 0.0);
  report.class_weight.assign(num_classes + 1, 0.0);
  std::vector<std::size_t> class_images(num_classes + 1, 0);

  double acc_sum = 0.0;
  double wp_sum = 0.0, wf1_sum = 0.0, wiou_sum = 0.0;
  std::size_t weighted_images = 0;

  for (std::size_t i = 0; i < pred_masks.size(); ++i) {
    const auto& pred = pred_masks[i];
    const auto& truth = true_masks[i];
    if (pred.size() != truth.size() || pred.empty()) {
      throw ShapeMismatch("mask " + std::to_string(i) + " shape mismatch");
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t px = 0; px < pred.size(); ++px) {
      cm.add_pixel(truth[px], pred[px]);
    }
    acc_sum += cm.accuracy();

    // foreground ground-truth pixel shares; classes absent from this image
    // carry zero weight
    std::uint64_t fg_total = 0;
    for (std::uint32_t c = 1; c <= num_classes; ++c) {
      fg_total += cm.truth_pixels(static_cast<std::uint8_t>(c));
    }
    if (fg_total == 0) continue;  // background-only image: accuracy only
    ++weighted_images;

    double wp = 0.0, wf1 = 0.0, wiou = 0.0;
    for (std::uint32_t c = 1; c <= num_classes; ++c) {
      auto cls = static_cast<std::uint8_t>(c);
      std::uint64_t gt = cm.truth_pixels(cls);
      if (gt == 0) continue;
      double weight = static_cast<double>(gt) / static_cast<double>(fg_total);
      std::uint64_t tp = cm.true_positives(cls);
      std::uint64_t fp = cm.false_positives(cls);
      std::uint64_t fn = cm.false_negatives(cls);
      double precision = (tp + fp) == 0 ? 0.0
                                        : static_cast<double>(tp) /
                                              static_cast<double>(tp + fp);
      double f1 = (2 * tp + fp + fn) == 0
                      ? 0.0
                      : 2.0 * static_cast<double>(tp) /
                            static_cast<double>(2 * tp + fp + fn);
      double iou = (tp + fp + fn) == 0
                       ? 0.0
                       : static_cast<double>(tp) /
                             static_cast<double>(tp + fp + fn);
      wp += weight * precision;
      wf1 += weight * f1;
      wiou += weight * iou;
      report.class_precision[c] += precision;
      report.class_f1[c] += f1;
      report.class_iou[c] += iou;
      report.class_weight[c] += weight;
      class_images[c] += 1;
    }
    wp_sum += wp;
    wf1_sum += wf1;
    wiou_sum += wiou;
  }

  report.macc = acc_sum / static_cast<double>(pred_masks.size());
  if (weighted_images > 0) {
    report.mwp = wp_sum / static_cast<double>(weighted_images);
    report.mwf1 = wf1_sum / static_cast<double>(weighted_images);
    report.mwiou = wiou_sum / static_cast<double>(weighted_images);
  }
  for (std::uint32_t c = 1; c <= num_classes; ++c) {
    if (class_images[c] > 0) {
      double inv = 1.0 / static_cast<double>(class_images[c]);
      report.class_precision[c] *= inv;
      report.class_f1[c] *= inv;
      report.class_iou[c] *= inv;
      report.class_weight[c] *= inv;
    }
  }
  return report;
}

MetricReport evaluate_masks(const std::vector<std::vector<std::uint8_t>>& pred,
                            const Dataset& truth, std::uint32_t num_classes) {
  std::vector<std::vector<std::uint8_t>> true_masks;
  true_masks.reserve(truth.size());
  for (const auto& img : truth) true_masks.push_back(img.mask);
  return evaluate(pred, true_masks, num_classes);
}

MetricReport overall(const std::map<std::string, MetricReport>& reports,
                     const std::map<std::string, std::size_t>& test_sizes) {
  if (reports.empty()) throw EmptyInput("no client reports to aggregate");
  double total = 0.0;
  MetricReport out;
  for (const auto& [client, report] : reports) {
    auto it = test_sizes.find(client);
    if (it == test_sizes.end() || it->second == 0) {
      throw EmptyInput("missing or zero test size for client " + client);
    }
    double w = static_cast<double>(it->second);
    out.macc += w * report.macc;
    out.mwp += w * report.mwp;
    out.mwf1 += w * report.mwf1;
    out.mwiou += w * report.mwiou;
    total += w;
  }
  out.macc /= total;
  out.mwp /= total;
  out.mwf1 /= total;
  out.mwiou /= total;
  return out;
}

}  // namespace fedseg
