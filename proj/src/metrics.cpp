#include "unetlite/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "unetlite/errors.hpp"

namespace unetlite::metrics {

Confusion& Confusion::operator+=(const Confusion& other) noexcept {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

Confusion update(Confusion conf, const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.values.size() != gt.values.size()) {
    throw Error(ErrorKind::shape, fmt::format("prediction {}x{} and ground truth {}x{} differ", pred.height,
                                              pred.width, gt.height, gt.width));
  }
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const auto p = pred.values[i], g = gt.values[i];
    if (p > 1 || g > 1) throw Error(ErrorKind::usage, fmt::format("non-binary mask value at pixel {}", i));
    if (p && g) {
      ++conf.tp;
    } else if (p) {
      ++conf.fp;
    } else if (g) {
      ++conf.fn;
    } else {
      ++conf.tn;
    }
  }
  return conf;
}

double iou(const Confusion& conf) {
  const auto denom = conf.tp + conf.fp + conf.fn;
  if (denom == 0) throw Error(ErrorKind::undefined_metric, "IoU undefined: no positive pixels in prediction or truth");
  return static_cast<double>(conf.tp) / static_cast<double>(denom);
}

double accuracy(const Confusion& conf) {
  if (conf.total() == 0) throw Error(ErrorKind::undefined_metric, "accuracy undefined: no pixels evaluated");
  return static_cast<double>(conf.tp + conf.tn) / static_cast<double>(conf.total());
}

double bce(std::span<const float> probs, std::span<const std::uint8_t> gt) {
  if (probs.size() != gt.size()) {
    throw Error(ErrorKind::shape, fmt::format("bce: {} probabilities for {} labels", probs.size(), gt.size()));
  }
  if (probs.empty()) throw Error(ErrorKind::undefined_metric, "bce of an empty set");
  constexpr double eps = 1e-7;
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs[i]), eps, 1.0 - eps);
    sum += gt[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(probs.size());
}

std::string eval_csv(std::size_t images, const Confusion& conf) {
  return fmt::format("images,tp,fp,fn,tn,iou,accuracy\n{},{},{},{},{},{:.6f},{:.6f}\n", images, conf.tp, conf.fp,
                     conf.fn, conf.tn, iou(conf), accuracy(conf));
}

}  // namespace unetlite::metrics
