#include "mpd/joint.hpp"

#include <cmath>
#include <string>

#include "mpd/errors.hpp"

namespace mpd {

BetaRule parse_beta_rule(std::string_view name) {
  if (name == "fixed") return BetaRule::kFixed;
  if (name == "inverse_shots" || name == "inverse-shots") return BetaRule::kInverseShots;
  throw ConfigError("unknown beta rule '" + std::string(name) + "'");
}

std::string_view to_string(BetaRule rule) {
  return rule == BetaRule::kFixed ? "fixed" : "inverse_shots";
}

double JointConfig::effective_beta(std::size_t shots) const {
  if (rule == BetaRule::kFixed) return beta;
  if (shots < 1) throw ConfigError("inverse_shots beta rule needs K >= 1");
  return 1.0 / static_cast<double>(shots);
}

void JointConfig::validate() const {
  if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("beta must be finite and >= 0");
}

Prediction fuse(std::span<const double> ot_scores, std::span<const double> cal_scores,
                const JointConfig& cfg, std::size_t shots) {
  if (ot_scores.size() != cal_scores.size()) {
    throw ConfigError("fuse: " + std::to_string(ot_scores.size()) + " OT scores vs " +
                      std::to_string(cal_scores.size()) + " calibrated scores");
  }
  if (ot_scores.empty()) throw ConfigError("fuse: no classes");
  cfg.validate();
  Prediction p;
  p.beta = cfg.effective_beta(shots);
  p.ot_scores.assign(ot_scores.begin(), ot_scores.end());
  p.calibrated_scores.assign(cal_scores.begin(), cal_scores.end());
  p.fused.resize(ot_scores.size());
  for (std::size_t k = 0; k < ot_scores.size(); ++k) p.fused[k] = ot_scores[k] + p.beta * cal_scores[k];
  p.label = argmax(p.fused);
  return p;
}

Evaluation evaluate(std::span<const std::size_t> predicted, std::span<const std::size_t> gold,
                    std::size_t num_classes) {
  if (predicted.empty()) throw ConfigError("evaluate: no predictions");
  if (predicted.size() != gold.size()) throw ConfigError("evaluate: prediction/label count mismatch");
  Evaluation ev;
  ev.total = predicted.size();
  ev.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (gold[i] >= num_classes || predicted[i] >= num_classes) {
      throw DataError("evaluate: label out of range at index " + std::to_string(i));
    }
    ++ev.confusion[gold[i]][predicted[i]];
    if (gold[i] == predicted[i]) ++ev.correct;
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
  return ev;
}

SeedSummary summarize_seeds(std::span<const double> accuracies) {
  SeedSummary s;
  double m2 = 0.0;
  for (double a : accuracies) {
    ++s.count;
    const double delta = a - s.mean;
    s.mean += delta / static_cast<double>(s.count);
    m2 += delta * (a - s.mean);
  }
  if (s.count > 0) s.stddev = std::sqrt(m2 / static_cast<double>(s.count));
  return s;
}

}  // namespace mpd
