#include "scanlearn/batch_controller.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "scanlearn/errors.hpp"
#include "scanlearn/pipeline.hpp"
#include "scanlearn/rng.hpp"

namespace scanlearn {

namespace {
// Keeps trial-iteration randomness apart from the real run's streams.
constexpr std::uint64_t kProfileDomain = 0x70726f66696c65ULL;
}  // namespace

ProfileMeasurement ProfileMeasurement::from_delay(std::size_t batch_size, double delay_s, std::size_t n_train) {
  return {batch_size, delay_s, n_train,
          delay_s * static_cast<double>(n_train) / static_cast<double>(batch_size)};
}

double DelayCurveFit::epoch_time(double batch_size) const noexcept {
  return A * std::pow(batch_size, -alpha);
}

double DelayCurveFit::slope_magnitude(double batch_size) const noexcept {
  return alpha * A * std::pow(batch_size, -(alpha + 1.0));
}

std::vector<std::size_t> clip_candidates(const ControllerConfig& config, std::size_t n_train) {
  if (!(config.tau_fraction > 0.0 && config.tau_fraction < 1.0)) {
    throw InvalidConfig("tau_fraction must lie in (0, 1)");
  }
  std::set<std::size_t> kept;
  for (const auto bs : config.candidates) {
    if (bs >= 1 && bs <= n_train) {
      kept.insert(bs);
    }
  }
  if (kept.size() < 3) {
    throw InvalidConfig("batch size controller needs at least 3 candidates <= " + std::to_string(n_train));
  }
  return {kept.begin(), kept.end()};
}

DelayCurveFit fit_power_law(std::span<const ProfileMeasurement> measurements) {
  std::set<std::size_t> distinct;
  for (const auto& m : measurements) {
    if (m.batch_size == 0 || !(m.epoch_time_s > 0.0) || !std::isfinite(m.epoch_time_s)) {
      throw DegenerateFit("measurements need positive batch sizes and epoch times");
    }
    distinct.insert(m.batch_size);
  }
  if (distinct.size() < 3) {
    throw DegenerateFit("power-law fit needs at least 3 distinct batch sizes, got " +
                        std::to_string(distinct.size()));
  }

  const auto n = static_cast<double>(measurements.size());
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (const auto& m : measurements) {
    mean_x += std::log(static_cast<double>(m.batch_size));
    mean_y += std::log(m.epoch_time_s);
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& m : measurements) {
    const double dx = std::log(static_cast<double>(m.batch_size)) - mean_x;
    sxy += dx * (std::log(m.epoch_time_s) - mean_y);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  const double intercept = mean_y - slope * mean_x;

  double sq = 0.0;
  for (const auto& m : measurements) {
    const double r =
        std::log(m.epoch_time_s) - (intercept + slope * std::log(static_cast<double>(m.batch_size)));
    sq += r * r;
  }
  DelayCurveFit fit{std::exp(intercept), -slope, std::sqrt(sq / n)};
  if (!(fit.alpha > 0.0)) {
    throw NoSpeedup("epoch time does not decrease with batch size (alpha = " + std::to_string(fit.alpha) + ")");
  }
  return fit;
}

double plateau_for_threshold(const DelayCurveFit& fit, double tau) {
  if (!(fit.alpha > 0.0)) {
    throw NoSpeedup("plateau needs a positive alpha");
  }
  return std::pow(fit.alpha * fit.A / tau, 1.0 / (fit.alpha + 1.0));
}

PlateauChoice select_plateau(const DelayCurveFit& fit, const ControllerConfig& config, std::size_t n_train) {
  const auto candidates = clip_candidates(config, n_train);
  const auto smallest = candidates.front();
  PlateauChoice choice;
  choice.tau = config.tau_fraction * fit.slope_magnitude(static_cast<double>(smallest));
  choice.raw = plateau_for_threshold(fit, choice.tau);
  const auto upper = std::max(smallest, std::min(config.bs_upper_bound, n_train));
  const auto rounded = std::llround(std::min(choice.raw, static_cast<double>(upper)));
  choice.batch_size = std::clamp<std::size_t>(static_cast<std::size_t>(std::max<long long>(rounded, 1)),
                                              smallest, upper);
  return choice;
}

std::size_t plateau_batch_size(const DelayCurveFit& fit, const ControllerConfig& config, std::size_t n_train) {
  return select_plateau(fit, config, n_train).batch_size;
}

ProfileResult profile_and_select(std::span<const TaskSample> corpus, const Playbook& playbook,
                                 const StrategyConfig& strategy, LearnerBackend& backend,
                                 const ControllerConfig& config, std::size_t workers) {
  if (corpus.empty()) {
    throw EmptyCorpus();
  }
  const auto candidates = clip_candidates(config, corpus.size());
  ProfileResult result;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto bs = candidates[i];
    auto trial = strategy;
    trial.batch_size = bs;
    if (trial.kind == StrategyKind::kSequential && bs > 1) {
      trial.kind = StrategyKind::kNaiveBatch;
    }
    trial.seed = derive_seed(strategy.seed, {kProfileDomain, i});
    const auto step = run_iteration(corpus.first(bs), playbook, trial, backend, 0, {workers, {}, {}});
    result.measurements.push_back(ProfileMeasurement::from_delay(bs, step.record.delays.total_s, corpus.size()));
  }
  result.fit = fit_power_law(result.measurements);
  const auto choice = select_plateau(result.fit, config, corpus.size());
  result.selected = choice.batch_size;
  result.tau = choice.tau;
  return result;
}

std::string measurements_to_csv(std::span<const ProfileMeasurement> measurements) {
  std::ostringstream out;
  out.precision(17);
  out << "bs,delay_s,epoch_time_s\n";
  for (const auto& m : measurements) {
    out << m.batch_size << ',' << m.delay_s << ',' << m.epoch_time_s << '\n';
  }
  return out.str();
}

nlohmann::ordered_json fit_report(const ProfileResult& result) {
  nlohmann::ordered_json doc;
  doc["A"] = result.fit.A;
  doc["alpha"] = result.fit.alpha;
  doc["tau"] = result.tau;
  doc["plateau_bs"] = result.selected;
  doc["rms_log_residual"] = result.fit.rms_log_residual;
  return doc;
}

}  // namespace scanlearn
