#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scanlearn/backend.hpp"

namespace scanlearn {

struct ProfileMeasurement {
  std::size_t batch_size = 1;
  double delay_s = 0.0;
  std::size_t n_train = 0;
  double epoch_time_s = 0.0;

  /// epoch_time = delay * n_train / batch_size.
  static ProfileMeasurement from_delay(std::size_t batch_size, double delay_s, std::size_t n_train);
};

/// T_epoch(bs) = A * bs^-alpha, fitted in log-log space.
struct DelayCurveFit {
  double A = 0.0;
  double alpha = 0.0;
  double rms_log_residual = 0.0;

  double epoch_time(double batch_size) const noexcept;
  /// |dT/dbs| = alpha * A * bs^-(alpha + 1).
  double slope_magnitude(double batch_size) const noexcept;
};

struct ControllerConfig {
  std::vector<std::size_t> candidates{1, 5, 10, 20, 50, 100};
  double tau_fraction = 0.016;
  std::size_t bs_upper_bound = 100;
  // Re-profile after this many iterations; 0 keeps one batch size for the run.
  std::size_t reprofile_every = 0;
};

/// Candidates <= n_train, sorted and deduplicated. Throws InvalidConfig when
/// fewer than three remain or tau_fraction is outside (0, 1).
std::vector<std::size_t> clip_candidates(const ControllerConfig& config, std::size_t n_train);

/// Ordinary least squares on (ln bs, ln T). Throws DegenerateFit for fewer
/// than three distinct batch sizes or non-positive times, NoSpeedup when the
/// fitted alpha is not positive.
DelayCurveFit fit_power_law(std::span<const ProfileMeasurement> measurements);

/// Batch size where |dT/dbs| equals tau: (alpha * A / tau)^(1 / (alpha + 1)).
double plateau_for_threshold(const DelayCurveFit& fit, double tau);

struct PlateauChoice {
  std::size_t batch_size = 1;
  double tau = 0.0;
  // Unrounded, unclamped closed-form value.
  double raw = 0.0;
};

/// tau = tau_fraction * |dT/dbs| at the smallest candidate; the closed form
/// is rounded to the nearest integer and clamped to
/// [smallest candidate, min(bs_upper_bound, n_train)].
PlateauChoice select_plateau(const DelayCurveFit& fit, const ControllerConfig& config, std::size_t n_train);

std::size_t plateau_batch_size(const DelayCurveFit& fit, const ControllerConfig& config, std::size_t n_train);

struct ProfileResult {
  std::size_t selected = 1;
  std::vector<ProfileMeasurement> measurements;
  DelayCurveFit fit;
  double tau = 0.0;
};

/// Runs one trial iteration per candidate on the head of the corpus with the
/// configured strategy, one candidate at a time. Trial deltas are discarded;
/// `playbook` is only read.
ProfileResult profile_and_select(std::span<const TaskSample> corpus, const Playbook& playbook,
                                 const StrategyConfig& strategy, LearnerBackend& backend,
                                 const ControllerConfig& config, std::size_t workers = 1);

std::string measurements_to_csv(std::span<const ProfileMeasurement> measurements);
nlohmann::ordered_json fit_report(const ProfileResult& result);

}  // namespace scanlearn
