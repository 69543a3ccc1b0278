#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scatsynth/error.hpp"
#include "scatsynth/jacobian.hpp"
#include "scatsynth/scattering.hpp"

namespace scatsynth {

enum class Optimizer { GradientDescent, LevenbergMarquardt };

inline std::string to_string(Optimizer o) {
  return o == Optimizer::GradientDescent ? "gd" : "lma";
}

inline Optimizer optimizer_from_string(const std::string& name) {
  if (name == "gd") return Optimizer::GradientDescent;
  if (name == "lma") return Optimizer::LevenbergMarquardt;
  throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + name + "'");
}

struct SynthesisConfig {
  Optimizer optimizer = Optimizer::LevenbergMarquardt;
  // Fixed gradient step. Unset: 0.1 ||target|| / ||J^T r0|| chosen at the first step.
  std::optional<double> step_gamma;
  // Initial Tikhonov damping. Unset: 1e-3 trace(J J^T) / M at the first step.
  std::optional<double> damping_mu;
  double damping_decrease = 0.3;
  double damping_increase = 10.0;
  std::size_t max_retries = 8;
  std::size_t max_iterations = 100;
  double target_relative_error = 1e-2;
  std::uint64_t rng_seed = 0;
  std::size_t dense_cap = kDefaultDenseCap;

  void validate() const {
    require(!step_gamma || *step_gamma >= 0.0, ErrorCode::InvalidArgument, "step must be >= 0");
    require(!damping_mu || *damping_mu >= 0.0, ErrorCode::InvalidArgument, "damping must be >= 0");
    require(target_relative_error > 0.0 && target_relative_error < 1.0,
            ErrorCode::InvalidArgument, "target relative error must lie in (0, 1)");
    require(damping_decrease > 0.0 && damping_decrease < 1.0 && damping_increase > 1.0,
            ErrorCode::InvalidArgument, "damping factors must shrink below 1 and grow above 1");
  }
};

struct SynthesisState {
  std::vector<double> iterate;
  std::size_t iteration = 0;
  std::vector<double> error_history;  // relative errors, one per iterate
  double current_damping = 0.0;       // 0 until the first LMA step picks it
  double step_gamma = 0.0;            // resolved GD step
  bool gamma_resolved = false;
  std::size_t non_descent_steps = 0;  // GD steps that raised the error
};

struct ObjectiveValue {
  double value = 0.0;           // 0.5 ||S(x) - target||^2
  double relative_error = 0.0;  // ||S(x) - target|| / ||target||
};

namespace detail {

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

inline void check_target(const ScatteringModel& model, const ScatteringVector& target) {
  require(target.config_digest == model.digest(), ErrorCode::DigestMismatch,
          "target digest " + target.config_digest + " does not match model digest " +
              model.digest());
  require(target.size() == model.size(), ErrorCode::DigestMismatch, "target length mismatch");
}

inline std::vector<double> residual(std::span<const double> values, const ScatteringVector& target) {
  std::vector<double> r(values.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = values[i] - target.values[i];
  return r;
}

inline double relative(double residual_norm, const ScatteringVector& target) {
  const double t = norm2(target.values);
  return t > 0.0 ? residual_norm / t : 0.0;
}

}  // namespace detail

inline ObjectiveValue objective(const ScatteringModel& model, std::span<const double> x,
                                const ScatteringVector& target) {
  detail::check_target(model, target);
  const auto s = model.describe(x);
  const double r = detail::norm2(detail::residual(s.values, target));
  return {0.5 * r * r, detail::relative(r, target)};
}

/// White Gaussian noise standardised to the target's recorded mean and variance.
inline SynthesisState initial_state(const ScatteringModel& model, const ScatteringVector& target,
                                    const SynthesisConfig& cfg) {
  const std::size_t n = model.signal_length();
  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = normal(rng);
  const auto st = signal_stats(x);
  const double scale = st.variance > 0.0 ? std::sqrt(target.stats.variance / st.variance) : 0.0;
  for (auto& v : x) v = target.stats.mean + (v - st.mean) * scale;

  SynthesisState state;
  state.iterate = std::move(x);
  state.error_history.push_back(objective(model, state.iterate, target).relative_error);
  return state;
}

/// X_{n+1} = X_n - gamma J^T (S(X_n) - S(Y)).
inline SynthesisState gd_step(const ScatteringModel& model, SynthesisState state,
                              const ScatteringVector& target, const SynthesisConfig& cfg) {
  require(cfg.optimizer == Optimizer::GradientDescent, ErrorCode::InvalidArgument,
          "gd_step requires the gradient-descent optimizer");
  detail::check_target(model, target);
  const auto fp = forward_pass(model, state.iterate);
  const auto r = detail::residual(fp.values, target);
  const double rnorm = detail::norm2(r);
  ++state.iteration;
  if (rnorm == 0.0) {
    state.error_history.push_back(0.0);
    return state;
  }
  const auto grad = vjp(fp, r);
  if (!state.gamma_resolved) {
    if (cfg.step_gamma) {
      state.step_gamma = *cfg.step_gamma;
    } else {
      const double gnorm = detail::norm2(grad);
      state.step_gamma = gnorm > 0.0 ? 0.1 * detail::norm2(target.values) / gnorm : 0.0;
    }
    state.gamma_resolved = true;
  }
  for (std::size_t t = 0; t < grad.size(); ++t) {
    state.iterate[t] -= state.step_gamma * grad[t];
    require(std::isfinite(state.iterate[t]), ErrorCode::NonfiniteIterate,
            "gradient step produced a non-finite sample; reduce the step");
  }
  const double err = objective(model, state.iterate, target).relative_error;
  require(std::isfinite(err), ErrorCode::NonfiniteIterate,
          "gradient step overflowed the descriptor; reduce the step");
  if (err > detail::relative(rnorm, target)) ++state.non_descent_steps;
  state.error_history.push_back(err);
  return state;
}

/// Minimum-norm damped Gauss-Newton step J^T (J J^T + mu I)^{-1} r.
inline std::optional<std::vector<double>> lma_direction(const RowMatrix& jac,
                                                        const Eigen::MatrixXd& gram,
                                                        std::span<const double> r, double mu) {
  const auto m = gram.rows();
  Eigen::MatrixXd damped = gram;
  damped.diagonal().array() += mu;
  Eigen::LLT<Eigen::MatrixXd> llt(damped);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::VectorXd w = llt.solve(Eigen::Map<const Eigen::VectorXd>(r.data(), m));
  if (!w.allFinite()) return std::nullopt;
  const Eigen::VectorXd step = jac.transpose() * w;
  return std::vector<double>(step.data(), step.data() + step.size());
}

/// J J^T for a row-major Jacobian.
inline Eigen::MatrixXd gram_matrix(const RowMatrix& jac) {
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(jac.rows(), jac.rows());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(jac);
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  return gram;
}

inline std::vector<double> lma_direction(const RowMatrix& jac, std::span<const double> r, double mu) {
  auto step = lma_direction(jac, gram_matrix(jac), r, mu);
  require(step.has_value(), ErrorCode::SingularSystem, "J J^T + mu I is not positive definite");
  return *step;
}

/// One Levenberg-Marquardt iteration with the classic accept/reject damping
/// control: accepted steps strictly reduce ||S(x) - target||.
inline SynthesisState lma_step(const ScatteringModel& model, SynthesisState state,
                               const ScatteringVector& target, const SynthesisConfig& cfg) {
  require(cfg.optimizer == Optimizer::LevenbergMarquardt, ErrorCode::InvalidArgument,
          "lma_step requires the LMA optimizer");
  detail::check_target(model, target);
  const auto jac = jacobian_dense(model, state.iterate, cfg.dense_cap);
  const auto r = detail::residual(jac.values, target);
  const double rnorm = detail::norm2(r);
  if (rnorm == 0.0) {
    ++state.iteration;
    state.error_history.push_back(0.0);
    return state;
  }
  const Eigen::MatrixXd gram = gram_matrix(jac.rows);
  double mu = state.current_damping;
  if (mu <= 0.0) {
    mu = cfg.damping_mu ? *cfg.damping_mu
                        : 1e-3 * gram.trace() / static_cast<double>(gram.rows());
  }

  bool any_solved = false;
  for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    const auto step = lma_direction(jac.rows, gram, r, mu);
    if (step) {
      any_solved = true;
      std::vector<double> trial = state.iterate;
      bool finite = true;
      for (std::size_t t = 0; t < trial.size(); ++t) {
        trial[t] -= (*step)[t];
        finite = finite && std::isfinite(trial[t]);
      }
      if (finite) {
        const auto s = model.describe(trial);
        const double trial_norm = detail::norm2(detail::residual(s.values, target));
        if (trial_norm < rnorm) {
          state.iterate = std::move(trial);
          state.current_damping = mu * cfg.damping_decrease;
          ++state.iteration;
          state.error_history.push_back(detail::relative(trial_norm, target));
          return state;
        }
      }
    }
    mu *= cfg.damping_increase;
  }
  state.current_damping = mu;
  if (!any_solved) {
    throw Error(ErrorCode::SingularSystem, "J J^T + mu I singular even at maximum damping");
  }
  throw Error(ErrorCode::RetryExhausted,
              "no damping in " + std::to_string(cfg.max_retries + 1) + " attempts reduced the residual");
}

enum class StopReason { Converged, IterationCap, Stalled };

inline std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::Converged: return "converged";
    case StopReason::IterationCap: return "iteration-cap";
    case StopReason::Stalled: return "stalled";
  }
  return "unknown";
}

struct IterationRecord {
  std::size_t iteration = 0;
  double relative_error = 0.0;
  double damping = 0.0;
  double wall_ms = 0.0;
};

struct SynthesisResult {
  std::vector<double> signal;
  SynthesisState state;
  StopReason reason = StopReason::IterationCap;
};

using IterationObserver = std::function<void(const IterationRecord&)>;

/// Starts from seeded white noise and iterates the configured optimizer until
/// the relative error reaches the target or the iteration cap. Failing to
/// converge is reported through `reason`, not thrown.
inline SynthesisResult synthesize(const ScatteringModel& model, const ScatteringVector& target,
                                  std::size_t n_samples, const SynthesisConfig& cfg,
                                  const IterationObserver& observer = {}) {
  cfg.validate();
  detail::check_target(model, target);
  require(n_samples == model.signal_length(), ErrorCode::LengthMismatch,
          "requested " + std::to_string(n_samples) + " samples, descriptor config has " +
              std::to_string(model.signal_length()));

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto report = [&](const SynthesisState& s) {
    if (!observer) return;
    IterationRecord rec;
    rec.iteration = s.iteration;
    rec.relative_error = s.error_history.back();
    rec.damping = cfg.optimizer == Optimizer::LevenbergMarquardt ? s.current_damping : s.step_gamma;
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    observer(rec);
  };

  SynthesisResult result;
  result.state = initial_state(model, target, cfg);
  report(result.state);
  result.reason = StopReason::IterationCap;
  while (true) {
    if (result.state.error_history.back() <= cfg.target_relative_error) {
      result.reason = StopReason::Converged;
      break;
    }
    if (result.state.iteration >= cfg.max_iterations) break;
    try {
      result.state = cfg.optimizer == Optimizer::LevenbergMarquardt
                         ? lma_step(model, result.state, target, cfg)
                         : gd_step(model, result.state, target, cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RetryExhausted) throw;
      result.reason = StopReason::Stalled;
      break;
    }
    report(result.state);
  }
  result.signal = result.state.iterate;
  return result;
}

}  // namespace scatsynth
