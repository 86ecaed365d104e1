#pragma once

#include <stdexcept>
#include <string>

namespace dapol {

/// Raised for malformed arguments: dimension mismatches, out-of-range labels,
/// non-positive bandwidths, unknown names.
class invalid_argument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Pooled sample has no spread (all rows identical); no bandwidth can be derived.
class degenerate_sample_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Estimator needs more rows than it was given.
class insufficient_samples_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Layer list does not compose into a valid network.
class invalid_spec_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A training step produced a non-finite gradient or parameter.
class diverged_training_error : public std::runtime_error {
public:
    diverged_training_error(std::size_t step, const std::string& what)
        : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
          step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Tree placement could not honour the minimum separation.
class infeasible_density_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Experiment pipeline failure, tagged with the stage that failed.
class stage_error : public std::runtime_error {
public:
    stage_error(std::string stage, const std::string& what)
        : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace dapol
