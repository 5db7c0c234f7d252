#pragma once

#include <Eigen/Core>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace daam {

/// Dense row-major matrix used for spectrograms, segments, gates and weights.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Error categories map onto CLI exit codes (1 validation, 2 missing input,
// 3 numerical failure).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace log {

using Sink = std::function<void(const std::string&)>;

/// Writes "warning: <msg>" to stderr, or to the installed sink.
void warn(const std::string& msg);
void info(const std::string& msg);

/// Replaces the warning sink for the lifetime of the guard. Used by tests to
/// observe warnings and by the CLI to keep a run log.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(Sink sink);
  ~ScopedWarningSink();
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  Sink previous_;
};

/// Collects warnings into a vector while alive.
class WarningCapture {
 public:
  WarningCapture() : guard_([this](const std::string& m) { messages_.push_back(m); }) {}
  const std::vector<std::string>& messages() const { return messages_; }
  bool empty() const { return messages_.empty(); }

 private:
  std::vector<std::string> messages_;
  ScopedWarningSink guard_;
};

void set_quiet(bool quiet);

}  // namespace log
}  // namespace daam
