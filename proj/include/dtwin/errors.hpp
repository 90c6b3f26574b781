#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dtwin {

/// Malformed or inconsistent input: documents, CSV files, arguments.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure inside a numerical routine (divergence, singular systems).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history,
                   std::string worst_node)
      : NumericalError(what), history_(std::move(history)), worst_node_(std::move(worst_node)) {}

  /// Max mismatch (or gradient norm) per iteration.
  const std::vector<double>& history() const noexcept { return history_; }
  const std::string& worst_node() const noexcept { return worst_node_; }

 private:
  std::vector<double> history_;
  std::string worst_node_;
};

class SingularJacobianError : public NumericalError {
 public:
  SingularJacobianError(const std::string& what, std::vector<std::string> suspects)
      : NumericalError(what), suspects_(std::move(suspects)) {}

  /// Buses that look electrically isolated from the slack.
  const std::vector<std::string>& suspected_isolated() const noexcept { return suspects_; }

 private:
  std::vector<std::string> suspects_;
};

}  // namespace dtwin
