#pragma once

#include <stdexcept>
#include <string>

namespace affdet {

// Bad input: malformed config, inconsistent files, violated preconditions.
// The CLI maps this to exit code 2; everything else is a runtime failure (3).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownLabelError : public ValidationError {
 public:
  UnknownLabelError(const std::string& dataset_id, const std::string& label)
      : ValidationError("unregistered label '" + label + "' for dataset '" +
                        dataset_id + "'"),
        dataset_id_(dataset_id),
        label_(label) {}

  const std::string& dataset_id() const noexcept { return dataset_id_; }
  const std::string& label() const noexcept { return label_; }

 private:
  std::string dataset_id_;
  std::string label_;
};

}  // namespace affdet
