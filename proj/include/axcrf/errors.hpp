#pragma once

#include <stdexcept>

namespace axcrf {

/// Malformed or out-of-range input data (files, labels, blocks).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or produced non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace axcrf
