#pragma once

#include <stdexcept>
#include <string>

namespace ebn {

// Base for every diagnostic thrown by the library.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents disagree with an operation's contract.
class shape_error : public error {
 public:
  explicit shape_error(const std::string& msg) : error("shape error: " + msg) {}
};

// A value argument is out of its admissible range (labels, thresholds, ...).
class input_error : public error {
 public:
  explicit input_error(const std::string& msg) : error("input error: " + msg) {}
};

// An API was called in a way its contract forbids.
class usage_error : public error {
 public:
  explicit usage_error(const std::string& msg) : error("usage error: " + msg) {}
};

// A run configuration is invalid or inconsistent.
class config_error : public error {
 public:
  explicit config_error(const std::string& msg) : error("config error: " + msg) {}
};

// A file does not conform to its binary/text format.
class format_error : public error {
 public:
  explicit format_error(const std::string& msg) : error("format error: " + msg) {}
};

// The filesystem refused an operation.
class io_error : public error {
 public:
  explicit io_error(const std::string& msg) : error("i/o error: " + msg) {}
};

}  // namespace ebn
