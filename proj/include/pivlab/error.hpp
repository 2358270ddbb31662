#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pivlab {

// Base for every error raised by the library. Messages are stable strings
// the CLI surfaces verbatim.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Wealth (or price) left the domain of the utility on one or more paths.
class DomainViolation : public Error {
 public:
  explicit DomainViolation(std::vector<int> paths)
      : Error(make_message(paths)), paths_(std::move(paths)) {}

  const std::vector<int>& paths() const noexcept { return paths_; }

 private:
  static std::string make_message(const std::vector<int>& paths) {
    std::string msg = "utility domain violation";
    if (!paths.empty()) {
      msg += " on paths [";
      const std::size_t shown = paths.size() < 10 ? paths.size() : 10;
      for (std::size_t i = 0; i < shown; ++i) {
        if (i) msg += ", ";
        msg += std::to_string(paths[i]);
      }
      if (shown < paths.size()) msg += ", ... (" + std::to_string(paths.size()) + " total)";
      msg += "]";
    }
    return msg;
  }

  std::vector<int> paths_;
};

inline std::string at_path_step(int path, int step) {
  return "(" + std::to_string(path) + ", " + std::to_string(step) + ")";
}

}  // namespace pivlab
