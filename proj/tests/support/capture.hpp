#pragma once

#include "vimts/log.hpp"

#include <string>
#include <vector>

namespace vimts::testing {

// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() : previous_(log::set_warning_sink([this](const std::string& m) { messages.push_back(m); })) {}
  ~WarningCapture() { log::set_warning_sink(previous_); }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  std::vector<std::string> messages;

 private:
  log::Sink previous_;
};

}  // namespace vimts::testing
