#pragma once

#include <functional>
#include <string>

namespace vimts::log {

using Sink = std::function<void(const std::string&)>;

// Warnings go to stderr unless a sink is installed; returns the previous sink.
Sink set_warning_sink(Sink sink);
void warn(const std::string& message);
void info(const std::string& message);
void set_verbose(bool verbose);

}  // namespace vimts::log
