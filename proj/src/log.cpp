#include "vimts/log.hpp"

#include <iostream>
#include <mutex>

namespace vimts::log {
namespace {
std::mutex g_mutex;
Sink g_sink;
bool g_verbose = false;
}  // namespace

Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  std::swap(g_sink, sink);
  return sink;
}

void warn(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

void info(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_verbose) std::cerr << message << '\n';
}

void set_verbose(bool verbose) {
  std::lock_guard lock(g_mutex);
  g_verbose = verbose;
}

}  // namespace vimts::log
