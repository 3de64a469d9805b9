#pragma once

// Static line charts written as PNG, and the plot set derived from run artifacts.

#include <filesystem>
#include <string>
#include <vector>

namespace vimts::harness {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotPlan {
  std::string filename;  // relative to <root>/plots
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
  bool log_y = false;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

Image render_plot(const PlotPlan& desc, int width = 800, int height = 500);
std::string encode_png(const Image& image);
Image decode_png(const std::string& bytes);

struct HistoryRow {
  std::string stage;
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);

// Loss curves per run, few-shot curves per variant and metric, and
// sensitivity curves for hyperparameters that take several values.
std::vector<PlotPlan> plan_plots(const std::filesystem::path& root);

// Renders plan_plots(root) into <root>/plots. Runs without history are
// skipped with a warning; an empty run tree yields no images and a warning.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& root);

}  // namespace vimts::harness
