#include "vimts/harness/plot.hpp"

#include "vimts/core/dataset_io.hpp"
#include "vimts/fileio.hpp"
#include "vimts/harness/experiment.hpp"
#include "vimts/harness/report.hpp"
#include "vimts/log.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vimts::harness {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Glyph = std::array<const char*, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> glyphs{
      {' ', {"00000", "00000", "00000", "00000", "00000", "00000", "00000"}},
      {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
      {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
      {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
      {'3', {"11111", "00010", "00100", "00010", "00001", "10001", "01110"}},
      {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
      {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
      {'6', {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},
      {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
      {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
      {'9', {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},
      {'A', {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}},
      {'B', {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}},
      {'C', {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}},
      {'D', {"11100", "10010", "10001", "10001", "10001", "10010", "11100"}},
      {'E', {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}},
      {'F', {"11111", "10000", "10000", "11110", "10000", "10000", "10000"}},
      {'G', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
      {'H', {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}},
      {'I', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
      {'J', {"00111", "00010", "00010", "00010", "00010", "10010", "01100"}},
      {'K', {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}},
      {'L', {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}},
      {'M', {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}},
      {'N', {"10001", "10001", "11001", "10101", "10011", "10001", "10001"}},
      {'O', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
      {'P', {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}},
      {'Q', {"01110", "10001", "10001", "10001", "10101", "10010", "01101"}},
      {'R', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
      {'S', {"01111", "10000", "10000", "01110", "00001", "00001", "11110"}},
      {'T', {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}},
      {'U', {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}},
      {'V', {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}},
      {'W', {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}},
      {'X', {"10001", "10001", "01010", "00100", "01010", "10001", "10001"}},
      {'Y', {"10001", "10001", "10001", "01010", "00100", "00100", "00100"}},
      {'Z', {"11111", "00001", "00010", "00100", "01000", "10000", "11111"}},
      {'.', {"00000", "00000", "00000", "00000", "00000", "01100", "01100"}},
      {'-', {"00000", "00000", "00000", "11111", "00000", "00000", "00000"}},
      {'+', {"00000", "00100", "00100", "11111", "00100", "00100", "00000"}},
      {'_', {"00000", "00000", "00000", "00000", "00000", "00000", "11111"}},
      {':', {"00000", "01100", "01100", "00000", "01100", "01100", "00000"}},
      {'=', {"00000", "00000", "11111", "00000", "11111", "00000", "00000"}},
      {'(', {"00010", "00100", "01000", "01000", "01000", "00100", "00010"}},
      {')', {"01000", "00100", "00010", "00010", "00010", "00100", "01000"}},
      {'/', {"00000", "00001", "00010", "00100", "01000", "10000", "00000"}},
      {'%', {"11000", "11001", "00010", "00100", "01000", "10011", "00011"}},
      {',', {"00000", "00000", "00000", "00000", "01100", "00100", "01000"}},
  };
  return glyphs;
}

struct Rgb {
  std::uint8_t r, g, b;
};

const std::array<Rgb, 8> kPalette{{{31, 119, 180},
                                   {214, 39, 40},
                                   {44, 160, 44},
                                   {255, 127, 14},
                                   {148, 103, 189},
                                   {140, 86, 75},
                                   {227, 119, 194},
                                   {23, 190, 207}}};

class Canvas {
 public:
  explicit Canvas(int w, int h) : img_{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 255)} {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    auto* p = &img_.rgb[(static_cast<std::size_t>(y) * img_.width + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
  }

  void line(int x0, int y0, int x1, int y1, Rgb c, int thick = 1) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      rect(x0 - thick / 2, y0 - thick / 2, x0 + (thick - 1) / 2, y0 + (thick - 1) / 2, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  // Returns the rendered width in pixels.
  int text(int x, int y, const std::string& s, Rgb c, int scale = 2, bool vertical = false) {
    const auto& f = font();
    int cursor = 0;
    for (char ch : s) {
      char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      auto it = f.find(key);
      if (it == f.end()) it = f.find(' ');
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 5; ++col) {
          if (it->second[static_cast<std::size_t>(row)][col] != '1') continue;
          for (int a = 0; a < scale; ++a)
            for (int b = 0; b < scale; ++b) {
              const int u = cursor + col * scale + a;
              const int v = row * scale + b;
              if (vertical) {
                set(x + v, y - u, c);
              } else {
                set(x + u, y + v, c);
              }
            }
        }
      }
      cursor += 6 * scale;
    }
    return cursor;
  }

  static int text_width(const std::string& s, int scale = 2) { return static_cast<int>(s.size()) * 6 * scale; }

  Image take() { return std::move(img_); }

 private:
  Image img_;
};

std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  const double span = hi - lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= target) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + 1e-9 * step; t += step) {
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

Image render_plot(const PlotPlan& desc, int width, int height) {
  Canvas cv(width, height);
  const Rgb black{0, 0, 0}, grid{225, 225, 225};
  const int left = 90, right = width - 20, top = 50, bottom = height - 60;

  auto ty = [&](double y) { return desc.log_y ? std::log10(y) : y; };
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : desc.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (desc.log_y && s.y[i] <= 0.0)) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, ty(s.y[i]));
      ymax = std::max(ymax, ty(s.y[i]));
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double xpad = 0.03 * (xmax - xmin);
  xmin -= xpad;
  xmax += xpad;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  if (desc.log_y) {
    ymin = std::floor(ymin);
    ymax = std::ceil(ymax);
  }

  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };

  for (double t : nice_ticks(xmin, xmax)) {
    const int x = px(t);
    cv.line(x, top, x, bottom, grid);
    cv.line(x, bottom, x, bottom + 5, black);
    const auto label = tick_label(t);
    cv.text(x - Canvas::text_width(label, 1) / 2, bottom + 9, label, black, 1);
  }
  std::vector<double> yticks;
  if (desc.log_y) {
    for (double e = ymin; e <= ymax + 1e-9; e += 1.0) yticks.push_back(e);
  } else {
    yticks = nice_ticks(ymin, ymax);
  }
  for (double t : yticks) {
    const int y = py(t);
    cv.line(left, y, right, y, grid);
    cv.line(left - 5, y, left, y, black);
    const auto label = desc.log_y ? "1e" + std::to_string(static_cast<int>(std::lround(t))) : tick_label(t);
    cv.text(left - 8 - Canvas::text_width(label, 1), y - 3, label, black, 1);
  }
  cv.line(left, top, left, bottom, black);
  cv.line(left, bottom, right, bottom, black);
  cv.line(right, top, right, bottom, black);
  cv.line(left, top, right, top, black);

  cv.text((width - Canvas::text_width(desc.title)) / 2, 15, desc.title, black);
  cv.text((left + right - Canvas::text_width(desc.xlabel)) / 2, height - 28, desc.xlabel, black);
  cv.text(15, (top + bottom + Canvas::text_width(desc.ylabel)) / 2, desc.ylabel, black, 2, true);

  for (std::size_t k = 0; k < desc.series.size(); ++k) {
    const auto& s = desc.series[k];
    const Rgb c = kPalette[k % kPalette.size()];
    int prev_x = 0, prev_y = 0;
    bool have_prev = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (desc.log_y && s.y[i] <= 0.0)) {
        have_prev = false;
        continue;
      }
      const int x = px(s.x[i]);
      const int y = py(ty(s.y[i]));
      if (have_prev) cv.line(prev_x, prev_y, x, y, c, 2);
      cv.rect(x - 2, y - 2, x + 2, y + 2, c);
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
    const int ly = top + 8 + static_cast<int>(k) * 18;
    const int lx = right - 10 - Canvas::text_width(s.label) - 24;
    cv.rect(lx, ly + 3, lx + 16, ly + 9, c);
    cv.text(lx + 22, ly, s.label, black);
  }
  return cv.take();
}

std::string encode_png(const Image& image) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&image.rgb[static_cast<std::size_t>(y) * image.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(const std::string& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out{static_cast<int>(img.width), static_cast<int>(img.height), {}};
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error(std::string("png: ") + img.message);
  }
  return out;
}

std::vector<HistoryRow> read_history_csv(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::vector<HistoryRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = core::split_csv_line(line);
    if (f.size() != 4) throw std::runtime_error(path.string() + ": malformed history row");
    rows.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return rows;
}

std::vector<PlotPlan> plan_plots(const fs::path& root) {
  std::vector<PlotPlan> plots;
  const auto runs = collect_runs(root);
  for (const auto& r : runs) {
    const fs::path hist = r.dir / "history.csv";
    if (!fs::exists(hist)) {
      log::warn("no history.csv in " + r.dir.string() + "; skipping its loss plot");
      continue;
    }
    PlotPlan p;
    p.filename = "loss_" + r.name + "_" + r.variant + "_r" + ratio_label(r.ratio) + "_s" + std::to_string(r.seed) + ".png";
    p.title = r.name + " " + r.variant + " ratio " + ratio_label(r.ratio) + " seed " + std::to_string(r.seed);
    p.xlabel = "epoch";
    p.ylabel = "loss";
    p.log_y = true;
    std::map<std::string, std::pair<Series, Series>> by_stage;
    std::vector<std::string> order;
    for (const auto& h : read_history_csv(hist)) {
      if (!by_stage.contains(h.stage)) {
        order.push_back(h.stage);
        by_stage[h.stage] = {Series{h.stage + " train", {}, {}}, Series{h.stage + " val", {}, {}}};
      }
      auto& [tr, va] = by_stage[h.stage];
      tr.x.push_back(h.epoch);
      tr.y.push_back(h.train_loss);
      va.x.push_back(h.epoch);
      va.y.push_back(h.val_loss);
    }
    for (const auto& s : order) {
      p.series.push_back(by_stage[s].first);
      p.series.push_back(by_stage[s].second);
    }
    plots.push_back(std::move(p));
  }

  const auto rows = summarize(runs);
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.name);
  for (const auto& name : names) {
    std::set<double> ratios;
    for (const auto& r : rows) {
      if (r.name == name) ratios.insert(r.ratio);
    }
    if (ratios.size() < 2) continue;
    for (const std::string metric : {"mse", "mae"}) {
      PlotPlan p;
      p.filename = "fewshot_" + name + "_" + metric + ".png";
      p.title = name + " few-shot test " + metric;
      p.xlabel = "training data ratio";
      p.ylabel = "test " + metric;
      std::map<std::string, Series> by_variant;
      for (const auto& r : rows) {
        if (r.name != name || r.mse.n == 0) continue;
        auto& s = by_variant[r.variant];
        s.label = r.variant;
        s.x.push_back(r.ratio);
        s.y.push_back(metric == "mse" ? r.mse.mean : r.mae.mean);
      }
      for (auto& [v, s] : by_variant) p.series.push_back(std::move(s));
      plots.push_back(std::move(p));
    }
  }

  // Sensitivity: complete runs at the full ratio grouped by one hyperparameter value.
  std::map<std::string, std::map<double, std::vector<double>>> by_hparam;
  for (const auto& r : runs) {
    if (!r.ok || r.variant != "complete" || r.ratio != 1.0) continue;
    for (const auto& [key, value] : r.hparams.items()) {
      if (value.is_number()) by_hparam[key][value.get<double>()].push_back(r.mse);
    }
  }
  for (const auto& [key, values] : by_hparam) {
    if (values.size() < 2) continue;
    PlotPlan p;
    p.filename = "sensitivity_" + key + ".png";
    p.title = "sensitivity to " + key;
    p.xlabel = key;
    p.ylabel = "test mse";
    Series s{"complete", {}, {}};
    for (const auto& [x, mses] : values) {
      s.x.push_back(x);
      s.y.push_back(mean_std(mses).mean);
    }
    p.series.push_back(std::move(s));
    plots.push_back(std::move(p));
  }
  return plots;
}

std::vector<fs::path> emit_plots(const fs::path& root) {
  const auto plots = plan_plots(root);
  if (plots.empty()) {
    log::warn("no plots to emit under " + root.string());
    return {};
  }
  const fs::path dir = root / "plots";
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (const auto& p : plots) {
    const fs::path file = dir / p.filename;
    io::write_atomic(file, encode_png(render_plot(p)));
    out.push_back(file);
  }
  return out;
}

}  // namespace vimts::harness
