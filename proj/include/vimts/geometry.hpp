#pragma once

// Equal-width time sections shared by patchify, reconstruction and prediction.
// Sections are 1-based: section p spans [t_start + (p-1)s, t_start + ps).

#include <cmath>

namespace vimts {

struct SectionGeometry {
  double t_start = 0.0;
  double size = 0.125;
  int history = 6;  // P
  int future = 2;   // N_rec
  // End of the observation window; may fall inside section P when the
  // window is not a whole number of sections.
  double obs_end = 0.75;

  int total() const { return history + future; }
  double section_start(int p) const { return t_start + static_cast<double>(p - 1) * size; }
  double end() const { return section_start(total() + 1); }
  double history_end() const { return section_start(history + 1); }

  // P = ceil(obs_span / s), N_rec = ceil(horizon_span / s).
  static SectionGeometry from_spans(double obs_span, double horizon_span, double section_size, double t_start = 0.0);
};

// Section index i with start(i) <= t < start(i) + s; t at the far edge of the
// last section maps to `sections`. Throws std::out_of_range outside the span.
int section_index(double t, double t_start, double size, int sections);

}  // namespace vimts
