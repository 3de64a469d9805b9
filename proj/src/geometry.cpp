#include "vimts/geometry.hpp"

#include "vimts/errors.hpp"

#include <stdexcept>
#include <string>

namespace vimts {

SectionGeometry SectionGeometry::from_spans(double obs_span, double horizon_span, double section_size,
                                            double t_start) {
  if (!(section_size > 0.0)) throw ConfigError("section size must be positive");
  if (!(obs_span > 0.0) || horizon_span < 0.0) throw ConfigError("spans must be positive");
  SectionGeometry g;
  g.t_start = t_start;
  g.size = section_size;
  g.obs_end = t_start + obs_span;
  g.history = static_cast<int>(std::ceil(obs_span / section_size - 1e-9));
  g.future = static_cast<int>(std::ceil(horizon_span / section_size - 1e-9));
  if (g.history < 1) throw ConfigError("observation window shorter than one section");
  return g;
}

int section_index(double t, double t_start, double size, int sections) {
  if (!(size > 0.0) || sections < 1) throw ConfigError("section_index: invalid geometry");
  auto start = [&](int p) { return t_start + static_cast<double>(p - 1) * size; };
  const double last_edge = start(sections + 1);
  if (!(t >= t_start) || t > last_edge) {
    throw std::out_of_range("time " + std::to_string(t) + " outside [" + std::to_string(t_start) + ", " +
                            std::to_string(last_edge) + "]");
  }
  if (t == last_edge) return sections;
  int p = static_cast<int>(std::floor((t - t_start) / size)) + 1;
  if (p < 1) p = 1;
  if (p > sections) p = sections;
  // Reconcile the division with the section starts as actually computed.
  while (p > 1 && t < start(p)) --p;
  while (p < sections && t >= start(p + 1)) ++p;
  return p;
}

}  // namespace vimts
