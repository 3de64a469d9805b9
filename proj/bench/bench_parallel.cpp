// Serial reference versus OpenMP kernels: per-sample gradient batches and
// test-set evaluation on the desk configuration.

#include "vimts/core/forecast_task.hpp"
#include "vimts/core/synthetic.hpp"
#include "vimts/training.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

using namespace vimts;

namespace {

double best_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP timing"};
  int samples = 64;
  int reps = 5;
  int threads = 0;
  app.add_option("--samples", samples, "Batch size");
  app.add_option("--reps", reps, "Repetitions (best time is reported)");
  app.add_option("--threads", threads, "OpenMP threads (0: runtime default)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  core::SyntheticConfig sc;
  sc.samples = samples;
  const auto tasks = core::build_forecast_tasks(core::generate_synthetic(sc, 1).dataset);
  ModelConfig mc;
  mc.channels = sc.channels;
  const VimtsModel model(mc, sc.obs_span, sc.horizon_span);
  std::vector<ModelInput> inputs;
  for (const auto& t : tasks) inputs.push_back(train::finetune_input(model, t));

  train::BatchResult serial, parallel;
  const double g_serial = best_ms(reps, [&] {
    serial = train::batch_gradients(model, inputs, p2p::HeadMode::Patch2Point, false);
  });
  const double g_parallel = best_ms(reps, [&] {
    parallel = train::batch_gradients(model, inputs, p2p::HeadMode::Patch2Point, true);
  });
  bool identical = serial.loss == parallel.loss;
  for (int i = 0; i < serial.grads.size(); ++i) {
    if (serial.grads.has(i) != parallel.grads.has(i)) identical = false;
    if (serial.grads.has(i) && serial.grads[i] != parallel.grads[i]) identical = false;
  }

  train::MetricsReport es, ep;
  const double e_serial = best_ms(reps, [&] { es = train::evaluate(model, tasks, p2p::HeadMode::Patch2Point, nullptr, false); });
  const double e_parallel = best_ms(reps, [&] { ep = train::evaluate(model, tasks, p2p::HeadMode::Patch2Point, nullptr, true); });

  std::printf("threads: %d, samples: %zu\n", omp_get_max_threads(), tasks.size());
  std::printf("%-16s %12s %12s %9s %10s\n", "kernel", "serial ms", "openmp ms", "speedup", "identical");
  std::printf("%-16s %12.2f %12.2f %9.2f %10s\n", "batch_gradients", g_serial, g_parallel, g_serial / g_parallel,
              identical ? "yes" : "NO");
  std::printf("%-16s %12.2f %12.2f %9.2f %10s\n", "evaluate", e_serial, e_parallel, e_serial / e_parallel,
              es.mse == ep.mse ? "yes" : "NO");
  return identical && es.mse == ep.mse ? 0 : 1;
}
