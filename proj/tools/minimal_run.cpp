// Smallest useful program: generate a stream, run the default learner,
// print per-step accuracy.

#include <cstdio>

#include "pseudocl/pseudocl.hpp"

int main() {
    pseudocl::ExperimentConfig cfg;
    cfg.data.blobs.std = 0.3;
    cfg.data.blobs.nuisance_dims = 11;
    cfg.data.blobs.nuisance_std = 1.0;
    cfg.run.step_size = 5;

    const auto ds = pseudocl::generate_gaussian_stream(cfg.data.blobs);
    const auto report = pseudocl::run_experiment(cfg.run, ds);

    std::printf("step  classes  acc     nmi     ari\n");
    for (const auto& s : report.steps)
        std::printf("%4zu  %7zu  %.4f  %.4f  %.4f\n", s.step, s.classes_seen, s.acc, s.nmi, s.ari);
    std::printf("avg acc %.4f, last acc %.4f\n", report.summary.avg_acc, report.summary.last_acc);
}
