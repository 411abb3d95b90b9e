#pragma once

namespace ccdnet {

/// Pins Eigen/OpenMP worker counts. Runs are reproducible for a fixed thread
/// count, so configs carry it explicitly.
void set_compute_threads(int n);

int compute_threads();

}  // namespace ccdnet
