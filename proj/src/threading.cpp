#include "ccdnet/core/threading.hpp"

#include <Eigen/Core>
#include <omp.h>

namespace ccdnet {

namespace {
int g_threads = 1;
}

void set_compute_threads(int n) {
    if (n < 1) n = 1;
    g_threads = n;
    omp_set_num_threads(n);
    Eigen::setNbThreads(n);
}

int compute_threads() { return g_threads; }

}  // namespace ccdnet
