#pragma once

#include <functional>

namespace testlet {

// Upper bound on worker threads: hardware concurrency, lowered by the
// TESTLET_THREADS environment variable when set to a positive integer.
int worker_limit();

// Runs task(0..n-1) on up to `workers` threads (<= 0 means worker_limit()).
// Tasks are claimed in index order; the first exception is rethrown after all
// workers finish.
void parallel_for(int n, int workers, const std::function<void(int)>& task);

}  // namespace testlet
