#pragma once

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>
#include <span>
#include <vector>

namespace dbsde::testing {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n - 1.0;
  return {mean, std::sqrt(var / n)};
}

/// Sets DBSDE_THREADS for the lifetime of the object.
class ThreadCount {
 public:
  explicit ThreadCount(int n) {
    if (const char* old = std::getenv("DBSDE_THREADS")) saved_ = old;
    ::setenv("DBSDE_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ThreadCount() {
    if (saved_.empty()) ::unsetenv("DBSDE_THREADS");
    else ::setenv("DBSDE_THREADS", saved_.c_str(), 1);
  }

 private:
  std::string saved_;
};

}  // namespace dbsde::testing
