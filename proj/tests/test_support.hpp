#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <vector>

#include "piu/linalg.hpp"

// Shared oracles for the test binaries: everything here is implemented from
// first principles, independent of the library code it checks.

namespace testsup {

inline double raw_cosine(const piu::Vec& u, const piu::Vec& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// Textbook DBSCAN under cosine distance: neighborhoods at distance <= eps
// including the point itself, cores at min_pts neighbors, clusters numbered
// by discovery order over ascending point index, noise -1.
inline std::vector<int> reference_dbscan(const std::vector<piu::Vec>& pts,
                                         double eps, int min_pts) {
  const int n = static_cast<int>(pts.size());
  auto neighbors = [&](int i) {
    std::vector<int> nb;
    for (int j = 0; j < n; ++j) {
      if (1.0 - raw_cosine(pts[i], pts[j]) <= eps) nb.push_back(j);
    }
    return nb;
  };

  std::vector<int> label(n, -2);  // -2 unvisited, -1 noise
  int next_cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    const auto nb = neighbors(i);
    if (static_cast<int>(nb.size()) < min_pts) {
      label[i] = -1;
      continue;
    }
    const int c = next_cluster++;
    label[i] = c;
    std::deque<int> queue(nb.begin(), nb.end());
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      if (label[p] == -1) label[p] = c;  // border point claimed from noise
      if (label[p] != -2) continue;
      label[p] = c;
      const auto nb2 = neighbors(p);
      if (static_cast<int>(nb2.size()) >= min_pts) {
        for (int q : nb2) queue.push_back(q);
      }
    }
  }
  return label;
}

// Central finite difference of f along coordinate i of theta.
template <class F>
double central_diff(F&& f, std::vector<double>& theta, std::size_t i) {
  const double h = 1e-5 * std::max(1.0, std::fabs(theta[i]));
  const double saved = theta[i];
  theta[i] = saved + h;
  const double up = f();
  theta[i] = saved - h;
  const double down = f();
  theta[i] = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace testsup
