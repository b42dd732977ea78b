/* Copyright 2026 The iCaps Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef ICAPS_TESTS_SUPPORT_ORACLES_HPP_
#define ICAPS_TESTS_SUPPORT_ORACLES_HPP_

// Straight-line reference computations written without the library's
// kernels, used to cross-check the optimized code paths.

#include <cmath>
#include <cstddef>
#include <vector>

namespace icaps::oracle {

using Vec = std::vector<double>;

inline Vec squash(const Vec& s) {
  double sq = 0.0;
  for (double v : s) sq += v * v;
  Vec out(s.size(), 0.0);
  if (sq == 0.0) return out;
  const double scale = sq / (1.0 + sq) / std::sqrt(sq);
  for (std::size_t k = 0; k < s.size(); ++k) out[k] = scale * s[k];
  return out;
}

struct Routing {
  std::vector<Vec> caps;  // J x d_c
  std::vector<Vec> beta;  // I x J, weights of the last iteration
};

// u[i][j] is the prediction vector from primary capsule i to class j.
inline Routing dynamic_routing(const std::vector<std::vector<Vec>>& u, std::size_t r) {
  const std::size_t I = u.size();
  const std::size_t J = u[0].size();
  const std::size_t D = u[0][0].size();
  std::vector<Vec> b(I, Vec(J, 0.0));
  Routing out;
  for (std::size_t it = 0; it < r; ++it) {
    out.beta.assign(I, Vec(J, 0.0));
    for (std::size_t i = 0; i < I; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < J; ++j) z += std::exp(b[i][j]);
      for (std::size_t j = 0; j < J; ++j) out.beta[i][j] = std::exp(b[i][j]) / z;
    }
    out.caps.assign(J, Vec(D, 0.0));
    for (std::size_t j = 0; j < J; ++j) {
      Vec s(D, 0.0);
      for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t d = 0; d < D; ++d) s[d] += out.beta[i][j] * u[i][j][d];
      }
      out.caps[j] = squash(s);
    }
    for (std::size_t i = 0; i < I; ++i) {
      for (std::size_t j = 0; j < J; ++j) {
        double agree = 0.0;
        for (std::size_t d = 0; d < D; ++d) agree += u[i][j][d] * out.caps[j][d];
        b[i][j] += agree;
      }
    }
  }
  return out;
}

// Sum over classes of the hinge-squared margin terms.
inline double margin_loss(const Vec& norms, std::size_t label) {
  double loss = 0.0;
  for (std::size_t j = 0; j < norms.size(); ++j) {
    if (j == label) {
      const double m = std::max(0.0, 0.9 - norms[j]);
      loss += m * m;
    } else {
      const double m = std::max(0.0, norms[j] - 0.1);
      loss += 0.5 * m * m;
    }
  }
  return loss;
}

}  // namespace icaps::oracle

#endif  // ICAPS_TESTS_SUPPORT_ORACLES_HPP_
