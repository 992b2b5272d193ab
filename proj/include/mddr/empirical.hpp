// Copyright 2026 The mddr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <utility>

#include "mddr/error.hpp"

namespace mddr {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;

// Uniform-weight point cloud: M atoms in R^d, each carrying mass 1/M.
class EmpiricalDistribution {
 public:
  EmpiricalDistribution() = default;

  explicit EmpiricalDistribution(Matrix points) : points_(std::move(points)) {
    detail::require(points_.rows() >= 1 && points_.cols() >= 1,
                    "empirical distribution needs at least one atom and one "
                    "dimension, got " +
                        std::to_string(points_.rows()) + "x" +
                        std::to_string(points_.cols()));
    detail::require(points_.allFinite(),
                    "empirical distribution has non-finite entries");
  }

  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }
  bool empty() const { return points_.rows() == 0; }

  const Matrix& points() const { return points_; }
  auto atom(Index i) const { return points_.row(i); }

 private:
  Matrix points_;
};

// Concatenation of atom sets; with equal atom counts and r copies of `a`
// against s copies of `b` this realizes the mixture (r a + s b) / (r + s).
inline EmpiricalDistribution concatenate(const EmpiricalDistribution& a,
                                         int copies_a,
                                         const EmpiricalDistribution& b,
                                         int copies_b) {
  detail::require(a.dim() == b.dim(), "concatenate: dimension mismatch");
  detail::require(copies_a >= 0 && copies_b >= 0 && copies_a + copies_b > 0,
                  "concatenate: copy counts must be nonnegative");
  Matrix out(a.size() * copies_a + b.size() * copies_b, a.dim());
  Index row = 0;
  for (int c = 0; c < copies_a; ++c, row += a.size())
    out.middleRows(row, a.size()) = a.points();
  for (int c = 0; c < copies_b; ++c, row += b.size())
    out.middleRows(row, b.size()) = b.points();
  return EmpiricalDistribution(std::move(out));
}

}  // namespace mddr
