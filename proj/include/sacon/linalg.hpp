// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <vector>

namespace sacon {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Rng;

/// Norm selector for parameter vectors. Every bound in the library is stated
/// relative to one of these.
enum class Norm { Sup, Euclidean, One };

double norm(const Vector& v, Norm kind);
Norm parse_norm(std::string_view name);
std::string_view to_string(Norm kind);

/// Norm of the all-ones vector in R^d.
double kappa(int dim, Norm kind);

/// Uniform-ish draw from the closed ball of the given radius: uniform in the
/// cube for Sup, uniform in volume for Euclidean and One.
Vector sample_in_ball(Rng& rng, int dim, double radius, Norm kind);

/// Extreme points of the ball used to seed sampled maximisations. For Sup this
/// is every sign vector when 2^dim <= max_count, otherwise max_count random
/// sign vectors drawn from rng.
std::vector<Vector> ball_vertices(Rng& rng, int dim, double radius, Norm kind, int max_count = 1024);

/// Max-row-sum operator norm (induced by the sup-norm on vectors).
double inf_operator_norm(const Matrix& m);

}  // namespace sacon
