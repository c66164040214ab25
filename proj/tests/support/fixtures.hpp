#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tripspeed/features.hpp"
#include "tripspeed/roadnet.hpp"

namespace fixtures {

using tripspeed::FeatureMatrix;

FeatureMatrix make_matrix(std::vector<std::string> columns, std::vector<double> values, std::vector<int> labels);

/// Six-class benchmark: eight U(0,1) features, labels from a score built of
/// axis-aligned steps, an XOR pair, a linear ramp and a mild quadratic term.
/// Features x6 and x7 carry no signal.
FeatureMatrix nonlinear_six_class(std::size_t n, std::uint64_t seed);
int nonlinear_six_class_label(const double* x);

/// Isotropic Gaussian clouds centred at `centers` (one per class), sigma 1.
FeatureMatrix gaussian_clouds(const std::vector<std::vector<double>>& centers, std::size_t per_class,
                              std::uint64_t seed);

/// Two-class XOR on x0, x1 in U(-1, 1).
FeatureMatrix xor_dataset(std::size_t n, std::uint64_t seed);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

/// Straight east-west road with one signalized intersection at each end,
/// centred near (28.7, -81.3). Length ~500 m, limit 40 mph.
tripspeed::Network straight_road();

}  // namespace fixtures
