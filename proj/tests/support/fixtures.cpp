#include "fixtures.hpp"

#include <unistd.h>

#include <atomic>
#include <random>
#include <stdexcept>

#include "tripspeed/util.hpp"

namespace fixtures {

FeatureMatrix make_matrix(std::vector<std::string> columns, std::vector<double> values, std::vector<int> labels) {
  FeatureMatrix m;
  m.columns = std::move(columns);
  m.values = std::move(values);
  m.labels = std::move(labels);
  if (m.values.size() != m.labels.size() * m.columns.size()) throw std::invalid_argument("matrix shape mismatch");
  for (std::size_t i = 0; i < m.labels.size(); ++i) m.journey_ids.push_back("r" + std::to_string(i));
  return m;
}

int nonlinear_six_class_label(const double* x) {
  const bool a = x[2] > 0.5, b = x[3] > 0.5;
  const double s = 2.0 * x[0] + 1.2 * (x[1] > 0.5) + 1.0 * (a != b) + 0.6 * (x[4] > 0.3 && x[4] < 0.7) +
                   0.3 * x[5] * x[5];
  int level = 0;
  for (double cut : {0.9, 1.7, 2.5, 3.3, 4.1}) level += s >= cut;
  return level;
}

FeatureMatrix nonlinear_six_class(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> cols;
  for (int j = 0; j < 8; ++j) cols.push_back("x" + std::to_string(j));
  std::vector<double> v(n * 8);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < 8; ++j) v[i * 8 + j] = tripspeed::uniform01(rng);
    y[i] = nonlinear_six_class_label(&v[i * 8]);
  }
  return make_matrix(std::move(cols), std::move(v), std::move(y));
}

FeatureMatrix gaussian_clouds(const std::vector<std::vector<double>>& centers, std::size_t per_class,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t d = centers.at(0).size();
  std::vector<std::string> cols;
  for (std::size_t j = 0; j < d; ++j) cols.push_back("x" + std::to_string(j));
  std::vector<double> v;
  std::vector<int> y;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < centers.size(); ++k) {
      for (std::size_t j = 0; j < d; ++j) v.push_back(centers[k][j] + tripspeed::normal01(rng));
      y.push_back(static_cast<int>(k));
    }
  return make_matrix(std::move(cols), std::move(v), std::move(y));
}

FeatureMatrix xor_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(n * 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[2 * i] = 2.0 * tripspeed::uniform01(rng) - 1.0;
    v[2 * i + 1] = 2.0 * tripspeed::uniform01(rng) - 1.0;
    y[i] = (v[2 * i] > 0.0) != (v[2 * i + 1] > 0.0);
  }
  return make_matrix({"x0", "x1"}, std::move(v), std::move(y));
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() /
           ("tripspeed_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

tripspeed::Network straight_road() {
  tripspeed::Network net;
  tripspeed::RoadSegment s;
  s.id = "seg-main";
  s.polyline = {{28.7, -81.3025}, {28.7, -81.2975}};
  s.speed_limit_mph = 40.0;
  s.context = tripspeed::ContextClass::C3R;
  s.land_use = tripspeed::LandUse::Residential;
  net.segments.push_back(s);
  net.intersections.push_back({"int-west", {28.7, -81.3025}, true});
  net.intersections.push_back({"int-east", {28.7, -81.2975}, true});
  net.report.segments = 1;
  net.report.intersections = 2;
  return net;
}

}  // namespace fixtures
