#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tripspeed/kinematics.hpp"

namespace tripspeed {

inline constexpr int kNumLevels = 6;

/// Per-point speeding proportion, (speed - limit) / limit. Throws
/// std::invalid_argument for a non-positive limit.
double point_speeding(double speed_mph, double speed_limit_mph);

/// Speeding level from a non-negative proportion: left-closed bins at
/// 0.05, 0.20, 0.40, 0.60, 0.80; everything from 0.80 up is level 5.
int bin_level(double speeding_prop);

/// Lower edges of levels 1..5.
inline constexpr std::array<double, 5> kLevelEdges = {0.05, 0.20, 0.40, 0.60, 0.80};

/// One aggregated journey. Field names follow the descriptive-statistics
/// table of the source dataset, including its spelling of Commerical_prop.
///
/// hardbrake_count and hardacc_count are sums of signed accelerations over
/// the braking / accelerating intervals, not event counts. moving_yaw_rate
/// is a sum of yaw rates over turning intervals.
struct JourneyFeatures {
  std::string journey_id;
  double timeStopped_sum = 0;
  double timeStoppedAtSignalized_sum = 0;
  double timeStoppedAtUnsignalized_sum = 0;
  double journeytime_sum = 0;
  double isSignalized = 0;
  double turn_sum = 0;
  double hardbrake_mean = 0;
  double hardbrake_min = 0;
  double hardbrake_count = 0;
  double hardacc_mean = 0;
  double hardacc_max = 0;
  double hardacc_count = 0;
  double moving_speed = 0;
  double yaw_rate_mean = 0;
  double yaw_rate_max = 0;
  double moving_yaw_rate = 0;
  double hour = 0;
  double dayofweek = 0;
  double year = 0;
  double hardbrake_prop = 0;
  double hardacc_prop = 0;
  double speeding_prop = 0;
  double Residential_prop = 0;
  double Commerical_prop = 0;
  double Industrial_prop = 0;
  double Institutional_prop = 0;
  double C1_prop = 0;
  double C2_prop = 0;
  double C3C_prop = 0;
  double C3R_prop = 0;
  double C4_prop = 0;
  int speeding_level = 0;

  static constexpr std::size_t kNumericFields = 31;  // everything except the label
  /// Names of the 31 numeric fields followed by "speeding_level".
  static const std::array<std::string_view, 32>& column_names();
  /// Numeric field by column index in [0, 31); index 31 returns the label.
  double get(std::size_t column) const;
  void set(std::size_t column, double value);
  static int column_index(std::string_view name);  // -1 when unknown
};

/// The 30 default predictors: every numeric field except speeding_prop.
std::vector<std::string> default_feature_columns();

struct FeatureParams {
  double hard_brake_thresh = 1.0;  // m/s^2 magnitude
  double hard_acc_thresh = 1.0;
  double turn_min_yaw = 8.0;       // deg/s; intervals at or above count toward moving_yaw_rate
  int utc_offset_minutes = -300;   // local time for hour / dayofweek / year
  double min_coverage = 0.5;
};

enum class Exclusion { LowCoverage, NoMovingInterval, NoMatchedMoving };
std::string_view to_string(Exclusion e);

using AggregateResult = std::variant<JourneyFeatures, Exclusion>;

AggregateResult aggregate_journey(const MatchedJourney& journey, const std::vector<MotionInterval>& intervals,
                                  const std::vector<StopEpisode>& stops, const std::vector<TurnEvent>& turns,
                                  const FeatureParams& params = {});

/// Local calendar fields for a unix timestamp at a fixed UTC offset.
struct CalendarFields {
  int year = 1970;
  int hour = 0;
  int dayofweek = 0;  // Monday = 0
};
CalendarFields calendar_fields(std::int64_t unix_seconds, int utc_offset_minutes);

/// Row-major table of selected feature columns plus the label.
struct FeatureMatrix {
  std::vector<std::string> columns;
  std::vector<double> values;  // rows * columns.size()
  std::vector<int> labels;
  std::vector<std::string> journey_ids;

  std::size_t rows() const { return labels.size(); }
  std::size_t cols() const { return columns.size(); }
  const double* row(std::size_t i) const { return values.data() + i * columns.size(); }
};

struct FeatureSelection {
  std::vector<std::string> columns = default_feature_columns();
};

struct AssembleReport {
  std::size_t rows_in = 0;
  std::size_t dropped_nonfinite = 0;
  std::vector<std::string> warnings;
};

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds the modeling matrix. Rows are ordered by journey_id. Throws
/// FeatureError on an unknown column or when no row survives.
FeatureMatrix assemble_dataset(std::vector<JourneyFeatures> rows, const FeatureSelection& selection = {},
                               AssembleReport* report = nullptr);

/// Full feature table: journey_id, 31 numeric fields, speeding_level.
void write_features_csv(std::ostream& out, const std::vector<JourneyFeatures>& rows);
/// Streaming form of write_features_csv.
void write_features_header(std::ostream& out);
void write_features_row(std::ostream& out, const JourneyFeatures& row);
std::vector<JourneyFeatures> read_features_csv(std::istream& in);

}  // namespace tripspeed
