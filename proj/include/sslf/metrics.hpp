#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sslf/data.hpp"

namespace sslf {

// Rows are true classes, columns are predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t support(std::size_t cls) const;   // row sum
  std::uint64_t predicted(std::size_t cls) const;  // column sum
};

ConfusionMatrix confusion(const std::vector<std::size_t>& labels,
                          const std::vector<std::size_t>& predictions);

struct ReportRow {
  ClassLabel cls;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  // Zero-denominator flags: the metric is reported as 0 but was undefined.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct Averages {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassificationReport {
  std::array<ReportRow, kNumClasses> rows;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean recall over classes with support > 0
  Averages macro_avg;              // unweighted mean over classes with support > 0
  Averages weighted_avg;           // support-weighted mean over all classes
  std::uint64_t total_support = 0;
};

ClassificationReport report(const ConfusionMatrix& cm);
double balanced_accuracy(const ConfusionMatrix& cm);

enum class ReportFormat { kTextTable, kJson };

// Text: per-class rows plus accuracy / balanced accuracy / macro / weighted
// footers, 3-decimal half-away-from-zero rounding. JSON: full precision plus
// the zero-denominator flags.
std::string render(const ClassificationReport& rep, ReportFormat format);

}  // namespace sslf
