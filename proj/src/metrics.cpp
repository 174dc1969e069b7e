#include "sslf/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace sslf {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (std::uint64_t v : row) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) n += counts[c][c];
  return n;
}

std::uint64_t ConfusionMatrix::support(std::size_t cls) const {
  std::uint64_t n = 0;
  for (std::uint64_t v : counts[cls]) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::predicted(std::size_t cls) const {
  std::uint64_t n = 0;
  for (const auto& row : counts) n += row[cls];
  return n;
}

ConfusionMatrix confusion(const std::vector<std::size_t>& labels,
                          const std::vector<std::size_t>& predictions) {
  require(labels.size() == predictions.size(), ErrorKind::Shape,
          "confusion: got ", labels.size(), " labels but ", predictions.size(), " predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < kNumClasses, ErrorKind::Domain, "confusion: label out of range: ",
            labels[i]);
    require(predictions[i] < kNumClasses, ErrorKind::Domain,
            "confusion: prediction out of range: ", predictions[i]);
    ++cm.counts[labels[i]][predictions[i]];
  }
  return cm;
}

ClassificationReport report(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  require(total > 0, ErrorKind::Domain, "report: confusion matrix is empty");

  ClassificationReport rep;
  rep.total_support = total;
  rep.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

  std::size_t supported = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ReportRow& row = rep.rows[c];
    row.cls = static_cast<ClassLabel>(c);
    row.support = cm.support(c);
    const std::uint64_t tp = cm.counts[c][c];
    const std::uint64_t pred = cm.predicted(c);

    if (pred == 0) {
      row.precision_undefined = true;
    } else {
      row.precision = static_cast<double>(tp) / static_cast<double>(pred);
    }
    if (row.support == 0) {
      row.recall_undefined = true;
    } else {
      row.recall = static_cast<double>(tp) / static_cast<double>(row.support);
    }
    if (row.precision + row.recall > 0.0)
      row.f1 = 2.0 * row.precision * row.recall / (row.precision + row.recall);

    if (row.support > 0) {
      ++supported;
      rep.macro_avg.precision += row.precision;
      rep.macro_avg.recall += row.recall;
      rep.macro_avg.f1 += row.f1;
    }
    const double w = static_cast<double>(row.support) / static_cast<double>(total);
    rep.weighted_avg.precision += w * row.precision;
    rep.weighted_avg.recall += w * row.recall;
    rep.weighted_avg.f1 += w * row.f1;
  }

  rep.macro_avg.precision /= static_cast<double>(supported);
  rep.macro_avg.recall /= static_cast<double>(supported);
  rep.macro_avg.f1 /= static_cast<double>(supported);
  rep.balanced_accuracy = rep.macro_avg.recall;
  return rep;
}

double balanced_accuracy(const ConfusionMatrix& cm) { return report(cm).balanced_accuracy; }

namespace {

// Half-away-from-zero rounding to 3 decimals (values here are nonnegative).
std::string fmt3(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(3)
     << static_cast<double>(std::llround(v * 1000.0)) / 1000.0;
  return ss.str();
}

}  // namespace

std::string render(const ClassificationReport& rep, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    nlohmann::json doc;
    doc["classes"] = nlohmann::json::array();
    for (const auto& row : rep.rows) {
      doc["classes"].push_back({{"class", class_names()[static_cast<std::size_t>(row.cls)]},
                                {"precision", row.precision},
                                {"recall", row.recall},
                                {"f1", row.f1},
                                {"support", row.support},
                                {"precision_undefined", row.precision_undefined},
                                {"recall_undefined", row.recall_undefined}});
    }
    doc["accuracy"] = rep.accuracy;
    doc["balanced_accuracy"] = rep.balanced_accuracy;
    doc["macro_avg"] = {{"precision", rep.macro_avg.precision},
                        {"recall", rep.macro_avg.recall},
                        {"f1", rep.macro_avg.f1}};
    doc["weighted_avg"] = {{"precision", rep.weighted_avg.precision},
                           {"recall", rep.weighted_avg.recall},
                           {"f1", rep.weighted_avg.f1}};
    doc["total_support"] = rep.total_support;
    return doc.dump(2);
  }

  std::ostringstream out;
  const int name_w = 18, col_w = 11;
  out << std::left << std::setw(name_w) << "Class" << std::right << std::setw(col_w)
      << "Precision" << std::setw(col_w) << "Recall" << std::setw(col_w) << "F1-Score"
      << std::setw(col_w) << "Support" << "\n";
  for (const auto& row : rep.rows) {
    out << std::left << std::setw(name_w) << class_names()[static_cast<std::size_t>(row.cls)]
        << std::right << std::setw(col_w) << fmt3(row.precision) << std::setw(col_w)
        << fmt3(row.recall) << std::setw(col_w) << fmt3(row.f1) << std::setw(col_w)
        << row.support << "\n";
  }
  out << std::left << std::setw(name_w) << "Accuracy" << std::right
      << std::setw(3 * col_w) << fmt3(rep.accuracy) << std::setw(col_w) << rep.total_support
      << "\n";
  out << std::left << std::setw(name_w) << "Balanced Accuracy" << std::right
      << std::setw(3 * col_w) << fmt3(rep.balanced_accuracy) << std::setw(col_w)
      << rep.total_support << "\n";
  out << std::left << std::setw(name_w) << "Macro Avg" << std::right << std::setw(col_w)
      << fmt3(rep.macro_avg.precision) << std::setw(col_w) << fmt3(rep.macro_avg.recall)
      << std::setw(col_w) << fmt3(rep.macro_avg.f1) << std::setw(col_w) << rep.total_support
      << "\n";
  out << std::left << std::setw(name_w) << "Weighted Avg" << std::right << std::setw(col_w)
      << fmt3(rep.weighted_avg.precision) << std::setw(col_w) << fmt3(rep.weighted_avg.recall)
      << std::setw(col_w) << fmt3(rep.weighted_avg.f1) << std::setw(col_w) << rep.total_support
      << "\n";
  return out.str();
}

}  // namespace sslf
