#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dyntask {

/// Header-addressed CSV table; cells kept as text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable parse(const std::string& text);
  static CsvTable read(const std::string& path);
  // Throws DataError naming the first column that is absent.
  void require_columns(const std::vector<std::string>& names) const;
  std::size_t column(const std::string& name) const;
  // Empty cells give nullopt; malformed numbers raise DataError with the row.
  std::optional<double> number(std::size_t row, const std::string& name) const;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::optional<std::pair<double, double>> x_range;  // fixed axes instead of data bounds
  std::optional<std::pair<double, double>> y_range;
};

std::string render_line_chart(const LineChart& chart);
// counts row-major, rows = truth.
std::string render_heatmap(const std::string& title, std::size_t k,
                           const std::vector<double>& counts,
                           const std::vector<std::string>& labels);

std::string plot_weights(const CsvTable& runlog);    // needs step,w1,w2
std::string plot_loss(const CsvTable& runlog);       // needs step,l1,l2,l3
std::string plot_roc(const CsvTable& roc);           // needs fpr,tpr
std::string plot_confusion(const CsvTable& counts);  // needs truth,predicted,count

// kind in {weights, loss, roc, confusion}.
std::string plot_csv(const std::string& kind, const CsvTable& table);

}  // namespace dyntask
