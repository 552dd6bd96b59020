#include "dyntask/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dyntask/data.hpp"
#include "dyntask/errors.hpp"

namespace dyntask {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
const char* const kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string f(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f(w) + "\" height=\"" + f(h) +
         "\" viewBox=\"0 0 " + f(w) + " " + f(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    return {lo - pad, hi + pad};
  }
  return {lo, hi};
}

}  // namespace

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw DataError("csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      throw DataError("csv line " + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " cells, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

CsvTable CsvTable::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void CsvTable::require_columns(const std::vector<std::string>& names) const {
  for (const auto& n : names) {
    if (std::find(header.begin(), header.end(), n) == header.end()) {
      throw DataError("csv is missing column '" + n + "'");
    }
  }
}

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("csv is missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::optional<double> CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row)[column(name)];
  if (cell.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError("csv row " + std::to_string(row + 2) + ", column '" + name + "': not a number: " + cell);
  }
}

std::string render_line_chart(const LineChart& chart) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : chart.series) {
    for (double v : s.x) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
    for (double v : s.y) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1;
  if (!std::isfinite(ylo)) ylo = 0, yhi = 1;
  std::tie(xlo, xhi) = chart.x_range.value_or(padded(xlo, xhi));
  std::tie(ylo, yhi) = chart.y_range.value_or(padded(ylo, yhi));
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xlo) / (xhi - xlo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - ylo) / (yhi - ylo) * ph; };

  std::string out = svg_open(kWidth, kHeight);
  out += "<text x=\"" + f(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         esc(chart.title) + "</text>\n";
  out += "<g class=\"axes\" stroke=\"black\" data-x-range=\"" + f(xlo) + "," + f(xhi) + "\" data-y-range=\"" +
         f(ylo) + "," + f(yhi) + "\">\n";
  out += "<line x1=\"" + f(kLeft) + "\" y1=\"" + f(kTop + ph) + "\" x2=\"" + f(kLeft + pw) + "\" y2=\"" +
         f(kTop + ph) + "\"/>\n";
  out += "<line x1=\"" + f(kLeft) + "\" y1=\"" + f(kTop) + "\" x2=\"" + f(kLeft) + "\" y2=\"" +
         f(kTop + ph) + "\"/>\n</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xlo + (xhi - xlo) * i / 4.0, yv = ylo + (yhi - ylo) * i / 4.0;
    out += "<text class=\"xtick\" x=\"" + f(px(xv)) + "\" y=\"" + f(kTop + ph + 16) +
           "\" text-anchor=\"middle\">" + f(xv) + "</text>\n";
    out += "<text class=\"ytick\" x=\"" + f(kLeft - 6) + "\" y=\"" + f(py(yv) + 4) +
           "\" text-anchor=\"end\">" + f(yv) + "</text>\n";
  }
  out += "<text x=\"" + f(kLeft + pw / 2) + "\" y=\"" + f(kHeight - 12) + "\" text-anchor=\"middle\">" +
         esc(chart.x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + f(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         f(kTop + ph / 2) + ")\">" + esc(chart.y_label) + "</text>\n";
  for (std::size_t i = 0; i < chart.series.size(); ++i) {
    const Series& s = chart.series[i];
    const char* color = kColors[i % 5];
    out += "<polyline class=\"series\" data-label=\"" + esc(s.label) + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < s.x.size(); ++j) {
      if (j) out += ' ';
      out += f(px(s.x[j])) + "," + f(py(s.y[j]));
    }
    out += "\"/>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(i);
    out += "<line x1=\"" + f(kLeft + pw + 15) + "\" y1=\"" + f(ly) + "\" x2=\"" + f(kLeft + pw + 40) +
           "\" y2=\"" + f(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text class=\"legend\" x=\"" + f(kLeft + pw + 46) + "\" y=\"" + f(ly + 4) + "\">" + esc(s.label) +
           "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string render_heatmap(const std::string& title, std::size_t k, const std::vector<double>& counts,
                           const std::vector<std::string>& labels) {
  if (counts.size() != k * k) throw DimensionError("heatmap needs k*k counts");
  const double cell = 48, left = 90, top = 50;
  const double w = left + cell * static_cast<double>(k) + 20, h = top + cell * static_cast<double>(k) + 60;
  const double peak = counts.empty() ? 0.0 : *std::max_element(counts.begin(), counts.end());
  std::string out = svg_open(w, h);
  out += "<text x=\"" + f(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + esc(title) +
         "</text>\n";
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      const double v = counts[r * k + c];
      const double shade = peak > 0 ? v / peak : 0.0;
      const int g = static_cast<int>(std::lround(255 * (1.0 - 0.8 * shade)));
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02xff", g, g);
      const double x = left + cell * static_cast<double>(c), y = top + cell * static_cast<double>(r);
      out += "<rect class=\"cell\" data-truth=\"" + std::to_string(r) + "\" data-predicted=\"" +
             std::to_string(c) + "\" x=\"" + f(x) + "\" y=\"" + f(y) + "\" width=\"" + f(cell) +
             "\" height=\"" + f(cell) + "\" fill=\"" + fill + "\" stroke=\"#888\"/>\n";
      out += "<text x=\"" + f(x + cell / 2) + "\" y=\"" + f(y + cell / 2 + 4) + "\" text-anchor=\"middle\">" +
             f(v) + "</text>\n";
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    const std::string name = i < labels.size() ? labels[i] : std::to_string(i);
    out += "<text x=\"" + f(left - 6) + "\" y=\"" + f(top + cell * (i + 0.5) + 4) + "\" text-anchor=\"end\">" +
           esc(name) + "</text>\n";
    out += "<text x=\"" + f(left + cell * (i + 0.5)) + "\" y=\"" + f(top + cell * k + 16) +
           "\" text-anchor=\"middle\">" + esc(name.substr(0, 3)) + "</text>\n";
  }
  out += "<text x=\"" + f(left + cell * k / 2) + "\" y=\"" + f(h - 12) +
         "\" text-anchor=\"middle\">predicted</text>\n";
  out += "</svg>\n";
  return out;
}

namespace {

LineChart runlog_chart(const CsvTable& t, const std::string& title, const std::vector<std::string>& cols) {
  std::vector<std::string> need{"step"};
  need.insert(need.end(), cols.begin(), cols.end());
  t.require_columns(need);
  LineChart chart{title, "step", title, {}, std::nullopt, std::nullopt};
  for (const auto& c : cols) {
    Series s{c, {}, {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto x = t.number(r, "step");
      auto y = t.number(r, c);
      if (!x || !y) continue;
      s.x.push_back(*x);
      s.y.push_back(*y);
    }
    chart.series.push_back(std::move(s));
  }
  return chart;
}

}  // namespace

std::string plot_weights(const CsvTable& runlog) {
  LineChart chart = runlog_chart(runlog, "task weights", {"w1", "w2"});
  chart.y_range = {0.0, 1.0};
  return render_line_chart(chart);
}

std::string plot_loss(const CsvTable& runlog) {
  return render_line_chart(runlog_chart(runlog, "loss", {"l1", "l2", "l3"}));
}

std::string plot_roc(const CsvTable& roc) {
  roc.require_columns({"fpr", "tpr"});
  Series s{"ROC", {}, {}};
  for (std::size_t r = 0; r < roc.rows.size(); ++r) {
    s.x.push_back(roc.number(r, "fpr").value_or(0.0));
    s.y.push_back(roc.number(r, "tpr").value_or(0.0));
  }
  LineChart chart{"ROC", "false positive rate", "true positive rate", {s}, std::pair{0.0, 1.0},
                  std::pair{0.0, 1.0}};
  return render_line_chart(chart);
}

std::string plot_confusion(const CsvTable& t) {
  t.require_columns({"truth", "predicted", "count"});
  std::size_t k = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    k = std::max(k, static_cast<std::size_t>(t.number(r, "truth").value_or(0)) + 1);
    k = std::max(k, static_cast<std::size_t>(t.number(r, "predicted").value_or(0)) + 1);
  }
  std::vector<double> counts(k * k, 0.0);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto tr = t.number(r, "truth"), pr = t.number(r, "predicted"), c = t.number(r, "count");
    if (!tr || !pr || !c) throw DataError("csv row " + std::to_string(r + 2) + ": empty cell");
    counts[static_cast<std::size_t>(*tr) * k + static_cast<std::size_t>(*pr)] += *c;
  }
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < k && i < kExpressionNames.size(); ++i) labels.emplace_back(kExpressionNames[i]);
  return render_heatmap("expression confusion", k, counts, labels);
}

std::string plot_csv(const std::string& kind, const CsvTable& table) {
  if (kind == "weights") return plot_weights(table);
  if (kind == "loss") return plot_loss(table);
  if (kind == "roc") return plot_roc(table);
  if (kind == "confusion") return plot_confusion(table);
  throw ConfigError("unknown plot kind '" + kind + "'");
}

}  // namespace dyntask
