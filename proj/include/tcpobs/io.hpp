#pragma once

// Deterministic text output: CSV with round-trip precision, atomic file
// replacement and small static SVG line charts.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "tcpobs/errors.hpp"

namespace tcpobs::io {

namespace fs = std::filesystem;

/// Shortest text that reads back to the same double ("%.17g", normalised zero).
[[nodiscard]] inline std::string fmt(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes `content` to a sibling temp file and renames it over `path`.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  static std::atomic<unsigned long> counter{0};
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(tid) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot rename onto " + path.string());
  }
}

[[nodiscard]] inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {
    line(header_);
  }

  Csv& row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(fmt(v));
    line(cells);
    return *this;
  }
  /// Mixed row: leading text cells then numbers.
  Csv& row(const std::vector<std::string>& text, const std::vector<double>& values) {
    std::vector<std::string> cells = text;
    for (double v : values) cells.push_back(fmt(v));
    line(cells);
    return *this;
  }

  [[nodiscard]] const std::string& str() const { return buf_; }
  void save(const fs::path& path) const { write_atomic(path, buf_); }

 private:
  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) buf_ += ',';
      buf_ += cells[i];
    }
    buf_ += '\n';
  }

  std::vector<std::string> header_;
  std::string buf_;
};

[[nodiscard]] inline std::string matrix_csv(const Eigen::MatrixXd& M) {
  std::string s;
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      if (c) s += ',';
      s += fmt(M(r, c));
    }
    s += '\n';
  }
  return s;
}

/// Parsed numeric CSV with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

[[nodiscard]] inline Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw ValidationError("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size())
      throw ValidationError("CSV line " + std::to_string(lineno) + " has wrong column count");
    std::vector<double> r;
    for (auto& c : cells) {
      try {
        std::size_t used = 0;
        r.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ValidationError("CSV line " + std::to_string(lineno) + ": not a number '" + c + "'");
      }
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ------------------------------------------------------------------ SVG

struct Series {
  std::string label;
  std::vector<double> y;
  std::string color;
  bool dashed = false;
};

struct Panel {
  std::string title;
  std::vector<Series> series;
};

struct Shade {
  double from = 0.0;
  double to = 0.0;
};

/**
 * Stacked line charts sharing one time axis. Each series is reduced to a
 * min/max envelope per pixel column, so long traces stay small.
 */
[[nodiscard]] inline std::string svg_chart(const std::vector<double>& t,
                                           const std::vector<Panel>& panels,
                                           const std::vector<Shade>& shades = {}) {
  const double W = 900, H = 220, ml = 70, mr = 150, mt = 26, mb = 30;
  const double pw = W - ml - mr, ph = H - mt - mb;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
    << H * static_cast<double>(panels.size()) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  if (t.empty()) {
    o << "</svg>\n";
    return o.str();
  }
  const double t0 = t.front(), t1 = std::max(t.back(), t.front() + 1e-12);
  auto X = [&](double v) { return ml + (v - t0) / (t1 - t0) * pw; };
  char num[64];
  auto f3 = [&](double v) {
    std::snprintf(num, sizeof num, "%.4g", v);
    return std::string(num);
  };
  auto px = [&](double v) {
    std::snprintf(num, sizeof num, "%.2f", v);
    return std::string(num);
  };

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& p = panels[pi];
    const double top = H * static_cast<double>(pi) + mt;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : p.series)
      for (double v : s.y)
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 1, hi += 1;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto Y = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };

    for (const auto& sh : shades)
      o << "<rect x=\"" << px(X(sh.from)) << "\" y=\"" << px(top) << "\" width=\""
        << px(std::max(0.5, X(sh.to) - X(sh.from))) << "\" height=\"" << px(ph)
        << "\" fill=\"#f4c7c3\" fill-opacity=\"0.6\"/>\n";
    o << "<rect x=\"" << ml << "\" y=\"" << px(top) << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    o << "<text x=\"" << ml << "\" y=\"" << px(top - 8) << "\" font-weight=\"bold\">" << p.title
      << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double v = lo + (hi - lo) * k / 4.0;
      o << "<text x=\"" << ml - 6 << "\" y=\"" << px(Y(v) + 4) << "\" text-anchor=\"end\">"
        << f3(v) << "</text>\n";
      const double tv = t0 + (t1 - t0) * k / 4.0;
      o << "<text x=\"" << px(X(tv)) << "\" y=\"" << px(top + ph + 16)
        << "\" text-anchor=\"middle\">" << f3(tv) << "</text>\n";
    }

    for (std::size_t si = 0; si < p.series.size(); ++si) {
      const auto& s = p.series[si];
      const std::size_t n = std::min(s.y.size(), t.size());
      if (n == 0) continue;
      const auto cols = static_cast<std::size_t>(pw);
      std::string pts;
      std::size_t k = 0;
      for (std::size_t c = 0; c < cols && k < n; ++c) {
        const double tend = t0 + (t1 - t0) * static_cast<double>(c + 1) / static_cast<double>(cols);
        double mn = INFINITY, mx = -INFINITY;
        std::size_t first = k;
        while (k < n && (t[k] <= tend || c + 1 == cols)) {
          mn = std::min(mn, s.y[k]);
          mx = std::max(mx, s.y[k]);
          ++k;
        }
        if (k == first) continue;
        const double xc = X(t[first]);
        pts += px(xc) + "," + px(Y(mn)) + " ";
        if (mx != mn) pts += px(xc) + "," + px(Y(mx)) + " ";
      }
      o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"" << pts << "\"/>\n";
      const double ly = top + 12 + 14 * static_cast<double>(si);
      o << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << px(ly - 4) << "\" x2=\"" << ml + pw + 30
        << "\" y2=\"" << px(ly - 4) << "\" stroke=\"" << s.color << "\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
      o << "<text x=\"" << ml + pw + 34 << "\" y=\"" << px(ly) << "\">" << s.label << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

[[nodiscard]] inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return colors[i % 8];
}

}  // namespace tcpobs::io
