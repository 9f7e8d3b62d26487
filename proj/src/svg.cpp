#include "eghn/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eghn/errors.hpp"

namespace eghn {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  double map(double v, double out_lo, double out_hi) const {
    if (hi <= lo) return 0.5 * (out_lo + out_hi);
    return out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo);
  }
};

Range span(const std::vector<double>& v) {
  Range r;
  if (v.empty()) return r;
  r.lo = *std::min_element(v.begin(), v.end());
  r.hi = *std::max_element(v.begin(), v.end());
  const double pad = 0.05 * std::max(r.hi - r.lo, 1e-9);
  r.lo -= pad;
  r.hi += pad;
  return r;
}

}  // namespace

std::string scatter_svg(const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::vector<int>& cluster_ids, const std::string& title) {
  const int w = 480, h = 480, margin = 40;
  Range rx = span(xs), ry = span(ys);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << w - 2 * margin << "\" height=\""
     << h - 2 * margin << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  for (size_t i = 0; i < xs.size(); ++i) {
    const double cx = rx.map(xs[i], margin, w - margin);
    const double cy = ry.map(ys[i], h - margin, margin);
    const int cluster = i < cluster_ids.size() ? cluster_ids[i] : 0;
    const char* color = kPalette[static_cast<size_t>(cluster % 10)];
    os << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"6\" fill=\"" << color
       << "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string loss_curves_svg(const std::vector<double>& train, const std::vector<double>& val,
                            const std::string& title) {
  const int w = 560, h = 360, margin = 45;
  std::vector<double> all = train;
  all.insert(all.end(), val.begin(), val.end());
  Range ry = span(all);
  const int epochs = static_cast<int>(std::max(train.size(), val.size()));
  Range rx{0.0, std::max(1.0, static_cast<double>(epochs - 1))};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << w - 2 * margin << "\" height=\""
     << h - 2 * margin << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  auto polyline = [&](const std::vector<double>& curve, const char* color) {
    if (curve.empty()) return;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < curve.size(); ++i) {
      os << fmt(rx.map(static_cast<double>(i), margin, w - margin)) << ","
         << fmt(ry.map(curve[i], h - margin, margin)) << " ";
    }
    os << "\"/>\n";
  };
  polyline(train, "#1f77b4");
  polyline(val, "#d62728");
  os << "<text x=\"" << w - margin - 100 << "\" y=\"" << margin + 16 << "\" font-size=\"12\" fill=\"#1f77b4\">train</text>\n";
  os << "<text x=\"" << w - margin - 100 << "\" y=\"" << margin + 32 << "\" font-size=\"12\" fill=\"#d62728\">val</text>\n";
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("failed writing: " + path);
}

}  // namespace eghn
