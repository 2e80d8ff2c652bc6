#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "rtgformer/eval.hpp"

namespace rtgf::eval {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 20;
constexpr double kTop = 40;
constexpr double kBottom = 60;

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
         "</text>\n";
}

struct Range {
  double lo;
  double hi;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(hi) * 0.1, 1.0);
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

std::string axes(Range y, const std::string& y_label, const std::string& x_label) {
  const double plot_h = kHeight - kTop - kBottom;
  std::string s;
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
       num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kHeight - kBottom) + "\" x2=\"" + num(kWidth - kRight) +
       "\" y2=\"" + num(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = kHeight - kBottom - plot_h * i / 4.0;
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\">" + tick(v) + "</text>\n";
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(py) + "\" x2=\"" + num(kWidth - kRight) + "\" y2=\"" +
         num(py) + "\" stroke=\"#ddd\"/>\n";
  }
  s += "<text transform=\"translate(16," + num(kTop + plot_h / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape(y_label) + "</text>\n";
  if (!x_label.empty()) {
    s += "<text x=\"" + num(kLeft + (kWidth - kLeft - kRight) / 2) + "\" y=\"" + num(kHeight - 16) +
         "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  }
  return s;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw EvalError("svg_line_chart: x and y differ in length");
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(ys[i])) continue;
    xlo = std::min(xlo, xs[i]);
    xhi = std::max(xhi, xs[i]);
    ylo = std::min(ylo, ys[i]);
    yhi = std::max(yhi, ys[i]);
  }
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  std::string s = header(title) + axes(yr, y_label, x_label);
  for (int i = 0; i <= 4; ++i) {
    const double v = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    s += "<text x=\"" + num(kLeft + plot_w * i / 4.0) + "\" y=\"" + num(kHeight - kBottom + 16) +
         "\" text-anchor=\"middle\">" + tick(v) + "</text>\n";
  }
  std::string pts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(ys[i])) continue;
    const double px = kLeft + plot_w * (xs[i] - xr.lo) / (xr.hi - xr.lo);
    const double py = kHeight - kBottom - plot_h * (ys[i] - yr.lo) / (yr.hi - yr.lo);
    pts += num(px) + "," + num(py) + " ";
  }
  s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n</svg>\n";
  return s;
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label, std::span<const std::string> labels,
                          std::span<const double> values, std::span<const double> errors) {
  if (labels.size() != values.size()) throw EvalError("svg_bar_chart: labels and values differ in length");
  if (!errors.empty() && errors.size() != values.size()) throw EvalError("svg_bar_chart: errors differ in length");
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = errors.empty() ? 0.0 : errors[i];
    if (!std::isfinite(values[i])) continue;
    lo = std::min(lo, values[i] - e);
    hi = std::max(hi, values[i] + e);
  }
  const Range yr = padded(lo, hi);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto ypix = [&](double v) { return kHeight - kBottom - plot_h * (v - yr.lo) / (yr.hi - yr.lo); };
  std::string s = header(title) + axes(yr, y_label, "");
  const double slot = values.empty() ? plot_w : plot_w / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" +
         escape(labels[i]) + "</text>\n";
    if (!std::isfinite(values[i])) continue;
    const double top = ypix(std::max(values[i], 0.0));
    const double bottom = ypix(std::min(values[i], 0.0));
    s += "<rect x=\"" + num(cx - slot * 0.3) + "\" y=\"" + num(top) + "\" width=\"" + num(slot * 0.6) +
         "\" height=\"" + num(bottom - top) + "\" fill=\"#4c72b0\"/>\n";
    if (!errors.empty() && errors[i] > 0.0) {
      s += "<line x1=\"" + num(cx) + "\" y1=\"" + num(ypix(values[i] - errors[i])) + "\" x2=\"" + num(cx) +
           "\" y2=\"" + num(ypix(values[i] + errors[i])) + "\" stroke=\"black\"/>\n";
    }
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(top - 4) + "\" text-anchor=\"middle\">" + tick(values[i]) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace rtgf::eval
