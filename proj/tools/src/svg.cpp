#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace cpae::svg {

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

struct Frame {
    double x0, x1, y0, y1;
    int w, h, left = 70, right = 20, top = 40, bottom = 50;
    bool log_y;

    double ty(double v) const { return log_y ? std::log10(std::max(v, 1e-300)) : v; }
    double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
    double py(double y) const { return h - bottom - (ty(y) - y0) / (y1 - y0) * (h - top - bottom); }
};

void header(std::ostringstream& o, const ChartOptions& opt) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << opt.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(opt.title)
      << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const ChartOptions& opt) {
    o << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.w - f.left - f.right << "\" height=\""
      << f.h - f.top - f.bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
        const double y = f.h - f.bottom - (f.h - f.top - f.bottom) * i / 4.0;
        o << "<text x=\"" << f.left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
          << fmt(f.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
    }
    o << "<text x=\"" << (f.left + f.w - f.right) / 2 << "\" y=\"" << f.h - 12 << "\" text-anchor=\"middle\">"
      << esc(opt.x_label) << "</text>\n";
    o << "<text x=\"16\" y=\"" << (f.top + f.h - f.bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (f.top + f.h - f.bottom) / 2 << ")\">" << esc(opt.y_label) << "</text>\n";
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const ChartOptions& opt) {
    Frame f{};
    f.w = opt.width;
    f.h = opt.height;
    f.log_y = opt.log_y;
    f.x0 = f.y0 = std::numeric_limits<double>::infinity();
    f.x1 = f.y1 = -std::numeric_limits<double>::infinity();
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            const double err = i < s.y_err.size() ? s.y_err[i] : 0.0;
            f.x0 = std::min(f.x0, s.x[i]);
            f.x1 = std::max(f.x1, s.x[i]);
            f.y0 = std::min(f.y0, f.ty(s.y[i] - (opt.log_y ? 0.0 : err)));
            f.y1 = std::max(f.y1, f.ty(s.y[i] + err));
        }
    if (!std::isfinite(f.x0)) f.x0 = 0, f.x1 = 1, f.y0 = 0, f.y1 = 1;
    if (f.x1 == f.x0) f.x1 = f.x0 + 1;
    if (f.y1 == f.y0) f.y1 = f.y0 + 1;
    const double pad = 0.05 * (f.y1 - f.y0);
    f.y0 -= pad;
    f.y1 += pad;

    std::ostringstream o;
    header(o, opt);
    axes(o, f, opt);
    o << "<text x=\"" << f.left << "\" y=\"" << f.h - 32 << "\">" << fmt(f.x0) << "</text>\n";
    o << "<text x=\"" << f.w - f.right << "\" y=\"" << f.h - 32 << "\" text-anchor=\"end\">" << fmt(f.x1) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* c = kColors[k % 8];
        if (!s.y_err.empty()) {
            o << "<polygon fill=\"" << c << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) o << f.px(s.x[i]) << "," << f.py(s.y[i] + s.y_err[i]) << " ";
            for (std::size_t i = s.x.size(); i-- > 0;) o << f.px(s.x[i]) << "," << f.py(s.y[i] - s.y_err[i]) << " ";
            o << "\"/>\n";
        }
        if (opt.markers_only) {
            for (std::size_t i = 0; i < s.x.size(); ++i)
                o << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i]) << "\" r=\"2.5\" fill=\"" << c
                  << "\"/>\n";
        } else {
            o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.y[i])) o << f.px(s.x[i]) << "," << f.py(s.y[i]) << " ";
            o << "\"/>\n";
        }
        o << "<text x=\"" << f.w - f.right - 8 << "\" y=\"" << f.top + 16 + 16 * static_cast<int>(k)
          << "\" text-anchor=\"end\" fill=\"" << c << "\">" << esc(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::string bar_chart(const std::vector<Bar>& bars, const ChartOptions& opt) {
    Frame f{};
    f.w = opt.width;
    f.h = opt.height;
    f.log_y = false;
    f.x0 = 0;
    f.x1 = std::max<double>(1.0, static_cast<double>(bars.size()));
    f.y0 = 0;
    f.y1 = 1e-12;
    for (const auto& b : bars) f.y1 = std::max(f.y1, b.value + b.error);
    f.y1 *= 1.1;
    std::ostringstream o;
    header(o, opt);
    axes(o, f, opt);
    const double slot = (f.w - f.left - f.right) / f.x1;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double x = f.left + slot * static_cast<double>(i) + 0.15 * slot;
        const double y = f.py(b.value);
        o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << 0.7 * slot << "\" height=\"" << f.py(0) - y
          << "\" fill=\"" << kColors[0] << "\"/>\n";
        if (b.error > 0) {
            const double cx = x + 0.35 * slot;
            o << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << f.py(b.value + b.error) << "\" y2=\""
              << f.py(std::max(0.0, b.value - b.error)) << "\" stroke=\"black\"/>\n";
        }
        o << "<text x=\"" << x + 0.35 * slot << "\" y=\"" << f.h - f.bottom + 16 << "\" text-anchor=\"middle\">"
          << esc(b.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace cpae::svg
