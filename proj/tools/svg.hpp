#pragma once

// Self-contained SVG line/scatter/bar charts for the CLI artifacts. Output
// depends only on the data, so plots are as reproducible as the CSVs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace facespace::svg {

enum class Mark { line, scatter, bars };

struct Series {
    std::string name;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    Mark mark = Mark::line;
};

struct Plot {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log2_x = false;
    std::vector<Series> series;
    // fixed axis ranges; NaN means from the data
    double y_min = std::numeric_limits<double>::quiet_NaN();
    double y_max = std::numeric_limits<double>::quiet_NaN();
};

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#6a3d9a", "#1b9e77", "#d9a400", "#d95f02", "#386cb0", "#666666"};
    return colors[i % 6];
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[32];
    if (v != 0.0 && (std::abs(v) >= 1e4 || std::abs(v) < 1e-2))
        std::snprintf(buf, sizeof buf, "%.1e", v);
    else
        std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

// About five round tick values covering [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi) {
    const double span = hi - lo;
    if (!(span > 0.0)) return {lo};
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    std::vector<double> t;
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return t;
}

inline std::string render(const Plot& p) {
    constexpr double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 60;
    const double pw = width - left - right, ph = height - top - bottom;
    auto tx = [&](double x) { return p.log2_x ? std::log2(x) : x; };

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : p.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, tx(s.x[i]));
            x1 = std::max(x1, tx(s.x[i]));
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!std::isnan(p.y_min)) y0 = p.y_min;
    if (!std::isnan(p.y_max)) y1 = p.y_max;
    bool has_bars = false;
    for (const auto& s : p.series) has_bars |= s.mark == Mark::bars;
    if (has_bars) y0 = std::min(y0, 0.0);
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double ypad = std::isnan(p.y_max) ? 0.05 * (y1 - y0) : 0.0;
    y1 += ypad;
    if (std::isnan(p.y_min) && !has_bars) y0 -= ypad;
    auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::string o;
    o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
    o += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(p.title) + "</text>\n";
    o += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";

    // ticks
    std::vector<double> xt;
    if (p.log2_x) {
        for (double e = std::ceil(x0); e <= x1 + 1e-9; e += 1.0) xt.push_back(std::exp2(e));
    } else {
        xt = nice_ticks(x0, x1);
    }
    for (double v : xt) {
        const double x = px(v);
        o += "<line x1=\"" + num(x) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(x) + "\" y2=\"" + num(top + ph + 5) +
             "\" stroke=\"#333\"/>";
        o += "<text x=\"" + num(x) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" + tick_label(v) +
             "</text>\n";
    }
    for (double v : nice_ticks(y0, y1)) {
        const double y = py(v);
        o += "<line x1=\"" + num(left - 5) + "\" y1=\"" + num(y) + "\" x2=\"" + num(left) + "\" y2=\"" + num(y) +
             "\" stroke=\"#333\"/>";
        o += "<text x=\"" + num(left - 8) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + tick_label(v) +
             "</text>\n";
    }
    o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height - 15) + "\" text-anchor=\"middle\">" +
         escape(p.x_label) + "</text>\n";
    o += "<text transform=\"translate(18," + num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(p.y_label) + "</text>\n";

    for (std::size_t si = 0; si < p.series.size(); ++si) {
        const auto& s = p.series[si];
        const std::string color = s.color.empty() ? palette(si) : s.color;
        if (s.mark == Mark::line) {
            std::string pts;
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.y[i])) continue;
                pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
            }
            o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        } else if (s.mark == Mark::scatter) {
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.y[i])) continue;
                o += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"2.5\" fill=\"" + color +
                     "\" fill-opacity=\"0.6\"/>";
            }
            o += "\n";
        } else {
            // bars centred on x, width from the spacing of consecutive x values
            const double step = s.x.size() > 1 ? std::abs(px(s.x[1]) - px(s.x[0])) : pw / 10.0;
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.y[i])) continue;
                const double yt = py(std::max(s.y[i], 0.0)), yb = py(std::min(s.y[i], 0.0));
                o += "<rect x=\"" + num(px(s.x[i]) - 0.45 * step) + "\" y=\"" + num(yt) + "\" width=\"" +
                     num(0.9 * step) + "\" height=\"" + num(yb - yt) + "\" fill=\"" + color +
                     "\" fill-opacity=\"0.6\"/>";
            }
            o += "\n";
        }
        if (!s.name.empty()) {
            const double ly = top + 14 + 16 * static_cast<double>(si);
            o += "<rect x=\"" + num(left + pw - 150) + "\" y=\"" + num(ly - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
                 color + "\"/><text x=\"" + num(left + pw - 135) + "\" y=\"" + num(ly) + "\">" + escape(s.name) +
                 "</text>\n";
        }
    }
    o += "</svg>\n";
    return o;
}

} // namespace facespace::svg
