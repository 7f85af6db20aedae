#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace recam::plot {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

struct Axes {
    std::string title, x_label, y_label;
    bool log_y = false;
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

} // namespace detail

/// Self-contained SVG line chart; output depends only on the inputs.
inline std::string line_chart(const Axes& axes, const std::vector<Series>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
    auto ty = [&](double v) { return axes.log_y ? std::log10(std::max(v, 1e-300)) : v; };

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) + "\" height=\"" +
                      detail::num(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + detail::num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
           detail::escape(axes.title) + "</text>\n";
    svg += "<line x1=\"" + detail::num(L) + "\" y1=\"" + detail::num(H - B) + "\" x2=\"" + detail::num(W - R) + "\" y2=\"" +
           detail::num(H - B) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + detail::num(L) + "\" y1=\"" + detail::num(T) + "\" x2=\"" + detail::num(L) + "\" y2=\"" +
           detail::num(H - B) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
        const double xp = L + (W - L - R) * t / 4, yp = H - B - (H - T - B) * t / 4;
        svg += "<text x=\"" + detail::num(xp) + "\" y=\"" + detail::num(H - B + 16) + "\" text-anchor=\"middle\">" +
               detail::num(xv) + "</text>\n";
        svg += "<text x=\"" + detail::num(L - 6) + "\" y=\"" + detail::num(yp + 4) + "\" text-anchor=\"end\">" +
               (axes.log_y ? "1e" + detail::num(yv) : detail::num(yv)) + "</text>\n";
    }
    svg += "<text x=\"" + detail::num((L + W - R) / 2) + "\" y=\"" + detail::num(H - 12) + "\" text-anchor=\"middle\">" +
           detail::escape(axes.x_label) + "</text>\n";
    svg += "<text x=\"16\" y=\"" + detail::num((T + H - B) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           detail::num((T + H - B) / 2) + ")\">" + detail::escape(axes.y_label) + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* colour = colours[k % std::size(colours)];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i])) + " ";
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        const double ly = T + 16 * static_cast<double>(k);
        svg += "<line x1=\"" + detail::num(W - R + 10) + "\" y1=\"" + detail::num(ly) + "\" x2=\"" + detail::num(W - R + 30) +
               "\" y2=\"" + detail::num(ly) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + detail::num(W - R + 35) + "\" y=\"" + detail::num(ly + 4) + "\">" + detail::escape(s.name) +
               "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace recam::plot
