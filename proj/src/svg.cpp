#include "mcss/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mcss/errors.hpp"
#include "mcss/util.hpp"

namespace mcss {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 480.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 50.0;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<ChartSeries>& series) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ValidationError("svg: series x/y length mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!(xmin <= xmax)) {  // no finite points: draw an empty frame
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double v) { return kMarginLeft + (v - xmin) / (xmax - xmin) * plot_w; };
    auto sy = [&](double v) { return kMarginTop + plot_h - (v - ymin) / (ymax - ymin) * plot_h; };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" +
           fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" + escape(title) + "</text>\n";

    // frame + ticks
    out += "<rect x=\"" + fmt(kMarginLeft) + "\" y=\"" + fmt(kMarginTop) + "\" width=\"" +
           fmt(plot_w) + "\" height=\"" + fmt(plot_h) + "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 5.0;
        const double fy = ymin + (ymax - ymin) * t / 5.0;
        out += "<line x1=\"" + fmt(sx(fx)) + "\" y1=\"" + fmt(kMarginTop + plot_h) + "\" x2=\"" +
               fmt(sx(fx)) + "\" y2=\"" + fmt(kMarginTop + plot_h + 5) + "\" stroke=\"#333\"/>\n";
        out += "<text x=\"" + fmt(sx(fx)) + "\" y=\"" + fmt(kMarginTop + plot_h + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt_tick(fx) + "</text>\n";
        out += "<line x1=\"" + fmt(kMarginLeft - 5) + "\" y1=\"" + fmt(sy(fy)) + "\" x2=\"" +
               fmt(kMarginLeft) + "\" y2=\"" + fmt(sy(fy)) + "\" stroke=\"#333\"/>\n";
        out += "<text x=\"" + fmt(kMarginLeft - 8) + "\" y=\"" + fmt(sy(fy) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt_tick(fy) + "</text>\n";
    }
    out += "<text x=\"" + fmt(kMarginLeft + plot_w / 2) + "\" y=\"" + fmt(kHeight - 10) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           escape(x_label) + "</text>\n";
    out += "<text x=\"16\" y=\"" + fmt(kMarginTop + plot_h / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 " +
           fmt(kMarginTop + plot_h / 2) + ")\">" + escape(y_label) + "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % (sizeof kColors / sizeof kColors[0])];
        std::string points;
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            if (!std::isfinite(series[s].x[i]) || !std::isfinite(series[s].y[i])) continue;
            if (!points.empty()) points += ' ';
            points += fmt(sx(series[s].x[i])) + "," + fmt(sy(series[s].y[i]));
        }
        out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            if (!std::isfinite(series[s].x[i]) || !std::isfinite(series[s].y[i])) continue;
            out += "<circle cx=\"" + fmt(sx(series[s].x[i])) + "\" cy=\"" +
                   fmt(sy(series[s].y[i])) + "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
        }
        out += "<rect x=\"" + fmt(kMarginLeft + 10) + "\" y=\"" +
               fmt(kMarginTop + 10 + 18.0 * static_cast<double>(s)) +
               "\" width=\"12\" height=\"4\" fill=\"" + color + "\"/>\n";
        out += "<text x=\"" + fmt(kMarginLeft + 28) + "\" y=\"" +
               fmt(kMarginTop + 16 + 18.0 * static_cast<double>(s)) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(series[s].label) +
               "</text>\n";
    }
    out += "</svg>\n";
    atomic_write_file(path, out);
}

}  // namespace mcss
