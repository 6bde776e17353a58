#include "dac/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dac::svg {

namespace {

const char* kPalette[] = {"#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c613c"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void open_svg(std::ostringstream& out, const std::string& title, int width, int height) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
}

void legend(std::ostringstream& out, const std::vector<std::string>& names, int width) {
    int x = width - 150;
    int y = 34;
    for (std::size_t s = 0; s < names.size(); ++s) {
        out << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
            << kPalette[s % 6] << "\"/>\n";
        out << "<text x=\"" << x + 14 << "\" y=\"" << y
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << names[s] << "</text>\n";
        y += 16;
    }
}

}  // namespace

std::string bar_chart(const std::string& title, const std::vector<std::string>& categories,
                      const std::vector<Series>& series, int width, int height) {
    if (categories.empty() || series.empty()) {
        throw std::invalid_argument("bar_chart: empty input");
    }
    for (const Series& s : series) {
        if (s.values.size() != categories.size()) {
            throw std::invalid_argument("bar_chart: series length mismatch");
        }
    }
    double vmax = 0.0;
    for (const Series& s : series) {
        for (double v : s.values) vmax = std::max(vmax, v);
    }
    if (vmax <= 0.0) vmax = 1.0;

    const double left = 50, right = 20, top = 40, bottom = 40;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    const double group_w = plot_w / categories.size();
    const double bar_w = group_w * 0.8 / series.size();

    std::ostringstream out;
    open_svg(out, title, width, height);
    // Axes.
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double v = vmax * tick / 4.0;
        double y = top + plot_h - plot_h * tick / 4.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << num(y + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(v)
            << "</text>\n";
    }
    for (std::size_t c = 0; c < categories.size(); ++c) {
        double gx = left + group_w * c + group_w * 0.1;
        for (std::size_t s = 0; s < series.size(); ++s) {
            double v = series[s].values[c];
            double h = plot_h * v / vmax;
            out << "<rect x=\"" << num(gx + bar_w * s) << "\" y=\"" << num(top + plot_h - h)
                << "\" width=\"" << num(bar_w) << "\" height=\"" << num(h) << "\" fill=\""
                << kPalette[s % 6] << "\"/>\n";
        }
        out << "<text x=\"" << num(left + group_w * c + group_w / 2) << "\" y=\""
            << num(top + plot_h + 16)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
            << categories[c] << "</text>\n";
    }
    std::vector<std::string> names;
    for (const Series& s : series) names.push_back(s.name);
    legend(out, names, width);
    out << "</svg>\n";
    return out.str();
}

std::string line_chart(const std::string& title, const std::vector<Polyline>& lines,
                       const std::string& x_label, const std::string& y_label, int width,
                       int height) {
    if (lines.empty()) throw std::invalid_argument("line_chart: empty input");
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const Polyline& l : lines) {
        if (l.x.size() != l.y.size() || l.x.empty()) {
            throw std::invalid_argument("line_chart: malformed polyline");
        }
        for (std::size_t i = 0; i < l.x.size(); ++i) {
            if (first) {
                xmin = xmax = l.x[i];
                ymin = ymax = l.y[i];
                first = false;
            }
            xmin = std::min(xmin, l.x[i]);
            xmax = std::max(xmax, l.x[i]);
            ymin = std::min(ymin, l.y[i]);
            ymax = std::max(ymax, l.y[i]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const double left = 60, right = 20, top = 40, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return top + plot_h - (y - ymin) / (ymax - ymin) * plot_h; };

    std::ostringstream out;
    open_svg(out, title, width, height);
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double xv = xmin + (xmax - xmin) * tick / 4.0;
        double yv = ymin + (ymax - ymin) * tick / 4.0;
        out << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(top + plot_h + 16)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
            << num(xv) << "</text>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << num(py(yv) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(yv)
            << "</text>\n";
    }
    out << "<text x=\"" << num(left + plot_w / 2) << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x_label
        << "</text>\n";
    out << "<text x=\"14\" y=\"" << num(top + plot_h / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
        << "transform=\"rotate(-90 14 " << num(top + plot_h / 2) << ")\">" << y_label
        << "</text>\n";

    for (std::size_t s = 0; s < lines.size(); ++s) {
        out << "<polyline fill=\"none\" stroke=\"" << kPalette[s % 6]
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < lines[s].x.size(); ++i) {
            out << num(px(lines[s].x[i])) << "," << num(py(lines[s].y[i])) << " ";
        }
        out << "\"/>\n";
        for (std::size_t i = 0; i < lines[s].x.size(); ++i) {
            out << "<circle cx=\"" << num(px(lines[s].x[i])) << "\" cy=\""
                << num(py(lines[s].y[i])) << "\" r=\"2.5\" fill=\"" << kPalette[s % 6]
                << "\"/>\n";
        }
    }
    std::vector<std::string> names;
    for (const Polyline& l : lines) names.push_back(l.name);
    legend(out, names, width);
    out << "</svg>\n";
    return out.str();
}

}  // namespace dac::svg
