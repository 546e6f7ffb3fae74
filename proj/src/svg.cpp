#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "advlora/errors.hpp"
#include "advlora/eval.hpp"
#include "advlora/numio.hpp"

namespace advlora {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 120.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 60.0;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                         "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt_tick(double v) {
    const double r = std::round(v * 100.0) / 100.0;
    std::string s = format_double(r);
    return s;
}

} // namespace

void write_curves_svg(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<CurveSeries>& series) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const CurveSeries& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!(xmin <= xmax)) throw ContractError("write_curves_svg: no points");
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double x) {
        return kMarginLeft + (x - xmin) / (xmax - xmin) * plot_w;
    };
    auto sy = [&](double y) {
        return kMarginTop + plot_h - (y - ymin) / (ymax - ymin) * plot_h;
    };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write svg: " + path);

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
        << "\" height=\"" << kHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

    // axes
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\""
        << kMarginLeft << "\" y2=\"" << kMarginTop + plot_h
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h
        << "\" x2=\"" << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h
        << "\" stroke=\"black\"/>\n";

    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x=\"" << sx(fx) << "\" y=\"" << kMarginTop + plot_h + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
            << "font-size=\"11\">" << fmt_tick(fx) << "</text>\n";
        out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << sy(fy) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
            << "font-size=\"11\">" << fmt_tick(fy) << "</text>\n";
    }
    out << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 14
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
        << x_label << "</text>\n";
    out << "<text x=\"18\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << kMarginTop + plot_h / 2 << ")\">"
        << y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* color = kColors[si % (sizeof(kColors) / sizeof(kColors[0]))];
        auto pts = series[si].points;
        std::sort(pts.begin(), pts.end());
        out << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : pts) out << sx(x) << "," << sy(y) << " ";
        out << "\"/>\n";
        for (const auto& [x, y] : pts)
            out << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y)
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = kMarginTop + 14.0 * static_cast<double>(si);
        out << "<line x1=\"" << kMarginLeft + plot_w + 8 << "\" y1=\"" << ly
            << "\" x2=\"" << kMarginLeft + plot_w + 28 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << kMarginLeft + plot_w + 32 << "\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\">"
            << series[si].label << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("svg write failed: " + path);
}

} // namespace advlora
