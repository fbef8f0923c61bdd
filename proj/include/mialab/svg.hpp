#pragma once

#include "mialab/evaluation.hpp"

namespace mialab {

struct RocPlotSeries {
    std::string label;
    bool dashed = false;  // boosted curves render dashed
    RocCurve curve;
};

namespace detail {

inline std::string svg_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#2ca02c", "#d62728", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

inline std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace detail

// Standalone SVG 1.1 plot: one polyline per series, FPR on x (optionally
// log-scaled from 10^-3), TPR on y, legend naming detector and boost flag.
inline std::string roc_svg(const std::vector<RocPlotSeries>& series, bool log_fpr = false) {
    const double width = 640, height = 480;
    const double left = 70, right = 24, top = 28, bottom = 56;
    const double pw = width - left - right, ph = height - top - bottom;
    const double fpr_floor = 1e-3;

    auto x_of = [&](double fpr) {
        if (!log_fpr) return left + fpr * pw;
        double clamped = std::max(fpr, fpr_floor);
        return left + (std::log10(clamped) - std::log10(fpr_floor)) / (0.0 - std::log10(fpr_floor)) * pw;
    };
    auto y_of = [&](double tpr) { return top + (1.0 - tpr) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // axes and gridlines
    os << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
    if (log_fpr) {
        for (double decade : {1e-3, 1e-2, 1e-1, 1.0})
            os << "<line x1=\"" << detail::fmt_coord(x_of(decade)) << "\" y1=\"" << detail::fmt_coord(top)
               << "\" x2=\"" << detail::fmt_coord(x_of(decade)) << "\" y2=\"" << detail::fmt_coord(top + ph)
               << "\"/>\n";
    } else {
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
            os << "<line x1=\"" << detail::fmt_coord(x_of(t)) << "\" y1=\"" << detail::fmt_coord(top)
               << "\" x2=\"" << detail::fmt_coord(x_of(t)) << "\" y2=\"" << detail::fmt_coord(top + ph)
               << "\"/>\n";
    }
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
        os << "<line x1=\"" << detail::fmt_coord(left) << "\" y1=\"" << detail::fmt_coord(y_of(t)) << "\" x2=\""
           << detail::fmt_coord(left + pw) << "\" y2=\"" << detail::fmt_coord(y_of(t)) << "\"/>\n";
    os << "</g>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";

    // axis labels
    os << "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"black\">\n";
    if (log_fpr) {
        const char* names[] = {"0.001", "0.01", "0.1", "1"};
        double decades[] = {1e-3, 1e-2, 1e-1, 1.0};
        for (int i = 0; i < 4; ++i)
            os << "<text x=\"" << detail::fmt_coord(x_of(decades[i]) - 10) << "\" y=\""
               << detail::fmt_coord(top + ph + 18) << "\">" << names[i] << "</text>\n";
    } else {
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
            os << "<text x=\"" << detail::fmt_coord(x_of(t) - 10) << "\" y=\"" << detail::fmt_coord(top + ph + 18)
               << "\">" << detail::fmt_coord(t) << "</text>\n";
    }
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
        os << "<text x=\"" << detail::fmt_coord(left - 38) << "\" y=\"" << detail::fmt_coord(y_of(t) + 4) << "\">"
           << detail::fmt_coord(t) << "</text>\n";
    os << "<text x=\"" << detail::fmt_coord(left + pw / 2 - 60) << "\" y=\"" << detail::fmt_coord(height - 12)
       << "\">false positive rate" << (log_fpr ? " (log)" : "") << "</text>\n";
    os << "<text x=\"14\" y=\"" << detail::fmt_coord(top + ph / 2) << "\" transform=\"rotate(-90 14 "
       << detail::fmt_coord(top + ph / 2) << ")\">true positive rate</text>\n";
    os << "</g>\n";

    // curves
    for (std::size_t si = 0; si < series.size(); ++si) {
        os << "<polyline fill=\"none\" stroke=\"" << detail::svg_color(si) << "\" stroke-width=\"1.5\"";
        if (series[si].dashed) os << " stroke-dasharray=\"6,4\"";
        os << " points=\"";
        for (const RocPoint& p : series[si].curve.points)
            os << detail::fmt_coord(x_of(p.fpr)) << ',' << detail::fmt_coord(y_of(p.tpr)) << ' ';
        os << "\"/>\n";
    }

    // legend
    os << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        double ly = top + 16 + 16 * static_cast<double>(si);
        os << "<line x1=\"" << detail::fmt_coord(left + 12) << "\" y1=\"" << detail::fmt_coord(ly - 4)
           << "\" x2=\"" << detail::fmt_coord(left + 44) << "\" y2=\"" << detail::fmt_coord(ly - 4)
           << "\" stroke=\"" << detail::svg_color(si) << "\" stroke-width=\"1.5\""
           << (series[si].dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        os << "<text x=\"" << detail::fmt_coord(left + 50) << "\" y=\"" << detail::fmt_coord(ly) << "\">"
           << series[si].label << "</text>\n";
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

}  // namespace mialab
