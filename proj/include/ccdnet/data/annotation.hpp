#pragma once

#include <algorithm>
#include <cmath>

namespace ccdnet {

/// Axis-aligned box in pixel coordinates, half-open on the max edges.
struct BoxF {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x_min + x_max); }
    double cy() const { return 0.5 * (y_min + y_max); }
    bool contains(double x, double y) const {
        return x >= x_min && x < x_max && y >= y_min && y < y_max;
    }
};

inline double iou(const BoxF& a, const BoxF& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// Ground-truth box. Class id is always 0 (single foreground class).
struct Annotation {
    BoxF box;
    int class_id = 0;
};

struct Detection {
    BoxF box;
    double score = 0;
    int level = 1;  // 1..4 pyramid level that produced the box
};

}  // namespace ccdnet
