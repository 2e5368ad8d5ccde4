#pragma once

#include <string>

namespace rover {

/// Axis-aligned detection box in pixel coordinates, corner convention
/// (x_min, y_min) inclusive top-left, (x_max, y_max) exclusive bottom-right.
struct BBox {
    int class_id = 0;
    std::string label;  // crater | rock | artifact
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    double confidence = 1.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
};

}  // namespace rover
