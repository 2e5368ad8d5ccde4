#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rover/bbox.hpp"
#include "rover/errors.hpp"
#include "rover/features.hpp"
#include "rover/imageproc.hpp"
#include "rover/mlp.hpp"
#include "rover/synthgen.hpp"

namespace rover {

// Detection file could not be parsed (bad field count, non-numeric token,
// degenerate zero-area box, malformed JSON entry).
struct MalformedLine : Error {
    using Error::Error;
};

// Detection references a class id absent from the label map.
struct UnknownClassId : Error {
    using Error::Error;
};

// Normalized YOLO coordinate outside [0, 1].
struct OutOfRangeCoordinate : Error {
    using Error::Error;
};

enum class DetectionFormat {
    YoloTxt,   // one line per box: "class cx cy w h", all normalized
    CocoJson,  // annotations with "bbox": [x, y, w, h] in pixels
};

// class_id -> class name, loaded from a text file of "id name" lines.
using LabelMap = std::map<int, std::string>;

LabelMap load_label_map(const std::string& path);

// Parses one detection file into pixel-corner boxes. Corners are clamped to
// the image rectangle; a box that is degenerate after clamping is an error.
std::vector<BBox> load_detections(const std::string& path, DetectionFormat format,
                                  int image_width, int image_height,
                                  const LabelMap& labels);

struct AssociateConfig {
    DetectConfig detect;      // per-ROI keypoint settings
    double match_ratio = 0.0; // 0 disables the symmetric ratio test
    int min_matches = 4;      // pairs below this are discarded
};

// One cross-pair box association. Keypoint coordinates are absolute image
// pixels; matches index into the two keypoint lists.
struct Association {
    int left_index = -1;
    int right_index = -1;
    BBox left_box;
    BBox right_box;
    std::vector<Keypoint> left_keypoints;
    std::vector<Keypoint> right_keypoints;
    std::vector<Match> matches;
};

struct SkippedBox {
    char side = 'L';     // 'L' or 'R'
    int index = -1;      // position in the input box list for that side
    std::string reason;  // no_partner | insufficient_matches | partner_taken
};

struct AssociationResult {
    std::vector<Association> pairs;
    std::vector<SkippedBox> skipped;
};

// Pairing policy in isolation: counts[i][j] is the number of mutual matches
// between left box i and right box j. Pairs are selected greedily in
// decreasing count order (ties broken by lower (i, j)), each box used at most
// once, and pairs with fewer than min_matches are never selected. Unpaired
// boxes are reported with a reason:
//   no_partner            zero matches against every box on the other side
//   insufficient_matches  best count exists but is below min_matches
//   partner_taken         a qualifying partner existed but was claimed first
struct PairingResult {
    std::vector<std::pair<int, int>> pairs;
    std::vector<SkippedBox> skipped;
};

// n_right is passed separately so an empty left side still reports every
// right box as skipped; counts rows must all have n_right entries.
PairingResult associate_by_counts(const std::vector<std::vector<int>>& counts,
                                  int n_right, int min_matches = 4);

// Detects keypoints inside every box ROI, match_two_way's each cross pair,
// then applies associate_by_counts to the match counts.
AssociationResult associate(const std::vector<BBox>& left_boxes,
                            const std::vector<BBox>& right_boxes,
                            const GrayImage& left_img, const GrayImage& right_img,
                            const AssociateConfig& cfg = {});

struct RangedObject {
    int object_id = -1;  // left box index of the association
    std::string label;
    BBox left_box;
    BBox right_box;
    int n_matches = 0;
    std::vector<double> per_feature_cm;
    double median_cm = 0.0;      // clamped to the far threshold when flagged
    double raw_median_cm = 0.0;  // pre-clamp median, kept for the debug column
    bool far_flag = false;
};

// Runs the net over every matched feature pair and reduces to a per-object
// median distance. Distances beyond far_threshold_m report the threshold
// itself with far_flag set; the unclamped median is retained.
RangedObject range_object(const Association& assoc, const MlpNet& net,
                          double far_threshold_m = 10.0);

// CSV, sorted by median distance ascending (object id breaks ties), header
// id,class,x_min,y_min,x_max,y_max,n_matches,median_distance_cm,far_flag,raw_median_cm
// Box corners are the left-image box.
void write_table(const std::vector<RangedObject>& objects, const std::string& path);

void write_skip_log(const std::vector<SkippedBox>& skipped, const std::string& path);

// Side-by-side distance comparison row; the writer derives the absolute
// error column from the two distances at full precision and rounds once
// when printing.
struct ComparisonRow {
    int id = 0;
    std::string label;
    double ann_cm = 0.0;
    double cahv_cm = 0.0;
};

void write_comparison_table(const std::vector<ComparisonRow>& rows,
                            const std::string& path);

// Order statistic with linear interpolation: for n values and p in [0, 1],
// h = (n - 1) * p, result = v[floor(h)] + frac(h) * (v[floor(h) + 1] - v[floor(h)])
// over the sorted values. p = 0.5 reduces to the mean-of-middles median.
double quantile(std::vector<double> values, double p);

struct EvalMetrics {
    double median_abs_err_cm = 0.0;
    double iqr_lo_cm = 0.0;  // 25th percentile
    double iqr_hi_cm = 0.0;  // 75th percentile
    double mae_cm = 0.0;
    int n = 0;
};

// Per-sample absolute error between predicted and true Euclidean distance,
// reduced with the quantile rule above.
EvalMetrics evaluate(const MlpNet& net, const std::vector<TriangulationSample>& samples);

}  // namespace rover
