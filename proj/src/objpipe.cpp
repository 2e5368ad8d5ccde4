#include "rover/objpipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rover/camgeo.hpp"

namespace rover {

namespace {

std::string loc(const std::string& path, int line) {
    return path + ":" + std::to_string(line) + ": ";
}

// Clamps corners to the image rectangle and rejects boxes that end up with
// no area, so downstream ROI code never sees an empty or out-of-bounds box.
void clamp_box(BBox& b, int w, int h, const std::string& where) {
    b.x_min = std::max(0.0, std::min(b.x_min, static_cast<double>(w)));
    b.x_max = std::max(0.0, std::min(b.x_max, static_cast<double>(w)));
    b.y_min = std::max(0.0, std::min(b.y_min, static_cast<double>(h)));
    b.y_max = std::max(0.0, std::min(b.y_max, static_cast<double>(h)));
    if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max))
        throw MalformedLine(where + "degenerate box");
}

std::string label_for(int class_id, const LabelMap& labels, const std::string& where) {
    const auto it = labels.find(class_id);
    if (it == labels.end())
        throw UnknownClassId(where + "class id " + std::to_string(class_id) +
                             " not in label map");
    return it->second;
}

std::vector<BBox> load_yolo(const std::string& path, int w, int h,
                            const LabelMap& labels) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open detection file: " + path);
    std::vector<BBox> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ss(line);
        long long cls;
        double cx, cy, bw, bh;
        if (!(ss >> cls)) {
            std::string tok;
            std::istringstream probe(line);
            if (!(probe >> tok)) continue;  // blank line
            throw MalformedLine(loc(path, lineno) + "expected integer class id");
        }
        if (!(ss >> cx >> cy >> bw >> bh))
            throw MalformedLine(loc(path, lineno) +
                                "expected \"class cx cy w h\"");
        std::string extra;
        if (ss >> extra)
            throw MalformedLine(loc(path, lineno) + "trailing token '" + extra + "'");
        for (double v : {cx, cy, bw, bh})
            if (!(v >= 0.0 && v <= 1.0))
                throw OutOfRangeCoordinate(loc(path, lineno) +
                                           "normalized value outside [0,1]");
        if (bw <= 0.0 || bh <= 0.0)
            throw MalformedLine(loc(path, lineno) + "degenerate box");
        BBox b;
        b.class_id = static_cast<int>(cls);
        b.label = label_for(b.class_id, labels, loc(path, lineno));
        b.x_min = (cx - bw / 2.0) * w;
        b.x_max = (cx + bw / 2.0) * w;
        b.y_min = (cy - bh / 2.0) * h;
        b.y_max = (cy + bh / 2.0) * h;
        clamp_box(b, w, h, loc(path, lineno));
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<BBox> load_coco(const std::string& path, int w, int h,
                            const LabelMap& labels) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open detection file: " + path);
    nlohmann::json doc;
    try {
        is >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedLine(path + ": " + e.what());
    }
    // Accept either a full COCO document or a bare annotation array.
    const nlohmann::json* anns = &doc;
    if (doc.is_object()) {
        if (!doc.contains("annotations"))
            throw MalformedLine(path + ": no \"annotations\" array");
        anns = &doc["annotations"];
    }
    if (!anns->is_array())
        throw MalformedLine(path + ": annotations is not an array");

    std::vector<BBox> out;
    int idx = 0;
    for (const auto& a : *anns) {
        ++idx;
        const std::string where = path + ": annotation " + std::to_string(idx) + ": ";
        if (!a.is_object() || !a.contains("bbox") || !a.contains("category_id"))
            throw MalformedLine(where + "expected bbox and category_id");
        const auto& bb = a["bbox"];
        if (!bb.is_array() || bb.size() != 4 ||
            !std::all_of(bb.begin(), bb.end(),
                         [](const nlohmann::json& v) { return v.is_number(); }))
            throw MalformedLine(where + "bbox must be [x, y, w, h]");
        if (!a["category_id"].is_number_integer())
            throw MalformedLine(where + "category_id must be an integer");
        const double bw = bb[2].get<double>(), bh = bb[3].get<double>();
        if (bw <= 0.0 || bh <= 0.0)
            throw MalformedLine(where + "degenerate box");
        BBox b;
        b.class_id = a["category_id"].get<int>();
        b.label = label_for(b.class_id, labels, where);
        b.x_min = bb[0].get<double>();
        b.y_min = bb[1].get<double>();
        b.x_max = b.x_min + bw;
        b.y_max = b.y_min + bh;
        if (a.contains("score") && a["score"].is_number())
            b.confidence = a["score"].get<double>();
        clamp_box(b, w, h, where);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

LabelMap load_label_map(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open label map: " + path);
    LabelMap labels;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string first;
        if (!(ss >> first) || first[0] == '#') continue;
        long long id;
        std::string name, extra;
        std::istringstream fields(line);
        if (!(fields >> id >> name))
            throw MalformedLine(loc(path, lineno) + "expected \"id name\"");
        if (fields >> extra)
            throw MalformedLine(loc(path, lineno) + "trailing token '" + extra + "'");
        if (!labels.emplace(static_cast<int>(id), name).second)
            throw MalformedLine(loc(path, lineno) + "duplicate class id " +
                                std::to_string(id));
    }
    return labels;
}

std::vector<BBox> load_detections(const std::string& path, DetectionFormat format,
                                  int image_width, int image_height,
                                  const LabelMap& labels) {
    if (image_width <= 0 || image_height <= 0)
        throw Error("load_detections: non-positive image dimensions");
    switch (format) {
        case DetectionFormat::YoloTxt:
            return load_yolo(path, image_width, image_height, labels);
        case DetectionFormat::CocoJson:
            return load_coco(path, image_width, image_height, labels);
    }
    throw Error("load_detections: unknown format");
}

PairingResult associate_by_counts(const std::vector<std::vector<int>>& counts,
                                  int n_right, int min_matches) {
    const int nl = static_cast<int>(counts.size());
    const int nr = n_right;
    for (const auto& row : counts)
        if (static_cast<int>(row.size()) != nr)
            throw Error("associate_by_counts: count matrix width != n_right");

    struct Cand {
        int count, i, j;
    };
    std::vector<Cand> cands;
    for (int i = 0; i < nl; ++i)
        for (int j = 0; j < nr; ++j)
            if (counts[i][j] >= min_matches) cands.push_back({counts[i][j], i, j});
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.count != b.count) return a.count > b.count;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });

    PairingResult res;
    std::vector<char> taken_l(nl, 0), taken_r(nr, 0);
    for (const Cand& c : cands) {
        if (taken_l[c.i] || taken_r[c.j]) continue;
        taken_l[c.i] = taken_r[c.j] = 1;
        res.pairs.emplace_back(c.i, c.j);
    }

    const auto reason_of = [&](int best, bool had_qualifying) -> std::string {
        if (best == 0) return "no_partner";
        if (best < min_matches && !had_qualifying) return "insufficient_matches";
        return "partner_taken";
    };
    for (int i = 0; i < nl; ++i) {
        if (taken_l[i]) continue;
        int best = 0;
        bool qual = false;
        for (int j = 0; j < nr; ++j) {
            best = std::max(best, counts[i][j]);
            qual = qual || counts[i][j] >= min_matches;
        }
        res.skipped.push_back({'L', i, reason_of(best, qual)});
    }
    for (int j = 0; j < nr; ++j) {
        if (taken_r[j]) continue;
        int best = 0;
        bool qual = false;
        for (int i = 0; i < nl; ++i) {
            best = std::max(best, counts[i][j]);
            qual = qual || counts[i][j] >= min_matches;
        }
        res.skipped.push_back({'R', j, reason_of(best, qual)});
    }
    return res;
}

AssociationResult associate(const std::vector<BBox>& left_boxes,
                            const std::vector<BBox>& right_boxes,
                            const GrayImage& left_img, const GrayImage& right_img,
                            const AssociateConfig& cfg) {
    const int nl = static_cast<int>(left_boxes.size());
    const int nr = static_cast<int>(right_boxes.size());
    std::vector<std::vector<Keypoint>> kl(nl), kr(nr);
    for (int i = 0; i < nl; ++i) kl[i] = detect(left_img, left_boxes[i], cfg.detect);
    for (int j = 0; j < nr; ++j) kr[j] = detect(right_img, right_boxes[j], cfg.detect);

    std::vector<std::vector<std::vector<Match>>> all(nl);
    std::vector<std::vector<int>> counts(nl, std::vector<int>(nr, 0));
    for (int i = 0; i < nl; ++i) {
        all[i].resize(nr);
        for (int j = 0; j < nr; ++j) {
            all[i][j] = match_two_way(kl[i], kr[j], cfg.match_ratio);
            counts[i][j] = static_cast<int>(all[i][j].size());
        }
    }

    PairingResult policy = associate_by_counts(counts, nr, cfg.min_matches);
    AssociationResult res;
    res.skipped = std::move(policy.skipped);
    for (const auto& [i, j] : policy.pairs) {
        Association a;
        a.left_index = i;
        a.right_index = j;
        a.left_box = left_boxes[i];
        a.right_box = right_boxes[j];
        a.left_keypoints = kl[i];
        a.right_keypoints = kr[j];
        a.matches = std::move(all[i][j]);
        res.pairs.push_back(std::move(a));
    }
    return res;
}

RangedObject range_object(const Association& assoc, const MlpNet& net,
                          double far_threshold_m) {
    const int n = static_cast<int>(assoc.matches.size());
    if (n < 1) throw Error("range_object: association has no matches");

    Eigen::MatrixXd x(n, 4);
    for (int k = 0; k < n; ++k) {
        const Keypoint& l = assoc.left_keypoints[assoc.matches[k].left_index];
        const Keypoint& r = assoc.right_keypoints[assoc.matches[k].right_index];
        x(k, 0) = l.px.x;
        x(k, 1) = l.px.y;
        x(k, 2) = r.px.x;
        x(k, 3) = r.px.y;
    }
    const Eigen::MatrixXd pred = predict_batch(net, x);

    RangedObject obj;
    obj.object_id = assoc.left_index;
    obj.label = assoc.left_box.label;
    obj.left_box = assoc.left_box;
    obj.right_box = assoc.right_box;
    obj.n_matches = n;
    obj.per_feature_cm.resize(n);
    for (int k = 0; k < n; ++k)
        obj.per_feature_cm[k] = 100.0 * distance_of(pred.row(k).transpose());
    obj.raw_median_cm = quantile(obj.per_feature_cm, 0.5);
    const double thr_cm = 100.0 * far_threshold_m;
    obj.far_flag = obj.raw_median_cm > thr_cm;
    obj.median_cm = obj.far_flag ? thr_cm : obj.raw_median_cm;
    return obj;
}

void write_table(const std::vector<RangedObject>& objects, const std::string& path) {
    std::vector<const RangedObject*> order;
    order.reserve(objects.size());
    for (const auto& o : objects) order.push_back(&o);
    std::sort(order.begin(), order.end(),
              [](const RangedObject* a, const RangedObject* b) {
                  if (a->median_cm != b->median_cm) return a->median_cm < b->median_cm;
                  return a->object_id < b->object_id;
              });

    std::ofstream os(path);
    if (!os) throw IoError("cannot open table for writing: " + path);
    os << "id,class,x_min,y_min,x_max,y_max,n_matches,median_distance_cm,"
          "far_flag,raw_median_cm\n";
    char buf[256];
    for (const RangedObject* o : order) {
        std::snprintf(buf, sizeof buf,
                      "%d,%s,%.2f,%.2f,%.2f,%.2f,%d,%.2f,%d,%.2f\n", o->object_id,
                      o->label.c_str(), o->left_box.x_min, o->left_box.y_min,
                      o->left_box.x_max, o->left_box.y_max, o->n_matches,
                      o->median_cm, o->far_flag ? 1 : 0, o->raw_median_cm);
        os << buf;
    }
    if (!os) throw IoError("failed writing table: " + path);
}

void write_skip_log(const std::vector<SkippedBox>& skipped, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open skip log for writing: " + path);
    os << "side,box_index,reason\n";
    for (const SkippedBox& s : skipped)
        os << s.side << ',' << s.index << ',' << s.reason << '\n';
    if (!os) throw IoError("failed writing skip log: " + path);
}

void write_comparison_table(const std::vector<ComparisonRow>& rows,
                            const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open comparison table for writing: " + path);
    os << "id,class,ann_distance_cm,cahv_distance_cm,abs_error_cm\n";
    char buf[256];
    for (const ComparisonRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.2f,%.2f,%.2f\n", r.id,
                      r.label.c_str(), r.ann_cm, r.cahv_cm,
                      std::abs(r.ann_cm - r.cahv_cm));
        os << buf;
    }
    if (!os) throw IoError("failed writing comparison table: " + path);
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw Error("quantile of empty set");
    if (!(p >= 0.0 && p <= 1.0)) throw Error("quantile fraction outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

EvalMetrics evaluate(const MlpNet& net, const std::vector<TriangulationSample>& samples) {
    if (samples.empty()) throw Error("evaluate: empty test set");
    const int n = static_cast<int>(samples.size());
    Eigen::MatrixXd x(n, 4);
    for (int k = 0; k < n; ++k) {
        x(k, 0) = samples[k].x1;
        x(k, 1) = samples[k].y1;
        x(k, 2) = samples[k].x2;
        x(k, 3) = samples[k].y2;
    }
    const Eigen::MatrixXd pred = predict_batch(net, x);
    std::vector<double> err(n);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
        err[k] = 100.0 * std::abs(distance_of(pred.row(k).transpose()) -
                                  distance_of(samples[k].truth));
        sum += err[k];
    }
    EvalMetrics m;
    m.median_abs_err_cm = quantile(err, 0.5);
    m.iqr_lo_cm = quantile(err, 0.25);
    m.iqr_hi_cm = quantile(err, 0.75);
    m.mae_cm = sum / n;
    m.n = n;
    return m;
}

}  // namespace rover
