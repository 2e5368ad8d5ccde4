// Command-line front end for the stereo ranging toolkit. One subcommand per
// pipeline stage; a key=value config file supplies shared constants and any
// explicit flag overrides it. Exit codes: 0 success, 1 invalid input or
// configuration, 2 file I/O failure.

#include <CLI11.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rover/camgeo.hpp"
#include "rover/features.hpp"
#include "rover/imageproc.hpp"
#include "rover/mlp.hpp"
#include "rover/objpipe.hpp"
#include "rover/recon.hpp"
#include "rover/runconfig.hpp"
#include "rover/synthgen.hpp"

using namespace rover;

namespace {

RunConfig base_config(const std::string& config_path) {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    return cfg;
}

template <typename T, typename U>
void override_if(const std::optional<T>& v, U& field) {
    if (v) field = static_cast<U>(*v);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> to_matrices(
    const std::vector<TriangulationSample>& samples) {
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd x(n, 4), y(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[i];
        x.row(i) << s.x1, s.y1, s.x2, s.y2;
        y.row(i) = s.truth.transpose();
    }
    return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string config_path;
    std::string out_dir;
    int n = 64250;
    double z_min = 1.0;
    double z_max = 10.0;
    double noise_sigma = 0.0;
    double train_frac = 0.8;
    double val_frac = 0.14;
    bool split = false;
    std::optional<double> baseline, fov;
    std::optional<int> width, height;
    std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a) {
    RunConfig cfg = base_config(a.config_path);
    override_if(a.baseline, cfg.baseline_m);
    override_if(a.fov, cfg.fov_deg);
    override_if(a.width, cfg.image_width);
    override_if(a.height, cfg.image_height);
    override_if(a.seed, cfg.seed);

    StereoRig rig =
        make_parallel_rig(cfg.baseline_m, cfg.image_width, cfg.image_height, cfg.fov_deg);
    SceneConfig sc;
    sc.z_min = a.z_min;
    sc.z_max = a.z_max;
    sc.n = a.n;
    sc.noise_sigma = a.noise_sigma;
    sc.seed = cfg.seed;
    sc.width = cfg.image_width;
    sc.height = cfg.image_height;

    std::vector<TriangulationSample> samples = generate_dataset(rig, sc);
    ensure_dir(a.out_dir);
    save_dataset(samples, a.out_dir + "/dataset.csv");
    std::printf("wrote %zu samples to %s/dataset.csv\n", samples.size(), a.out_dir.c_str());

    if (a.split) {
        DatasetSplit sp = split_dataset(samples, a.train_frac, a.val_frac, cfg.seed);
        save_dataset(sp.train, a.out_dir + "/train.csv");
        save_dataset(sp.val, a.out_dir + "/val.csv");
        save_dataset(sp.test, a.out_dir + "/test.csv");
        std::printf("split into %zu train / %zu val / %zu test\n", sp.train.size(),
                    sp.val.size(), sp.test.size());
    }
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config_path;
    std::string train_csv;
    std::string val_csv;
    std::string out_dir;
    std::optional<double> lr, lr_factor, lr_min;
    std::optional<int> batch, max_epochs, patience, lr_patience;
    std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a) {
    RunConfig cfg = base_config(a.config_path);
    override_if(a.lr, cfg.training.learning_rate);
    override_if(a.lr_factor, cfg.training.lr_factor);
    override_if(a.lr_min, cfg.training.lr_min);
    override_if(a.batch, cfg.training.batch_size);
    override_if(a.max_epochs, cfg.training.max_epochs);
    override_if(a.patience, cfg.training.patience);
    override_if(a.lr_patience, cfg.training.lr_patience);
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.training.seed = *a.seed;
    }

    auto [tx, ty] = to_matrices(load_dataset(a.train_csv));
    auto [vx, vy] = to_matrices(load_dataset(a.val_csv));

    MlpNet initial = MlpNet::glorot(MlpNet::canonical_shape(), cfg.seed);
    TrainResult result = train(initial, tx, ty, vx, vy, cfg.training);

    ensure_dir(a.out_dir);
    save_weights(result.net, a.out_dir + "/weights.bin");
    save_history(result.report, a.out_dir + "/history.csv");

    const TrainReport& r = result.report;
    std::printf("epochs      %d (best %d)\n", r.epochs_run, r.best_epoch);
    std::printf("val mae     %.4f cm\n", r.best_val_mae);
    std::printf("train mae   %.4f cm\n", r.train_mae);
    std::printf("wrote %s/weights.bin and %s/history.csv\n", a.out_dir.c_str(),
                a.out_dir.c_str());
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
    std::string config_path;
    std::string weights;
    std::string data_csv;
    std::string out_dir;
};

void cmd_eval(const EvalArgs& a) {
    MlpNet net = load_weights(a.weights);
    std::vector<TriangulationSample> samples = load_dataset(a.data_csv);
    EvalMetrics m = evaluate(net, samples);

    std::printf("n       %d\n", m.n);
    std::printf("median  %.4f cm\n", m.median_abs_err_cm);
    std::printf("iqr     %.4f .. %.4f cm\n", m.iqr_lo_cm, m.iqr_hi_cm);
    std::printf("mae     %.4f cm\n", m.mae_cm);

    ensure_dir(a.out_dir);
    const std::string path = a.out_dir + "/metrics.csv";
    std::ofstream os(path);
    if (!os) throw IoError("cannot open metrics file for writing: " + path);
    char row[256];
    std::snprintf(row, sizeof row, "%.10g,%.10g,%.10g,%.10g,%d\n", m.median_abs_err_cm,
                  m.iqr_lo_cm, m.iqr_hi_cm, m.mae_cm, m.n);
    os << "median_abs_err_cm,iqr_lo_cm,iqr_hi_cm,mae_cm,n\n" << row;
    if (!os.flush()) throw IoError("failed writing metrics file: " + path);
}

// ---------------------------------------------------------------- range

struct RangeArgs {
    std::string config_path;
    std::string left_img, right_img;
    std::string left_det, right_det;
    std::string format = "yolo";
    std::string labels;
    std::string weights;
    std::string out_dir;
    bool no_clahe = false;
    std::optional<double> far_threshold, ratio;
    std::optional<int> min_matches, max_keypoints;
};

void cmd_range(const RangeArgs& a) {
    RunConfig cfg = base_config(a.config_path);
    override_if(a.far_threshold, cfg.far_threshold_m);

    GrayImage left = load_pgm(a.left_img);
    GrayImage right = load_pgm(a.right_img);
    if (!a.no_clahe) {
        left = clahe(left, cfg.clahe);
        right = clahe(right, cfg.clahe);
    }

    LabelMap labels = load_label_map(a.labels);
    DetectionFormat fmt =
        a.format == "coco" ? DetectionFormat::CocoJson : DetectionFormat::YoloTxt;
    std::vector<BBox> lboxes = load_detections(a.left_det, fmt, left.width, left.height, labels);
    std::vector<BBox> rboxes =
        load_detections(a.right_det, fmt, right.width, right.height, labels);

    AssociateConfig ac;
    override_if(a.min_matches, ac.min_matches);
    override_if(a.max_keypoints, ac.detect.max_keypoints);
    override_if(a.ratio, ac.match_ratio);
    AssociationResult assoc = associate(lboxes, rboxes, left, right, ac);

    MlpNet net = load_weights(a.weights);
    std::vector<RangedObject> objects;
    objects.reserve(assoc.pairs.size());
    for (const Association& pair : assoc.pairs)
        objects.push_back(range_object(pair, net, cfg.far_threshold_m));

    ensure_dir(a.out_dir);
    write_table(objects, a.out_dir + "/distances.csv");
    write_skip_log(assoc.skipped, a.out_dir + "/skipped.csv");

    std::vector<RangedObject> ordered = objects;
    std::sort(ordered.begin(), ordered.end(), [](const RangedObject& x, const RangedObject& y) {
        if (x.median_cm != y.median_cm) return x.median_cm < y.median_cm;
        return x.object_id < y.object_id;
    });
    for (const RangedObject& o : ordered)
        std::printf("  %3d  %-10s %9.2f cm  (%d matches)%s\n", o.object_id, o.label.c_str(),
                    o.median_cm, o.n_matches, o.far_flag ? "  far" : "");
    std::printf("ranged %zu object pair(s), skipped %zu box(es)\n", objects.size(),
                assoc.skipped.size());
}

// ---------------------------------------------------------- reconstruct

struct ReconstructArgs {
    std::string config_path;
    std::string depth_path;
    std::string image_path;
    std::string rig_path;
    std::string anchors_path;
    std::string convention = "euclidean";
    std::string out_dir;
    int stride = 1;
    std::optional<double> scale, shift, fov;
    std::optional<int> width, height;
};

std::vector<DepthAnchor> load_anchors(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open anchor file: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("x,y,distance_cm", 0) != 0)
        throw Error("anchor file must start with the header x,y,distance_cm: " + path);
    std::vector<DepthAnchor> anchors;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        DepthAnchor an;
        std::string extra;
        if (!(ss >> an.px.x >> an.px.y >> an.distance_cm) || (ss >> extra))
            throw Error("anchor line " + std::to_string(lineno) +
                        " is not x,y,distance_cm: " + path);
        anchors.push_back(an);
    }
    if (anchors.empty()) throw Error("anchor file has no rows: " + path);
    return anchors;
}

void cmd_reconstruct(const ReconstructArgs& a) {
    RunConfig cfg = base_config(a.config_path);
    override_if(a.fov, cfg.fov_deg);

    GrayImage img = load_pgm(a.image_path);
    DepthMap depth = load_depth(a.depth_path, img.width, img.height);

    CahvCamera cam;
    if (!a.rig_path.empty()) {
        cam = load_rig(a.rig_path).left;
    } else {
        // The principal point must sit at the raster center, so the rig is
        // sized from the depth map unless told otherwise.
        int w = depth.width, h = depth.height;
        override_if(a.width, w);
        override_if(a.height, h);
        cam = make_parallel_rig(cfg.baseline_m, w, h, cfg.fov_deg).left;
    }

    MetricAlignment align;
    if (!a.anchors_path.empty()) {
        align = fit_alignment(depth, load_anchors(a.anchors_path));
    } else if (a.scale || a.shift) {
        align.scale = a.scale.value_or(1.0);
        align.shift = a.shift.value_or(0.0);
        if (!(align.scale > 0)) throw Error("--scale must be positive");
    }

    DistanceConvention conv = a.convention == "zdepth" ? DistanceConvention::ZDepth
                                                       : DistanceConvention::Euclidean;
    PointCloud cloud = backproject(depth, align, cam, img, a.stride, conv);

    ensure_dir(a.out_dir);
    write_ply(cloud, a.out_dir + "/cloud.ply");
    std::printf("wrote %zu points to %s/cloud.ply (scale %.6g, shift %.6g)%s\n",
                cloud.points.size(), a.out_dir.c_str(), align.scale, align.shift,
                align.degenerate ? "  [degenerate fit: scale pinned to 1]" : "");
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
    std::string config_path;
    std::string weights;
    std::string out_dir;
    int n = 10000;
    std::optional<std::uint64_t> seed;
};

void cmd_bench(const BenchArgs& a) {
    RunConfig cfg = base_config(a.config_path);
    override_if(a.seed, cfg.seed);

    StereoRig rig =
        make_parallel_rig(cfg.baseline_m, cfg.image_width, cfg.image_height, cfg.fov_deg);
    SceneConfig sc;
    sc.n = a.n;
    sc.seed = cfg.seed;
    sc.width = cfg.image_width;
    sc.height = cfg.image_height;
    std::vector<TriangulationSample> samples = generate_dataset(rig, sc);
    auto [inputs, truths] = to_matrices(samples);
    (void)truths;

    MlpNet net = a.weights.empty() ? MlpNet::glorot(MlpNet::canonical_shape(), cfg.seed)
                                   : load_weights(a.weights);

    using Clock = std::chrono::steady_clock;
    auto ms_since = [](Clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    };

    // Batched network inference. One untimed pass warms caches and the
    // allocator so the timed pass measures steady state.
    double ann_sum = predict_batch(net, inputs).sum();
    auto t0 = Clock::now();
    ann_sum += predict_batch(net, inputs).sum();
    double ann_ms = ms_since(t0);

    // Per-sample least-squares triangulation, the geometric reference path.
    auto run_svd = [&](size_t count) {
        double acc = 0;
        for (size_t i = 0; i < count; ++i) {
            const TriangulationSample& s = samples[i];
            acc += triangulate(rig, {s.x1, s.y1}, {s.x2, s.y2}).point.z();
        }
        return acc;
    };
    double svd_sum = run_svd(std::min(samples.size(), size_t{256}));
    auto t1 = Clock::now();
    svd_sum += run_svd(samples.size());
    double svd_ms = ms_since(t1);

    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "samples %d\n"
                  "batched_ann_wall_ms %.3f\n"
                  "batched_ann_samples_per_s %.1f\n"
                  "sequential_svd_wall_ms %.3f\n"
                  "sequential_svd_samples_per_s %.1f\n"
                  "batched_over_sequential %.2f\n"
                  "checksum_ann %.6g\n"
                  "checksum_svd %.6g\n",
                  a.n, ann_ms, 1000.0 * a.n / ann_ms, svd_ms, 1000.0 * a.n / svd_ms,
                  svd_ms / ann_ms, ann_sum, svd_sum);
    std::fputs(buf, stdout);

    if (!a.out_dir.empty()) {
        ensure_dir(a.out_dir);
        const std::string path = a.out_dir + "/bench.txt";
        std::ofstream os(path);
        if (!os) throw IoError("cannot open bench report for writing: " + path);
        os << buf;
        if (!os.flush()) throw IoError("failed writing bench report: " + path);
    }
}

// ------------------------------------------------------------------ app

void add_config_flag(CLI::App* sub, std::string& path) {
    sub->add_option("--config", path, "key=value config file; explicit flags override it");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stereo ranging toolkit: synthetic data generation, distance network "
                 "training, object ranging and depth-map reconstruction."};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 1 invalid input or configuration, 2 file I/O "
               "failure.");

    SynthArgs synth;
    CLI::App* s = app.add_subcommand("synth", "Generate a synthetic stereo dataset CSV");
    add_config_flag(s, synth.config_path);
    s->add_option("--n", synth.n, "number of samples")->capture_default_str();
    s->add_option("--z-min", synth.z_min, "minimum depth in meters")->capture_default_str();
    s->add_option("--z-max", synth.z_max, "maximum depth in meters")->capture_default_str();
    s->add_option("--noise", synth.noise_sigma, "pixel noise sigma")->capture_default_str();
    s->add_option("--baseline", synth.baseline, "stereo baseline in meters [0.24]");
    s->add_option("--fov", synth.fov, "horizontal field of view in degrees [39]");
    s->add_option("--width", synth.width, "image width in pixels [1024]");
    s->add_option("--height", synth.height, "image height in pixels [1024]");
    s->add_option("--seed", synth.seed, "RNG seed; a fixed seed reproduces the output "
                                        "bit for bit [0]");
    s->add_flag("--split", synth.split, "also write train/val/test CSVs");
    s->add_option("--train-frac", synth.train_frac, "train fraction of the split")
        ->capture_default_str();
    s->add_option("--val-frac", synth.val_frac, "validation fraction of the split")
        ->capture_default_str();
    s->add_option("--out-dir", synth.out_dir, "output directory")->required();
    s->callback([&synth] { cmd_synth(synth); });

    TrainArgs tr;
    CLI::App* t = app.add_subcommand("train", "Train the distance network on dataset CSVs");
    add_config_flag(t, tr.config_path);
    t->add_option("--train", tr.train_csv, "training dataset CSV")->required();
    t->add_option("--val", tr.val_csv, "validation dataset CSV")->required();
    t->add_option("--lr", tr.lr, "initial learning rate [0.001]");
    t->add_option("--batch-size", tr.batch, "minibatch size [16]");
    t->add_option("--max-epochs", tr.max_epochs, "epoch cap [150]");
    t->add_option("--patience", tr.patience, "early-stopping patience in epochs [10]");
    t->add_option("--lr-factor", tr.lr_factor, "plateau decay multiplier [0.5]");
    t->add_option("--lr-patience", tr.lr_patience, "epochs without improvement before "
                                                   "the learning rate decays [5]");
    t->add_option("--lr-min", tr.lr_min, "learning-rate floor [1e-05]");
    t->add_option("--seed", tr.seed, "init and shuffle seed; fixed seed reproduces the "
                                     "weights bit for bit [0]");
    t->add_option("--out-dir", tr.out_dir, "output directory")->required();
    t->callback([&tr] { cmd_train(tr); });

    EvalArgs ev;
    CLI::App* e = app.add_subcommand("eval", "Evaluate a trained network on a dataset CSV");
    add_config_flag(e, ev.config_path);
    e->add_option("--weights", ev.weights, "trained weight file")->required();
    e->add_option("--data", ev.data_csv, "dataset CSV to evaluate on")->required();
    e->add_option("--out-dir", ev.out_dir, "output directory")->required();
    e->callback([&ev] { cmd_eval(ev); });

    RangeArgs rg;
    CLI::App* r = app.add_subcommand(
        "range", "Range detected objects in a stereo pair with a trained network");
    add_config_flag(r, rg.config_path);
    r->add_option("--left", rg.left_img, "left image (8-bit PGM)")->required();
    r->add_option("--right", rg.right_img, "right image (8-bit PGM)")->required();
    r->add_option("--left-boxes", rg.left_det, "left detection file")->required();
    r->add_option("--right-boxes", rg.right_det, "right detection file")->required();
    r->add_option("--format", rg.format, "detection file format")
        ->check(CLI::IsMember({"yolo", "coco"}))
        ->capture_default_str();
    r->add_option("--labels", rg.labels, "class id -> name map file")->required();
    r->add_option("--weights", rg.weights, "trained weight file")->required();
    r->add_flag("--no-clahe", rg.no_clahe, "skip contrast equalization [CLAHE clip 2.0, "
                                           "8x8 grid]");
    r->add_option("--min-matches", rg.min_matches,
                  "discard pairs with fewer feature matches [4]");
    r->add_option("--max-keypoints", rg.max_keypoints, "keypoints kept per box [64]");
    r->add_option("--ratio", rg.ratio, "symmetric ratio test threshold; 0 disables [0]");
    r->add_option("--far-threshold", rg.far_threshold,
                  "clamp reported distances beyond this range in meters [10]");
    r->add_option("--out-dir", rg.out_dir, "output directory")->required();
    r->callback([&rg] { cmd_range(rg); });

    ReconstructArgs rc;
    CLI::App* c = app.add_subcommand(
        "reconstruct", "Back-project a depth map to a metric PLY point cloud");
    add_config_flag(c, rc.config_path);
    c->add_option("--depth", rc.depth_path, "depth raster (PFM, or 16-bit PGM with a "
                                            ".scale sidecar)")
        ->required();
    c->add_option("--image", rc.image_path, "companion intensity image (8-bit PGM)")
        ->required();
    c->add_option("--rig", rc.rig_path, "rig file; its left camera replaces the "
                                        "default parallel rig");
    c->add_option("--fov", rc.fov, "field of view of the default rig in degrees [39]");
    c->add_option("--width", rc.width, "rig width override [depth map width]");
    c->add_option("--height", rc.height, "rig height override [depth map height]");
    CLI::Option* anchors_opt = c->add_option(
        "--anchors", rc.anchors_path, "x,y,distance_cm CSV of metric anchors to fit the "
                                      "depth alignment");
    anchors_opt->excludes(
        c->add_option("--scale", rc.scale, "fixed alignment scale [1]"));
    anchors_opt->excludes(
        c->add_option("--shift", rc.shift, "fixed alignment shift in meters [0]"));
    c->add_option("--stride", rc.stride, "pixel stride of the back-projection grid")
        ->capture_default_str();
    c->add_option("--convention", rc.convention,
                  "aligned value is range along the ray (euclidean) or camera z (zdepth)")
        ->check(CLI::IsMember({"euclidean", "zdepth"}))
        ->capture_default_str();
    c->add_option("--out-dir", rc.out_dir, "output directory")->required();
    c->callback([&rc] { cmd_reconstruct(rc); });

    BenchArgs bn;
    CLI::App* b = app.add_subcommand(
        "bench", "Time batched network inference against per-sample triangulation");
    add_config_flag(b, bn.config_path);
    b->add_option("--n", bn.n, "number of samples")->capture_default_str();
    b->add_option("--seed", bn.seed, "sample generation seed [0]");
    b->add_option("--weights", bn.weights,
                  "weight file to benchmark [fresh random weights]");
    b->add_option("--out-dir", bn.out_dir, "also write the report to <dir>/bench.txt");
    b->callback([&bn] { cmd_bench(bn); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        int code = app.exit(err);
        return code == 0 ? 0 : 1;
    } catch (const IoError& err) {
        std::cerr << "i/o error: " << err.what() << '\n';
        return 2;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
