#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "sinkflow/scenario.hpp"

#include <json.hpp>

namespace sinkflow {

namespace {

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string fmt6(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
}

bool has_format(const std::vector<std::string>& formats, const std::string& f) {
    return std::find(formats.begin(), formats.end(), f) != formats.end();
}

// --- SVG snapshots -------------------------------------------------------

constexpr int kSvgW = 480;
constexpr int kSvgH = 320;
constexpr double kMargin = 30.0;

std::string svg_open() {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgW << "\" height=\""
       << kSvgH << "\" viewBox=\"0 0 " << kSvgW << " " << kSvgH << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return os.str();
}

std::string svg_1d(const FrameRecord& frame, double lo, double hi, const Vector& v_grid,
                   const Matrix& grid_points, double t) {
    std::ostringstream os;
    os << svg_open();
    const auto sx = [&](double x) {
        return kMargin + (x - lo) / (hi - lo) * (kSvgW - 2.0 * kMargin);
    };
    const double base = kSvgH - kMargin;

    if (v_grid.size() > 0 && grid_points.rows() == v_grid.size()) {
        const double vmax = v_grid.maxCoeff();
        const double vmin = v_grid.minCoeff();
        const double span = vmax > vmin ? vmax - vmin : 1.0;
        os << "<polyline fill=\"none\" stroke=\"#4477cc\" stroke-width=\"1\" points=\"";
        for (Eigen::Index i = 0; i < v_grid.size(); ++i) {
            const double y = base - (v_grid(i) - vmin) / span * (kSvgH - 2.0 * kMargin) * 0.6;
            os << fmt6(sx(grid_points(i, 0))) << "," << fmt6(y) << " ";
        }
        os << "\"/>\n";
    }

    if (frame.weights.size() > 0) {
        const double wmax = std::max(frame.weights.maxCoeff(), 1e-300);
        const double bar_w =
            (kSvgW - 2.0 * kMargin) / static_cast<double>(frame.weights.size()) * 0.8;
        for (Eigen::Index i = 0; i < frame.weights.size(); ++i) {
            const double h = frame.weights(i) / wmax * (kSvgH - 2.0 * kMargin);
            os << "<rect x=\"" << fmt6(sx(grid_points(i, 0)) - bar_w / 2.0) << "\" y=\""
               << fmt6(base - h) << "\" width=\"" << fmt6(bar_w) << "\" height=\"" << fmt6(h)
               << "\" fill=\"#cc3333\"/>\n";
        }
    } else if (frame.positions.rows() > 0) {
        // particle histogram over 32 bins
        const int bins = 32;
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(bins);
        for (Eigen::Index i = 0; i < frame.positions.rows(); ++i) {
            int bin = static_cast<int>((frame.positions(i, 0) - lo) / (hi - lo) * bins);
            bin = std::min(bins - 1, std::max(0, bin));
            counts(bin) += 1.0;
        }
        const double cmax = std::max(counts.maxCoeff(), 1.0);
        const double bar_w = (kSvgW - 2.0 * kMargin) / bins;
        for (int bfull = 0; bfull < bins; ++bfull) {
            const double h = counts(bfull) / cmax * (kSvgH - 2.0 * kMargin);
            os << "<rect x=\"" << fmt6(kMargin + bfull * bar_w) << "\" y=\"" << fmt6(base - h)
               << "\" width=\"" << fmt6(bar_w * 0.9) << "\" height=\"" << fmt6(h)
               << "\" fill=\"#dd8822\"/>\n";
        }
    }
    os << "<text x=\"" << kMargin << "\" y=\"18\" font-size=\"12\">t = " << fmt6(t)
       << "</text>\n</svg>\n";
    return os.str();
}

std::string svg_2d(const FrameRecord& frame, double lo, double hi, const Matrix& grid_points,
                   double t) {
    std::ostringstream os;
    os << svg_open();
    const double side = std::min(kSvgW, kSvgH) - 2.0 * kMargin;
    const auto sx = [&](double x) { return kMargin + (x - lo) / (hi - lo) * side; };
    const auto sy = [&](double y) { return kSvgH - kMargin - (y - lo) / (hi - lo) * side; };

    if (frame.weights.size() > 0 && grid_points.rows() == frame.weights.size()) {
        const double wmax = std::max(frame.weights.maxCoeff(), 1e-300);
        const double cell = side / std::sqrt(static_cast<double>(grid_points.rows()));
        for (Eigen::Index i = 0; i < frame.weights.size(); ++i) {
            const double o = frame.weights(i) / wmax;
            if (o < 1e-4) continue;
            os << "<rect x=\"" << fmt6(sx(grid_points(i, 0)) - cell / 2.0) << "\" y=\""
               << fmt6(sy(grid_points(i, 1)) - cell / 2.0) << "\" width=\"" << fmt6(cell)
               << "\" height=\"" << fmt6(cell) << "\" fill=\"#cc3333\" fill-opacity=\""
               << fmt6(o) << "\"/>\n";
        }
    } else {
        for (Eigen::Index i = 0; i < frame.positions.rows(); ++i) {
            os << "<circle cx=\"" << fmt6(sx(frame.positions(i, 0))) << "\" cy=\""
               << fmt6(sy(frame.positions(i, 1))) << "\" r=\"3\" fill=\"#dd8822\"/>\n";
        }
    }
    os << "<text x=\"" << kMargin << "\" y=\"18\" font-size=\"12\">t = " << fmt6(t)
       << "</text>\n</svg>\n";
    return os.str();
}

std::string svg_sphere(const std::vector<Vector>& coords, std::size_t upto, double t) {
    std::ostringstream os;
    os << svg_open();
    const double cx = kSvgW / 2.0;
    const double cy = kSvgH / 2.0;
    const double r = std::min(kSvgW, kSvgH) / 2.0 - kMargin;
    os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << r
       << "\" fill=\"none\" stroke=\"#888888\"/>\n";
    // orthographic projection onto the (y2, y3) plane
    os << "<polyline fill=\"none\" stroke=\"#cc3333\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k <= upto && k < coords.size(); ++k) {
        os << fmt6(cx + coords[k](1) * r) << "," << fmt6(cy - coords[k](2) * r) << " ";
    }
    os << "\"/>\n";
    if (upto < coords.size()) {
        os << "<circle cx=\"" << fmt6(cx + coords[upto](1) * r) << "\" cy=\""
           << fmt6(cy - coords[upto](2) * r) << "\" r=\"4\" fill=\"#cc3333\"/>\n";
    }
    os << "<text x=\"" << kMargin << "\" y=\"18\" font-size=\"12\">t = " << fmt6(t)
       << "</text>\n</svg>\n";
    return os.str();
}

}  // namespace

std::vector<FrameRecord> make_frames(const FlowTrajectory& traj) {
    std::vector<FrameRecord> frames;
    frames.reserve(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        FrameRecord f;
        f.t = traj.times[k];
        if (!traj.states.empty()) {
            f.b = traj.states[k].values();
            f.weights = k < traj.measures.size() ? traj.measures[k].weights()
                                                 : traj.states[k].measure_weights();
        } else if (k < traj.measures.size()) {
            if (traj.measures[k].mode() == MeasureMode::Lagrangian) {
                f.positions = traj.measures[k].positions();
            } else {
                f.weights = traj.measures[k].weights();
            }
        }
        f.energy = traj.energies[k];
        f.speed_hc = traj.speed_norms[k];
        f.pressure_min = k < traj.pressures.size() ? traj.pressures[k].min() : 0.0;
        frames.push_back(std::move(f));
    }
    return frames;
}

void export_trajectory(const FlowTrajectory& traj, const std::filesystem::path& dir,
                       const std::vector<std::string>& formats, const ExportContext& ctx) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());

    const std::vector<FrameRecord> frames = make_frames(traj);

    if (has_format(formats, "csv")) {
        std::ostringstream csv;
        csv << "t,energy,speed_hc,mass_near_argmin,hc_norm_residual\n";
        for (std::size_t k = 0; k < frames.size(); ++k) {
            double near = 0.0;
            if (ctx.near_radius > 0.0 && k < traj.measures.size()) {
                const DiscreteMeasure& mu = traj.measures[k];
                for (Eigen::Index i = 0; i < mu.size(); ++i) {
                    if ((mu.support().row(i) - ctx.argmin_point).norm() <= ctx.near_radius) {
                        near += mu.weights()(i);
                    }
                }
            }
            csv << fmt(frames[k].t) << "," << fmt(frames[k].energy) << ","
                << fmt(frames[k].speed_hc) << "," << fmt(near) << ","
                << fmt(k < traj.hc_norm_residuals.size() ? traj.hc_norm_residuals[k] : 0.0)
                << "\n";
        }
        write_file(dir / "summary.csv", csv.str());
    }

    if (has_format(formats, "jsonl")) {
        std::ostringstream out;
        for (const FrameRecord& f : frames) {
            nlohmann::ordered_json rec;
            rec["t"] = f.t;
            if (f.weights.size() > 0) {
                rec["weights"] = std::vector<double>(f.weights.data(),
                                                     f.weights.data() + f.weights.size());
            }
            if (f.positions.rows() > 0) {
                std::vector<std::vector<double>> pos;
                pos.reserve(static_cast<std::size_t>(f.positions.rows()));
                for (Eigen::Index i = 0; i < f.positions.rows(); ++i) {
                    pos.emplace_back(f.positions.row(i).data(),
                                     f.positions.row(i).data() + f.positions.cols());
                }
                rec["positions"] = pos;
            }
            if (f.b.size() > 0) {
                rec["b"] = std::vector<double>(f.b.data(), f.b.data() + f.b.size());
            }
            rec["energy"] = f.energy;
            rec["speed_hc"] = f.speed_hc;
            rec["pressure_min"] = f.pressure_min;
            out << rec.dump() << "\n";
        }
        write_file(dir / "frames.jsonl", out.str());
    }

    if (has_format(formats, "svg") && !frames.empty()) {
        std::filesystem::create_directories(dir / "frames", ec);
        const bool is_1d = (!traj.measures.empty() && traj.measures[0].support().cols() == 1);
        const bool is_2d = (!traj.measures.empty() && traj.measures[0].support().cols() == 2);
        double lo = 0.0;
        double hi = 1.0;
        Matrix grid;
        const Vector& v_grid = ctx.v_grid;
        if (!traj.measures.empty()) {
            grid = traj.measures[0].support();
            lo = grid.minCoeff();
            hi = grid.maxCoeff();
            if (hi <= lo) hi = lo + 1.0;
        }
        std::size_t stride = 1;
        if (frames.size() > 8) stride = (frames.size() - 1 + 7) / 8;

        std::vector<Vector> sphere;
        if (ctx.sphere_basis.size() > 0 && !traj.states.empty()) {
            sphere.reserve(traj.states.size());
            for (const auto& s : traj.states) sphere.push_back(ctx.sphere_basis * s.values());
        }

        for (std::size_t k = 0; k < frames.size(); k += stride) {
            char name[64];
            std::snprintf(name, sizeof(name), "frame_%05zu.svg", k);
            std::string body;
            if (!sphere.empty()) {
                body = svg_sphere(sphere, k, frames[k].t);
            } else if (is_1d) {
                body = svg_1d(frames[k], lo, hi, v_grid, grid, frames[k].t);
            } else if (is_2d) {
                body = svg_2d(frames[k], lo, hi, grid, frames[k].t);
            } else {
                continue;
            }
            if (ctx.timestamps) {
                body = "<!-- generated " + std::to_string(std::time(nullptr)) + " -->\n" + body;
            }
            write_file(dir / "frames" / name, body);
        }
    }

    if (has_format(formats, "sphere") && ctx.sphere_basis.size() > 0 && !traj.states.empty()) {
        std::ostringstream csv;
        csv << "t,y1,y2,y3\n";
        for (std::size_t k = 0; k < traj.states.size(); ++k) {
            const Vector y = ctx.sphere_basis * traj.states[k].values();
            csv << fmt(traj.times[k]) << "," << fmt(y(0)) << "," << fmt(y(1)) << ","
                << fmt(y(2)) << "\n";
        }
        write_file(dir / "sphere.csv", csv.str());
    }
}

std::vector<FrameRecord> import_frames(const std::filesystem::path& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("cannot open " + jsonl_path.string());
    std::vector<FrameRecord> frames;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        FrameRecord f;
        f.t = rec.at("t").get<double>();
        if (rec.contains("weights")) {
            const auto w = rec["weights"].get<std::vector<double>>();
            f.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
        }
        if (rec.contains("positions")) {
            const auto pos = rec["positions"].get<std::vector<std::vector<double>>>();
            if (!pos.empty()) {
                f.positions.resize(static_cast<Eigen::Index>(pos.size()),
                                   static_cast<Eigen::Index>(pos[0].size()));
                for (std::size_t i = 0; i < pos.size(); ++i) {
                    for (std::size_t j = 0; j < pos[i].size(); ++j) {
                        f.positions(static_cast<Eigen::Index>(i),
                                    static_cast<Eigen::Index>(j)) = pos[i][j];
                    }
                }
            }
        }
        if (rec.contains("b")) {
            const auto b = rec["b"].get<std::vector<double>>();
            f.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
        }
        f.energy = rec.at("energy").get<double>();
        f.speed_hc = rec.at("speed_hc").get<double>();
        f.pressure_min = rec.at("pressure_min").get<double>();
        frames.push_back(std::move(f));
    }
    return frames;
}

}  // namespace sinkflow
