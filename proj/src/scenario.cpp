#include "sinkflow/scenario.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace sinkflow {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("unknown field \"" + item.key() + "\" in " + where);
        }
    }
}

Scheme parse_scheme(const std::string& s) {
    if (s == "sjko_eulerian") return Scheme::SjkoEulerian;
    if (s == "sjko_lagrangian") return Scheme::SjkoLagrangian;
    if (s == "flow") return Scheme::Flow;
    throw ConfigError("scheme must be sjko_eulerian, sjko_lagrangian or flow, got \"" + s +
                      "\"");
}

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::SjkoEulerian: return "sjko_eulerian";
        case Scheme::SjkoLagrangian: return "sjko_lagrangian";
        case Scheme::Flow: return "flow";
    }
    return "flow";
}

}  // namespace

void ExperimentConfig::validate() const {
    if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
    if (tau <= 0.0) throw ConfigError("tau must be > 0");
    if (horizon <= 0.0) throw ConfigError("horizon must be > 0");
    if (space.type == "points") {
        if (space.points.rows() < 1) throw ConfigError("space.points must be nonempty");
    } else if (space.type == "interval" || space.type == "square") {
        if (space.resolution < 2) throw ConfigError("space.resolution must be >= 2");
        if (space.hi <= space.lo) throw ConfigError("space.hi must exceed space.lo");
    } else {
        throw ConfigError("space.type must be interval, square or points");
    }
    if (potential.name != "quadratic" && potential.name != "double_well" &&
        potential.name != "table") {
        throw ConfigError("potential.name must be quadratic, double_well or table");
    }
    if (scheme == Scheme::SjkoLagrangian && potential.name == "table") {
        throw ConfigError("potential.name=table needs a fixed grid (Eulerian or flow)");
    }
    if (init.type != "gaussian" && init.type != "uniform" && init.type != "dirac") {
        throw ConfigError("init.type must be gaussian, uniform or dirac");
    }
    if (init.type == "gaussian" && init.sigma <= 0.0) {
        throw ConfigError("init.sigma must be > 0");
    }
    if (solver.inner_tol <= 0.0) throw ConfigError("solver.inner_tol must be > 0");
    if (solver.sinkhorn_tol < 0.0) throw ConfigError("solver.sinkhorn_tol must be >= 0");
    if (solver.lcp_tol < 0.0) throw ConfigError("solver.lcp_tol must be >= 0");
    if (scheme == Scheme::SjkoLagrangian && particles < 1) {
        throw ConfigError("particles must be >= 1");
    }
}

ExperimentConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(root, "config",
                   {"version", "scenario", "space", "potential", "epsilon", "tau", "horizon",
                    "scheme", "seed", "particles", "init", "solver", "output", "best_effort",
                    "timestamps", "vertical_m_grid"});
    if (!root.contains("version") || !root["version"].is_number_integer() ||
        root["version"].get<int>() != 1) {
        throw ConfigError("config requires \"version\": 1");
    }

    ExperimentConfig cfg;
    if (root.contains("scenario")) {
        cfg = scenario_preset(root["scenario"].get<std::string>());
    }
    if (root.contains("space")) {
        const json& s = root["space"];
        reject_unknown(s, "space", {"type", "lo", "hi", "resolution", "points"});
        cfg.space = SpaceSpec{};
        if (s.contains("type")) cfg.space.type = s["type"].get<std::string>();
        if (s.contains("lo")) cfg.space.lo = s["lo"].get<double>();
        if (s.contains("hi")) cfg.space.hi = s["hi"].get<double>();
        if (s.contains("resolution")) cfg.space.resolution = s["resolution"].get<Eigen::Index>();
        if (s.contains("points")) {
            const auto pts = s["points"].get<std::vector<std::vector<double>>>();
            if (pts.empty()) throw ConfigError("space.points must be nonempty");
            cfg.space.points.resize(static_cast<Eigen::Index>(pts.size()),
                                    static_cast<Eigen::Index>(pts[0].size()));
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (pts[i].size() != pts[0].size()) {
                    throw ConfigError("space.points rows must have equal length");
                }
                for (std::size_t j = 0; j < pts[i].size(); ++j) {
                    cfg.space.points(static_cast<Eigen::Index>(i),
                                     static_cast<Eigen::Index>(j)) = pts[i][j];
                }
            }
        }
    }
    if (root.contains("potential")) {
        const json& p = root["potential"];
        reject_unknown(p, "potential", {"name", "values"});
        cfg.potential = PotentialSpec{};
        if (p.contains("name")) cfg.potential.name = p["name"].get<std::string>();
        if (p.contains("values")) cfg.potential.table = p["values"].get<std::vector<double>>();
    }
    if (root.contains("epsilon")) cfg.epsilon = root["epsilon"].get<double>();
    if (root.contains("tau")) cfg.tau = root["tau"].get<double>();
    if (root.contains("horizon")) cfg.horizon = root["horizon"].get<double>();
    if (root.contains("scheme")) cfg.scheme = parse_scheme(root["scheme"].get<std::string>());
    if (root.contains("seed")) cfg.seed = root["seed"].get<std::uint64_t>();
    if (root.contains("particles")) cfg.particles = root["particles"].get<Eigen::Index>();
    if (root.contains("init")) {
        const json& i = root["init"];
        reject_unknown(i, "init", {"type", "mean", "sigma", "point"});
        cfg.init = InitSpec{};
        if (i.contains("type")) cfg.init.type = i["type"].get<std::string>();
        if (i.contains("mean")) cfg.init.mean = i["mean"].get<std::vector<double>>();
        if (i.contains("sigma")) cfg.init.sigma = i["sigma"].get<double>();
        if (i.contains("point")) cfg.init.point = i["point"].get<std::vector<double>>();
    }
    if (root.contains("solver")) {
        const json& s = root["solver"];
        reject_unknown(s, "solver", {"sinkhorn_tol", "inner_tol", "inner_max_iter", "lcp_tol"});
        if (s.contains("sinkhorn_tol")) cfg.solver.sinkhorn_tol = s["sinkhorn_tol"].get<double>();
        if (s.contains("inner_tol")) cfg.solver.inner_tol = s["inner_tol"].get<double>();
        if (s.contains("inner_max_iter")) {
            cfg.solver.inner_max_iter = s["inner_max_iter"].get<int>();
        }
        if (s.contains("lcp_tol")) cfg.solver.lcp_tol = s["lcp_tol"].get<double>();
    }
    if (root.contains("output")) {
        const json& o = root["output"];
        reject_unknown(o, "output", {"dir", "formats", "frame_stride"});
        if (o.contains("dir")) cfg.output.dir = o["dir"].get<std::string>();
        if (o.contains("formats")) {
            cfg.output.formats = o["formats"].get<std::vector<std::string>>();
        }
        if (o.contains("frame_stride")) cfg.output.frame_stride = o["frame_stride"].get<int>();
    }
    if (root.contains("best_effort")) cfg.best_effort = root["best_effort"].get<bool>();
    if (root.contains("timestamps")) cfg.timestamps = root["timestamps"].get<bool>();
    if (root.contains("vertical_m_grid")) {
        cfg.vertical_m_grid = root["vertical_m_grid"].get<std::vector<double>>();
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
    ordered_json root;
    root["version"] = 1;
    root["scenario"] = cfg.scenario;
    ordered_json space;
    space["type"] = cfg.space.type;
    if (cfg.space.type == "points") {
        std::vector<std::vector<double>> pts;
        for (Eigen::Index i = 0; i < cfg.space.points.rows(); ++i) {
            pts.emplace_back(cfg.space.points.row(i).data(),
                             cfg.space.points.row(i).data() + cfg.space.points.cols());
        }
        space["points"] = pts;
    } else {
        space["lo"] = cfg.space.lo;
        space["hi"] = cfg.space.hi;
        space["resolution"] = cfg.space.resolution;
    }
    root["space"] = space;
    ordered_json pot;
    pot["name"] = cfg.potential.name;
    if (!cfg.potential.table.empty()) pot["values"] = cfg.potential.table;
    root["potential"] = pot;
    root["epsilon"] = cfg.epsilon;
    root["tau"] = cfg.tau;
    root["horizon"] = cfg.horizon;
    root["scheme"] = scheme_name(cfg.scheme);
    root["seed"] = cfg.seed;
    root["particles"] = cfg.particles;
    ordered_json init;
    init["type"] = cfg.init.type;
    if (!cfg.init.mean.empty()) init["mean"] = cfg.init.mean;
    init["sigma"] = cfg.init.sigma;
    if (!cfg.init.point.empty()) init["point"] = cfg.init.point;
    root["init"] = init;
    ordered_json solver;
    solver["sinkhorn_tol"] = cfg.solver.sinkhorn_tol;
    solver["inner_tol"] = cfg.solver.inner_tol;
    solver["inner_max_iter"] = cfg.solver.inner_max_iter;
    solver["lcp_tol"] = cfg.solver.lcp_tol;
    root["solver"] = solver;
    ordered_json output;
    output["dir"] = cfg.output.dir;
    output["formats"] = cfg.output.formats;
    output["frame_stride"] = cfg.output.frame_stride;
    root["output"] = output;
    root["best_effort"] = cfg.best_effort;
    root["timestamps"] = cfg.timestamps;
    if (!cfg.vertical_m_grid.empty()) root["vertical_m_grid"] = cfg.vertical_m_grid;
    return root.dump(2) + "\n";
}

ExperimentConfig scenario_preset(const std::string& name) {
    ExperimentConfig cfg;
    cfg.scenario = name;
    if (name == "convex1d") {
        cfg.space = SpaceSpec{"interval", 0.0, 1.0, 100, {}};
        cfg.potential.name = "quadratic";
        cfg.epsilon = 0.04;
        cfg.tau = 5e-3;
        cfg.horizon = 1.0;
        cfg.scheme = Scheme::Flow;
        cfg.init = InitSpec{"gaussian", {0.3}, 0.1, {}};
    } else if (name == "nonconvex1d") {
        cfg.space = SpaceSpec{"interval", 0.0, 1.0, 100, {}};
        cfg.potential.name = "double_well";
        cfg.epsilon = 0.04;
        cfg.tau = 1e-2;
        cfg.horizon = 7.35;
        cfg.scheme = Scheme::Flow;
        cfg.init = InitSpec{"gaussian", {0.25}, 0.07, {}};
    } else if (name == "nonconvex1d_lagrangian") {
        cfg.space = SpaceSpec{"interval", 0.0, 1.0, 100, {}};
        cfg.potential.name = "double_well";
        cfg.epsilon = 0.04;
        cfg.tau = 5e-2;
        cfg.horizon = 7.35;
        cfg.scheme = Scheme::SjkoLagrangian;
        cfg.particles = 64;
        cfg.init = InitSpec{"gaussian", {0.25}, 0.07, {}};
    } else if (name == "sphere3") {
        SpaceSpec s;
        s.type = "points";
        s.points = Matrix(3, 1);
        s.points << 0.0, 0.5, 1.0;
        cfg.space = s;
        cfg.potential.name = "quadratic";
        cfg.epsilon = 0.5;
        cfg.tau = 1e-2;
        cfg.horizon = 4.0;
        cfg.scheme = Scheme::Flow;
        cfg.init = InitSpec{"uniform", {}, 0.1, {}};
        cfg.output.formats = {"csv", "jsonl", "svg", "sphere"};
    } else if (name == "collapse2d") {
        cfg.space = SpaceSpec{"square", 0.0, 1.0, 24, {}};
        cfg.potential.name = "quadratic";
        cfg.epsilon = 0.04;
        cfg.tau = 2e-2;
        cfg.horizon = 0.5;
        cfg.scheme = Scheme::SjkoLagrangian;
        cfg.particles = 100;
        cfg.init = InitSpec{"gaussian", {0.6, 0.6}, 0.12, {}};
    } else if (name == "vertical_cost") {
        SpaceSpec s;
        s.type = "points";
        s.points = Matrix(2, 1);
        s.points << 0.0, 1.0;
        cfg.space = s;
        cfg.potential.name = "quadratic";
        cfg.epsilon = 1.0;
        cfg.scheme = Scheme::Flow;
        cfg.vertical_m_grid.clear();
        for (int i = 1; i < 100; ++i) cfg.vertical_m_grid.push_back(0.01 * i);
    } else {
        throw ConfigError("unknown scenario \"" + name + "\"");
    }
    return cfg;
}

std::vector<std::string> scenario_names() {
    return {"convex1d", "nonconvex1d", "nonconvex1d_lagrangian", "sphere3", "collapse2d",
            "vertical_cost"};
}

std::vector<std::array<double, 2>> vertical_cost_curve(const Eigen::RowVectorXd& x1,
                                                       const Eigen::RowVectorXd& x2,
                                                       double epsilon,
                                                       const std::vector<double>& m_grid) {
    if ((x1 - x2).norm() == 0.0) throw Error("vertical_cost_curve: points must be distinct");
    Matrix pts(2, x1.size());
    pts.row(0) = x1;
    pts.row(1) = x2;
    auto space = std::make_shared<const DiscreteSpace>(pts);
    auto kernel = GibbsKernel::on_space(space, epsilon);
    Vector sigma(2);
    sigma << -1.0, 1.0;  // delta_{x2} - delta_{x1}

    std::vector<std::array<double, 2>> curve;
    curve.reserve(m_grid.size());
    for (const double m : m_grid) {
        if (m <= 0.0 || m >= 1.0) {
            throw Error("vertical_cost_curve: m must lie strictly inside (0,1)");
        }
        Vector w(2);
        w << m, 1.0 - m;
        const SphereEmbedding b = embed(DiscreteMeasure::eulerian(space, w), kernel);
        curve.push_back({m, metric_g_mu(b, sigma)});
    }
    return curve;
}

namespace {

std::shared_ptr<const DiscreteSpace> build_space(const SpaceSpec& spec) {
    if (spec.type == "interval") {
        return std::make_shared<const DiscreteSpace>(
            DiscreteSpace::interval(spec.lo, spec.hi, spec.resolution));
    }
    if (spec.type == "square") {
        return std::make_shared<const DiscreteSpace>(
            DiscreteSpace::square(spec.lo, spec.hi, spec.resolution));
    }
    return std::make_shared<const DiscreteSpace>(spec.points);
}

Potential build_potential(const PotentialSpec& spec) {
    if (spec.name == "quadratic") return quadratic_potential();
    if (spec.name == "double_well") return double_well_potential();
    throw ConfigError("potential \"" + spec.name + "\" has no functional form");
}

Eigen::RowVectorXd to_row(const std::vector<double>& v, Eigen::Index dim,
                          const std::string& field) {
    if (static_cast<Eigen::Index>(v.size()) != dim) {
        throw ConfigError(field + " must have " + std::to_string(dim) + " coordinates");
    }
    return Eigen::Map<const Eigen::RowVectorXd>(v.data(), dim);
}

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

ScenarioResult run_scenario(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::filesystem::path dir(cfg.output.dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());

    ScenarioResult result;
    const auto emit = [&](const std::filesystem::path& p, const std::string& content) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw IoError("cannot write " + p.string());
        out << content;
        result.files.push_back(p.string());
    };
    emit(dir / "config.json", config_to_json(cfg));

    if (cfg.scenario == "vertical_cost") {
        auto space = build_space(cfg.space);
        if (space->size() != 2) {
            throw ConfigError("vertical_cost needs a 2-point space");
        }
        const auto curve = vertical_cost_curve(space->point(0), space->point(1), cfg.epsilon,
                                               cfg.vertical_m_grid);
        std::string csv = "m,cost\n";
        for (const auto& row : curve) {
            csv += fmt17(row[0]) + "," + fmt17(row[1]) + "\n";
        }
        emit(dir / "vertical_cost.csv", csv);
        return result;
    }

    auto space = build_space(cfg.space);
    const Eigen::Index dim = space->dim();

    Vector v_grid;
    Potential pot;
    if (cfg.potential.name == "table") {
        if (static_cast<Eigen::Index>(cfg.potential.table.size()) != space->size()) {
            throw ConfigError("potential.values must match the grid size");
        }
        v_grid = Eigen::Map<const Vector>(cfg.potential.table.data(), space->size());
    } else {
        pot = build_potential(cfg.potential);
        v_grid = potential_values(pot, space->points());
    }

    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Constant(dim, 0.5);
    if (!cfg.init.mean.empty()) mean = to_row(cfg.init.mean, dim, "init.mean");

    SjkoConfig scfg;
    scfg.tau = cfg.tau;
    scfg.epsilon = cfg.epsilon;
    scfg.inner_tol = cfg.solver.inner_tol;
    scfg.inner_max_iter = cfg.solver.inner_max_iter;
    scfg.sinkhorn.tolerance = cfg.solver.sinkhorn_tol;

    FlowTrajectory traj;
    if (cfg.scheme == Scheme::SjkoLagrangian) {
        Matrix particles;
        if (cfg.init.type == "dirac") {
            particles = to_row(cfg.init.point, dim, "init.point");
        } else {
            const Eigen::RowVectorXd lo = Eigen::RowVectorXd::Constant(dim, cfg.space.lo);
            const Eigen::RowVectorXd hi = Eigen::RowVectorXd::Constant(dim, cfg.space.hi);
            const double sigma =
                cfg.init.type == "uniform" ? (cfg.space.hi - cfg.space.lo) : cfg.init.sigma;
            particles = sample_gaussian_particles(cfg.particles, mean, sigma, lo, hi, cfg.seed);
        }
        scfg.scheme = MeasureMode::Lagrangian;
        traj = run_sjko(DiscreteMeasure::lagrangian(particles), pot, scfg, cfg.horizon);
    } else {
        Vector weights;
        if (cfg.init.type == "gaussian") {
            weights = gaussian_weights(*space, mean, cfg.init.sigma);
        } else if (cfg.init.type == "uniform") {
            weights = Vector::Constant(space->size(), 1.0 / static_cast<double>(space->size()));
        } else {
            const Eigen::RowVectorXd pt = to_row(cfg.init.point, dim, "init.point");
            Eigen::Index best = 0;
            (space->points().rowwise() - pt).rowwise().squaredNorm().minCoeff(&best);
            weights = Vector::Zero(space->size());
            weights(best) = 1.0;
        }
        const DiscreteMeasure mu0 = DiscreteMeasure::eulerian(space, weights);
        if (cfg.scheme == Scheme::SjkoEulerian) {
            scfg.scheme = MeasureMode::Eulerian;
            traj = run_sjko(mu0, v_grid, scfg, cfg.horizon);
        } else {
            auto kernel = GibbsKernel::on_space(space, cfg.epsilon);
            const PotentialOperator op(v_grid, kernel);
            LcpOptions lcp;
            lcp.tolerance = cfg.solver.lcp_tol;
            const SphereEmbedding b0 = embed(mu0, kernel, scfg.sinkhorn);
            traj = run_flow(b0, op, cfg.tau, cfg.horizon, lcp);
        }
    }

    ExportContext ctx;
    Eigen::Index argmin = 0;
    v_grid.minCoeff(&argmin);
    ctx.argmin_point = space->point(argmin);
    double pitch = (cfg.space.hi - cfg.space.lo) / static_cast<double>(cfg.space.resolution - 1);
    if (cfg.space.type == "points") {
        pitch = 0.0;
        for (Eigen::Index i = 0; i < space->size(); ++i) {
            double nearest = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < space->size(); ++j) {
                if (i != j) nearest = std::min(nearest, (space->point(i) - space->point(j)).norm());
            }
            pitch = std::max(pitch, nearest);
        }
    }
    ctx.near_radius = 2.0 * pitch + 1e-12;
    ctx.v_grid = v_grid;
    ctx.timestamps = cfg.timestamps;
    if (space->size() == 3 && !traj.states.empty()) {
        ctx.sphere_basis = traj.states.front().kernel()->inverse_sqrt();
    }
    export_trajectory(traj, dir, cfg.output.formats, ctx);
    for (const auto& f : cfg.output.formats) {
        if (f == "csv") result.files.push_back((dir / "summary.csv").string());
        if (f == "jsonl") result.files.push_back((dir / "frames.jsonl").string());
        if (f == "sphere" && space->size() == 3) {
            result.files.push_back((dir / "sphere.csv").string());
        }
    }

    result.trajectory = std::move(traj);
    result.exit_code = (result.trajectory.all_converged || cfg.best_effort) ? 0 : 1;
    return result;
}

}  // namespace sinkflow
