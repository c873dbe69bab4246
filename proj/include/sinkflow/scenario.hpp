#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sinkflow/flow.hpp"

namespace sinkflow {

enum class Scheme { SjkoEulerian, SjkoLagrangian, Flow };

struct SpaceSpec {
    std::string type = "interval";  // interval | square | points
    double lo = 0.0;
    double hi = 1.0;
    Eigen::Index resolution = 100;
    Matrix points;  // type == points
};

struct PotentialSpec {
    std::string name = "quadratic";  // quadratic | double_well | table
    std::vector<double> table;       // name == table, one value per grid point
};

struct InitSpec {
    std::string type = "gaussian";  // gaussian | uniform | dirac
    std::vector<double> mean;
    double sigma = 0.1;
    std::vector<double> point;  // type == dirac
};

struct OutputSpec {
    std::string dir = "out";
    std::vector<std::string> formats = {"csv", "jsonl", "svg"};
    int frame_stride = 0;  // 0: pick ~8 SVG frames automatically
};

struct SolverSpec {
    double sinkhorn_tol = 0.0;  // 0: library default
    double inner_tol = 1e-8;
    int inner_max_iter = 5000;
    double lcp_tol = 0.0;  // 0: library default
};

/// Declarative description of a desk-scale run; see README for the JSON
/// schema (strict: unknown fields are rejected).
struct ExperimentConfig {
    std::string scenario = "custom";
    SpaceSpec space;
    PotentialSpec potential;
    double epsilon = 0.04;
    double tau = 1e-2;
    double horizon = 1.0;
    Scheme scheme = Scheme::Flow;
    std::uint64_t seed = 0;
    Eigen::Index particles = 64;  // Lagrangian runs
    InitSpec init;
    SolverSpec solver;
    OutputSpec output;
    bool best_effort = false;
    bool timestamps = false;

    // vertical_cost scenario inputs
    std::vector<double> vertical_m_grid;

    void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// Named presets reproducing the desk-scale experiments: convex1d,
/// nonconvex1d, sphere3, vertical_cost.
ExperimentConfig scenario_preset(const std::string& name);
std::vector<std::string> scenario_names();

/// g_mu(sigma, sigma) for mu = m delta_{x1} + (1-m) delta_{x2} and
/// sigma = delta_{x2} - delta_{x1}, tabulated over the m grid.
std::vector<std::array<double, 2>> vertical_cost_curve(const Eigen::RowVectorXd& x1,
                                                       const Eigen::RowVectorXd& x2,
                                                       double epsilon,
                                                       const std::vector<double>& m_grid);

/// One exported/imported record per trajectory frame.
struct FrameRecord {
    double t = 0.0;
    Vector weights;    // Eulerian
    Matrix positions;  // Lagrangian
    Vector b;          // Eulerian
    double energy = 0.0;
    double speed_hc = 0.0;
    double pressure_min = 0.0;
};

std::vector<FrameRecord> make_frames(const FlowTrajectory& traj);

struct ExportContext {
    Eigen::RowVectorXd argmin_point;  // for the mass_near_argmin column
    double near_radius = 0.0;
    Matrix sphere_basis;  // H_c^{-1/2} when the sphere export is requested
    Vector v_grid;        // potential overlay for 1D snapshots
    bool timestamps = false;
};

/// Writes summary.csv, frames.jsonl, SVG snapshots and (n = 3) sphere.csv
/// under `dir` per the requested formats; byte-identical across reruns.
void export_trajectory(const FlowTrajectory& traj, const std::filesystem::path& dir,
                       const std::vector<std::string>& formats, const ExportContext& ctx);

std::vector<FrameRecord> import_frames(const std::filesystem::path& jsonl_path);

struct ScenarioResult {
    int exit_code = 0;
    FlowTrajectory trajectory;
    std::vector<std::string> files;
};

/// Executes the configured scheme and writes trajectory records, summary
/// metrics and plot files. Nonzero exit on solver non-convergence unless
/// best_effort is set.
ScenarioResult run_scenario(const ExperimentConfig& cfg);

}  // namespace sinkflow
