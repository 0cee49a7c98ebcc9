#ifndef SEPUQ_EXPERIMENT_HPP
#define SEPUQ_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sepuq/array_io.hpp"
#include "sepuq/gp_surrogate.hpp"
#include "sepuq/kle_field.hpp"
#include "sepuq/mcmc_inversion.hpp"
#include "sepuq/mesh_fem.hpp"
#include "sepuq/observations.hpp"
#include "sepuq/pgd_forward.hpp"
#include "sepuq/vb_inversion.hpp"

// Configuration, synthetic data, and the end-to-end experiment steps.

namespace sepuq::experiment {

struct ExperimentConfig
{
    std::string profile = "ci";
    int nx = 25;
    int ny = 25;
    double source = 1.0; // constant f
    kle::CovarianceSpec covariance = {};
    std::size_t n2 = 4;
    std::size_t n1 = 6;
    double theta_min = -5.0;
    double theta_max = 5.0;
    std::size_t theta_points = 21;
    // Parametric measure of the surrogate build: "prior" (trapezoid x prior density) or "lebesgue".
    std::string theta_measure = "prior";
    gp::GPHyper gp = {};
    pgd::EnrichOptions pgd = {};
    std::size_t observations = 9; // perfect square, interior lattice
    double noise_percent = 1.0;   // sigma_y as a percentage of mean |y_clean|
    std::size_t benchmark_samples = 100;
    vb::VBConfig vb = {};
    mcmc::McmcConfig mcmc = {};
    std::uint64_t seed = 1;
};

// "ci": 25x25, N2 = 4, N1 = 6, 1e4 sweeps. "paper": 50x50, N2 = 10, N1 = 10, 1e5 sweeps.
ExperimentConfig profile(const std::string& name);

// JSON text; keys missing from the text keep the values of base.
std::string to_json(const ExperimentConfig& config);
ExperimentConfig from_json(const std::string& text, const ExperimentConfig& base);
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base);
// Throws ValidationError for inconsistent settings.
void validate(const ExperimentConfig& config);
// SHA-256 of the canonical JSON dump, hex encoded.
std::string config_hash(const ExperimentConfig& config);

// Per-purpose seeds derived from config.seed.
std::uint64_t reference_seed(const ExperimentConfig& c);
std::uint64_t noise_seed(const ExperimentConfig& c);
std::uint64_t benchmark_seed(const ExperimentConfig& c);
std::uint64_t chain_seed(const ExperimentConfig& c);

// Grid and quadrature weights the surrogate is built with.
ThetaGrid theta_grid(const ExperimentConfig& config);
fem::Field source_field(const ExperimentConfig& config, const fem::GridMesh& mesh);

// Mesh, KL basis, surrogate and GPs for one configuration.
struct Pipeline
{
    ExperimentConfig config;
    fem::GridMesh mesh;
    kle::KLBasis basis;
    fem::Field source;
    pgd::SeparableSolution surrogate;
    std::shared_ptr<gp::GPBank> gps;
    double kle_seconds = 0.0;
    double pgd_seconds = 0.0;
};

Pipeline build_pipeline(const ExperimentConfig& config);
// Reassembles a pipeline from a stored basis and surrogate.
Pipeline assemble_pipeline(const ExperimentConfig& config, kle::KLBasis basis, pgd::SeparableSolution surrogate);

struct Reference
{
    Eigen::VectorXd theta;
    fem::Field log_kappa;
    fem::Field kappa;
};

// theta ~ N(0, I), each component redrawn until it falls inside the theta range.
Reference generate_reference(const ExperimentConfig& config, const kle::KLBasis& basis, std::uint64_t seed);

// {i/(k+1)} x {j/(k+1)}, i, j = 1..k, for count = k^2; x varies fastest.
std::vector<fem::Point> observation_lattice(std::size_t count);

struct SyntheticData
{
    std::vector<fem::Point> locations;
    Eigen::VectorXd clean;
    Eigen::VectorXd noisy;
    double sigma_y = 0.0;
};

// Full FEM solve with kappa_ref, sampled on the lattice, plus N(0, sigma_y^2) noise.
SyntheticData generate_observations(const ExperimentConfig& config, const fem::GridMesh& mesh,
                                    const fem::Field& kappa_ref, std::uint64_t seed);

ObservationSet observation_set(const Pipeline& p, const SyntheticData& data);

struct BenchmarkResult
{
    Eigen::MatrixXd thetas;       // samples x N2, snapped to grid points
    Eigen::VectorXd l2_error;     // relative
    Eigen::VectorXd energy_error; // relative, in the sample's kappa
    double mean_l2 = 0.0;
    double max_l2 = 0.0;
    double mean_energy = 0.0;
    double max_energy = 0.0;
};

// Prior samples snapped to the nearest grid point; surrogate vs direct FEM.
BenchmarkResult forward_benchmark(const Pipeline& p, std::size_t samples, std::uint64_t seed);

// ||y - u_FEM(theta) at the locations||_2 / sqrt(M).
double fem_misfit(const Pipeline& p, const Eigen::VectorXd& theta, const ObservationSet& obs);
double surrogate_misfit(const Pipeline& p, const Eigen::VectorXd& theta, const ObservationSet& obs);

// Wall-clock seconds of one assemble + solve at theta = 0.
double fem_solve_seconds(const Pipeline& p, int repeats);

// Relative L2 error of a log-permeability field against a reference.
double field_error(const fem::GridMesh& mesh, const fem::Field& field, const fem::Field& reference);

// Nodal field as an (ny+1) x (nx+1) grid, row iy.
Eigen::MatrixXd field_grid(const fem::GridMesh& mesh, const fem::Field& field);

// Artifact records. Every file also carries the text record "config_hash".
void put_basis(io::ArrayFile& file, const kle::KLBasis& basis);
kle::KLBasis get_basis(const io::ArrayFile& file);
void put_surrogate(io::ArrayFile& file, const pgd::SeparableSolution& sol);
pgd::SeparableSolution get_surrogate(const io::ArrayFile& file);

} // namespace sepuq::experiment

#endif
