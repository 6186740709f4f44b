#pragma once

// Shared fixtures for the test binaries: synthetic few-shot tasks, an
// independent transport LP solver, finite differences, scratch directories.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mpd/decoder.hpp"
#include "mpd/feature_store.hpp"
#include "mpd/numerics.hpp"

namespace testkit {

struct TaskShape {
  std::size_t classes = 2;
  std::size_t shots = 4;
  std::size_t prompts = 3;
  std::size_t dim = 16;
  std::size_t held_out_per_class = 50;
  std::size_t modes = 1;      // clusters per class
  double separation = 4.0;    // distance scale between cluster centres
  double prompt_shift = 1.0;  // per-prompt offset shared by every class
  double noise = 1.0;
  // Mode centres of a class are c and -c, so every class has mean zero.
  bool antipodal_modes = false;
  // Each prompt of a sample draws its own mode instead of sharing one.
  bool mode_per_prompt = false;
};

struct Task {
  mpd::TrainingSet train;
  std::vector<mpd::Sample> held_out;
};

// Separable Gaussian clusters. Each sample draws one mode of its class; each
// prompt adds a fixed offset plus isotropic noise.
Task gaussian_task(const TaskShape& shape, std::uint64_t seed);

// Wraps samples into a feature pack whose label-word axis holds one seed
// word per class. Scores favour the gold class by `score_margin` in log space.
mpd::FeaturePack make_pack(const std::vector<mpd::Sample>& samples, std::size_t classes,
                           std::size_t shots, const std::string& split, std::uint64_t seed,
                           double score_margin = 1.0);

// Minimum of <T, C> over the transportation polytope with uniform marginals,
// by enumerating basic feasible solutions. Intended for P, Q <= 4.
double transport_lp(const mpd::Matrix& cost);

mpd::Matrix random_matrix(std::size_t rows, std::size_t cols, mpd::Rng& rng, double lo = -1.0,
                          double hi = 1.0);
mpd::Matrix gaussian_matrix(std::size_t rows, std::size_t cols, mpd::Rng& rng, double stddev = 1.0);

// Central differences of f with respect to every entry of x.
mpd::Matrix numeric_gradient(mpd::Matrix& x, const std::function<double()>& f, double h = 1e-6);

// ||a - b|| / max(||a||, ||b||, floor) over all entries.
double relative_error(const mpd::Matrix& a, const mpd::Matrix& b, double floor = 1e-12);

class ScratchDir {
 public:
  ScratchDir();
  ~ScratchDir();
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);

}  // namespace testkit
