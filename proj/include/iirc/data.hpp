#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "iirc/hierarchy.hpp"

namespace iirc {

/// One single-label sample; `subclass` is always a leaf of the hierarchy.
struct RawSample {
  std::uint64_t id = 0;
  std::vector<double> features;
  ClassIndex subclass = 0;
};

/// Hierarchical Gaussian clusters.
///
/// Centers come from the stream derive_seed(seed, "centers", 0): superclass
/// centers ~ N(0, sigma_super^2 I) in index order, then one center per leaf
/// in index order (parent center + N(0, sigma_sub^2 I), or N(0, sigma_super^2 I)
/// for standalone leaves). Samples come from derive_seed(seed, "samples", pool):
/// for each leaf in index order, `samples_per_subclass` draws of
/// center + N(0, sigma_noise^2 I). Pools share centers, so pool 0 (train) and
/// pool 1 (test) describe the same classes.
struct SynthSpec {
  std::size_t dim = 16;
  std::size_t samples_per_subclass = 500;
  double sigma_super = 10.0;
  double sigma_sub = 3.0;
  double sigma_noise = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t pool = 0;
  std::uint64_t first_id = 0;

  void validate() const;
};

std::vector<RawSample> generate_synthetic(const Hierarchy& h, const SynthSpec& spec);

/// Leaf centers in the same order generate_synthetic draws them (row per leaf).
std::vector<std::vector<double>> synthetic_centers(const Hierarchy& h, const SynthSpec& spec);

/// CSV with header `id,label,f0,...,f{d-1}`.
std::vector<RawSample> read_samples_csv(std::istream& in, const Hierarchy& h);
std::vector<RawSample> load_external(const std::filesystem::path& path, const Hierarchy& h);
void write_samples_csv(std::ostream& out, std::span<const RawSample> samples, const Hierarchy& h);

}  // namespace iirc
