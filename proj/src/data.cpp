#include "iirc/data.hpp"

#include <cstdio>
#include <cstdlib>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_set>

#include "iirc/error.hpp"
#include "iirc/random.hpp"

namespace iirc {

void SynthSpec::validate() const {
  if (dim < 2) throw Error(ErrorKind::InvalidSpec, "dim must be >= 2");
  if (samples_per_subclass < 1) throw Error(ErrorKind::InvalidSpec, "samples_per_subclass must be >= 1");
  if (!(sigma_super > sigma_sub && sigma_sub > sigma_noise && sigma_noise > 0.0)) {
    throw Error(ErrorKind::InvalidSpec, "scales must satisfy sigma_super > sigma_sub > sigma_noise > 0");
  }
}

std::vector<std::vector<double>> synthetic_centers(const Hierarchy& h, const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "centers", 0));
  auto draw = [&](const std::vector<double>* base, double scale) {
    std::vector<double> v(spec.dim);
    for (std::size_t i = 0; i < spec.dim; ++i) v[i] = (base ? (*base)[i] : 0.0) + scale * rng.normal();
    return v;
  };

  std::vector<std::vector<double>> super_centers;
  super_centers.reserve(h.superclass_count());
  for (std::size_t s = 0; s < h.superclass_count(); ++s) super_centers.push_back(draw(nullptr, spec.sigma_super));

  std::vector<std::vector<double>> leaf_centers;
  leaf_centers.reserve(h.leaf_count());
  for (ClassIndex c = h.superclass_count(); c < h.size(); ++c) {
    if (const auto p = h.parent(c)) {
      leaf_centers.push_back(draw(&super_centers[*p], spec.sigma_sub));
    } else {
      leaf_centers.push_back(draw(nullptr, spec.sigma_super));
    }
  }
  return leaf_centers;
}

std::vector<RawSample> generate_synthetic(const Hierarchy& h, const SynthSpec& spec) {
  const auto centers = synthetic_centers(h, spec);
  Rng rng(derive_seed(spec.seed, "samples", spec.pool));

  std::vector<RawSample> out;
  out.reserve(centers.size() * spec.samples_per_subclass);
  std::uint64_t next_id = spec.first_id;
  for (std::size_t leaf = 0; leaf < centers.size(); ++leaf) {
    for (std::size_t n = 0; n < spec.samples_per_subclass; ++n) {
      RawSample s;
      s.id = next_id++;
      s.subclass = h.superclass_count() + leaf;
      s.features.resize(spec.dim);
      for (std::size_t i = 0; i < spec.dim; ++i) s.features[i] = centers[leaf][i] + spec.sigma_noise * rng.normal();
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void fail(ErrorKind kind, std::size_t line, const std::string& what) {
  throw Error(kind, "line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<RawSample> read_samples_csv(std::istream& in, const Hierarchy& h) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    fail(ErrorKind::Parse, 1, "header must be id,label,f0,...");
  }
  const std::size_t dim = header.size() - 2;

  std::vector<RawSample> out;
  std::unordered_set<std::uint64_t> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != dim + 2) {
      fail(ErrorKind::DimensionMismatch, line_no,
           "expected " + std::to_string(dim) + " features, got " + std::to_string(fields.size() < 2 ? 0 : fields.size() - 2));
    }
    RawSample s;
    const auto id_field = fields[0];
    const auto [ptr, ec] = std::from_chars(id_field.data(), id_field.data() + id_field.size(), s.id);
    if (ec != std::errc{} || ptr != id_field.data() + id_field.size()) fail(ErrorKind::Parse, line_no, "bad id");

    const auto label = h.find(fields[1]);
    if (!label || h.is_superclass(*label)) {
      fail(ErrorKind::UnknownLabel, line_no, "label '" + std::string(fields[1]) + "' is not a leaf class");
    }
    s.subclass = *label;

    s.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      // strtod accepts everything %.17g prints; from_chars<double> is missing on older toolchains.
      const std::string field(fields[i + 2]);
      char* end = nullptr;
      s.features[i] = std::strtod(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size()) fail(ErrorKind::Parse, line_no, "bad feature value");
    }
    if (!ids.insert(s.id).second) {
      throw Error(ErrorKind::DuplicateId, "sample id " + std::to_string(s.id) + " repeated at line " + std::to_string(line_no));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RawSample> load_external(const std::filesystem::path& path, const Hierarchy& h) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_samples_csv(in, h);
}

void write_samples_csv(std::ostream& out, std::span<const RawSample> samples, const Hierarchy& h) {
  const std::size_t dim = samples.empty() ? 0 : samples.front().features.size();
  out << "id,label";
  for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
  out << '\n';
  char buf[32];
  for (const auto& s : samples) {
    out << s.id << ',' << h.name(s.subclass);
    for (double v : s.features) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace iirc
