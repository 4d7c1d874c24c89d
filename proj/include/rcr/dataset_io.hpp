#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rcr/core.hpp"
#include "rcr/pointcloud.hpp"

namespace rcr {

// ---------------------------------------------------------------------------
// Dataset binary format "PCS1": header (magic, version u32, sample_count u32,
// dims u32, class_count u32), then per sample: label u32, point_count u32,
// point_count * dims little-endian f32. Bit-exact round trip.
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kDatasetMagic[4] = {'P', 'C', 'S', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace detail

inline void write_dataset(const LabeledDataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("dataset: cannot open for writing: " + path);
  auto put_u32 = [&os](std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
  };
  os.write(detail::kDatasetMagic, 4);
  put_u32(detail::kDatasetVersion);
  put_u32(static_cast<std::uint32_t>(dataset.samples.size()));
  put_u32(static_cast<std::uint32_t>(dataset.dims()));
  put_u32(static_cast<std::uint32_t>(dataset.class_count));
  for (const auto& s : dataset.samples) {
    put_u32(static_cast<std::uint32_t>(s.label));
    put_u32(static_cast<std::uint32_t>(s.cloud.count()));
    os.write(reinterpret_cast<const char*>(s.cloud.pts.data()),
             static_cast<std::streamsize>(sizeof(float) * s.cloud.pts.size()));
  }
  os.flush();
  if (!os) throw std::runtime_error("dataset: write failed: " + path);

  if (!dataset.class_names.empty()) {
    std::ofstream names(path + ".labels", std::ios::trunc);
    for (const auto& n : dataset.class_names) names << n << "\n";
  }
}

inline LabeledDataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open: " + path);
  std::uint64_t offset = 0;
  auto get_bytes = [&](void* dst, size_t n, const std::string& what) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!is) throw FormatError("dataset: truncated " + what, offset);
    offset += n;
  };
  auto get_u32 = [&](const std::string& what) {
    std::uint32_t v;
    get_bytes(&v, 4, what);
    return v;
  };

  char magic[4];
  get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, detail::kDatasetMagic, 4) != 0)
    throw FormatError("dataset: bad magic in " + path, 0);
  const auto version = get_u32("version");
  if (version != detail::kDatasetVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version), 4);
  const auto sample_count = get_u32("sample count");
  const auto dims = get_u32("dims");
  const auto class_count = get_u32("class count");
  if (dims != 2 && dims != 3) throw FormatError("dataset: dims must be 2 or 3", 12);

  LabeledDataset dataset;
  dataset.class_count = static_cast<int>(class_count);
  dataset.samples.reserve(sample_count);
  for (std::uint32_t i = 0; i < sample_count; ++i) {
    const std::string which = "sample " + std::to_string(i);
    LabeledSample s;
    s.label = static_cast<int>(get_u32("label of " + which));
    const auto points = get_u32("point count of " + which);
    if (points == 0) throw FormatError("dataset: empty cloud in " + which, offset - 4);
    s.cloud.pts.resize(points, dims);
    get_bytes(s.cloud.pts.data(), sizeof(float) * points * dims, "points of " + which);
    dataset.samples.push_back(std::move(s));
  }
  dataset.validate();

  std::ifstream names(path + ".labels");
  if (names) {
    std::string line;
    while (std::getline(names, line)) dataset.class_names.push_back(line);
    if (static_cast<int>(dataset.class_names.size()) != dataset.class_count)
      dataset.class_names.clear();
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// MNIST IDX conversion: bright pixels become candidate 2D points; each cloud
// draws points_per_cloud of them with replacement and jitters by half a pixel.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be_u32(std::istream& is, std::uint64_t& offset,
                                 const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("idx: truncated " + what, offset);
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

inline LabeledDataset mnist_to_pointcloud(const std::string& images_path,
                                          const std::string& labels_path,
                                          int points_per_cloud, int threshold,
                                          Rng& rng) {
  detail::require(points_per_cloud >= 1, "mnist: points_per_cloud must be >= 1");
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("mnist: cannot open " + images_path);
  std::ifstream lbls(labels_path, std::ios::binary);
  if (!lbls) throw std::runtime_error("mnist: cannot open " + labels_path);

  std::uint64_t img_off = 0, lbl_off = 0;
  const auto img_magic = detail::read_be_u32(imgs, img_off, "image magic");
  if (img_magic != 0x00000803u)
    throw FormatError("idx: bad image magic in " + images_path, 0);
  const auto lbl_magic = detail::read_be_u32(lbls, lbl_off, "label magic");
  if (lbl_magic != 0x00000801u)
    throw FormatError("idx: bad label magic in " + labels_path, 0);

  const auto count = detail::read_be_u32(imgs, img_off, "image count");
  const auto rows = detail::read_be_u32(imgs, img_off, "rows");
  const auto cols = detail::read_be_u32(imgs, img_off, "cols");
  const auto label_count = detail::read_be_u32(lbls, lbl_off, "label count");
  if (count != label_count)
    throw FormatError("idx: image/label count mismatch", lbl_off - 4);

  LabeledDataset dataset;
  dataset.class_count = 10;
  dataset.samples.reserve(count);
  std::vector<unsigned char> pixels(static_cast<size_t>(rows) * cols);
  const double half_pitch_x = 1.0 / cols;  // pixel pitch is 2/cols in [-1, 1]
  const double half_pitch_y = 1.0 / rows;
  for (std::uint32_t i = 0; i < count; ++i) {
    imgs.read(reinterpret_cast<char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!imgs) throw FormatError("idx: truncated image " + std::to_string(i), img_off);
    img_off += pixels.size();
    char lbl;
    lbls.read(&lbl, 1);
    if (!lbls) throw FormatError("idx: truncated label " + std::to_string(i), lbl_off);
    lbl_off += 1;

    std::vector<std::pair<double, double>> candidates;
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        if (pixels[static_cast<size_t>(r) * cols + c] > threshold) {
          const double x = (c + 0.5) / cols * 2.0 - 1.0;
          const double y = 1.0 - (r + 0.5) / rows * 2.0;
          candidates.emplace_back(x, y);
        }
    if (candidates.empty())
      throw std::runtime_error("mnist: image " + std::to_string(i) +
                               " has no pixels above threshold");

    LabeledSample s;
    s.label = static_cast<int>(static_cast<unsigned char>(lbl));
    s.cloud.pts.resize(points_per_cloud, 2);
    for (int p = 0; p < points_per_cloud; ++p) {
      const auto& c = candidates[rng.uniform_index(candidates.size())];
      s.cloud.pts(p, 0) =
          static_cast<float>(c.first + rng.uniform(-half_pitch_x, half_pitch_x));
      s.cloud.pts(p, 1) =
          static_cast<float>(c.second + rng.uniform(-half_pitch_y, half_pitch_y));
    }
    dataset.samples.push_back(std::move(s));
  }
  dataset.class_names = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
  return dataset;
}

// ---------------------------------------------------------------------------
// Synthetic 3D benchmark: ten parametric shape families, anisotropic
// per-sample scale and a random rotation about the vertical axis, normalized
// to the unit sphere.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = {
      "sphere", "cube",    "cylinder",    "cone",  "torus",
      "plane",  "pyramid", "two_spheres", "helix", "cross"};
  return names;
}

/// One surface point of the given family, before any per-sample transform.
inline std::array<double, 3> sample_family_point(int family, Rng& rng) {
  switch (family) {
    case 0: {  // unit sphere
      double x, y, z, n2;
      do {
        x = rng.normal();
        y = rng.normal();
        z = rng.normal();
        n2 = x * x + y * y + z * z;
      } while (n2 < 1e-12);
      const double inv = 1.0 / std::sqrt(n2);
      return {x * inv, y * inv, z * inv};
    }
    case 1: {  // cube surface
      const int face = static_cast<int>(rng.uniform_index(6));
      const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
      const double s = (face % 2 == 0) ? 1.0 : -1.0;
      if (face / 2 == 0) return {s, u, v};
      if (face / 2 == 1) return {u, s, v};
      return {u, v, s};
    }
    case 2: {  // cylinder: lateral wall plus caps, weighted by area
      const double radius = 0.6, height = 2.0;
      const double lateral = 2.0 * M_PI * radius * height;
      const double caps = 2.0 * M_PI * radius * radius;
      if (rng.uniform() < lateral / (lateral + caps)) {
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        return {radius * std::cos(theta), radius * std::sin(theta),
                rng.uniform(-1.0, 1.0)};
      }
      const double r = radius * std::sqrt(rng.uniform());
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      const double z = rng.bernoulli(0.5) ? 1.0 : -1.0;
      return {r * std::cos(theta), r * std::sin(theta), z};
    }
    case 3: {  // cone: lateral surface, apex up
      const double base_r = 0.8;
      const double u = std::sqrt(rng.uniform());  // area-uniform along slant
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      const double r = base_r * u;
      return {r * std::cos(theta), r * std::sin(theta), 1.0 - 2.0 * u};
    }
    case 4: {  // torus
      const double ring = 0.75, tube = 0.25;
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      const double phi = rng.uniform(0.0, 2.0 * M_PI);
      const double w = ring + tube * std::cos(phi);
      return {w * std::cos(theta), w * std::sin(theta), tube * std::sin(phi)};
    }
    case 5:  // flat square
      return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0};
    case 6: {  // pyramid: four triangular faces plus square base
      const double apex_z = 0.8, base_z = -0.8;
      // Base corners in cyclic order.
      static const double cx[4] = {-1, 1, 1, -1};
      static const double cy[4] = {-1, -1, 1, 1};
      // Face areas: base 4, each side sqrt(2 + apex_h^2) with apex_h = 1.6.
      const double side_area = std::sqrt(1.0 + 1.6 * 1.6 / 2.0) * 2.0;
      const double total = 4.0 + 4.0 * side_area;
      double pick = rng.uniform(0.0, total);
      if (pick < 4.0)
        return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), base_z};
      const int face = std::min(3, static_cast<int>((pick - 4.0) / side_area));
      double a = rng.uniform(), b = rng.uniform();
      if (a + b > 1.0) {
        a = 1.0 - a;
        b = 1.0 - b;
      }
      const int nxt = (face + 1) % 4;
      return {cx[face] + a * (cx[nxt] - cx[face]) + b * (0.0 - cx[face]),
              cy[face] + a * (cy[nxt] - cy[face]) + b * (0.0 - cy[face]),
              base_z + b * (apex_z - base_z)};
    }
    case 7: {  // two spheres along x
      auto p = sample_family_point(0, rng);
      const double cx = rng.bernoulli(0.5) ? 0.6 : -0.6;
      return {p[0] * 0.5 + cx, p[1] * 0.5, p[2] * 0.5};
    }
    case 8: {  // helix with a thin tube
      const double t = rng.uniform(0.0, 4.0 * M_PI);
      const double jx = rng.normal(0.0, 0.05), jy = rng.normal(0.0, 0.05),
                   jz = rng.normal(0.0, 0.05);
      return {0.7 * std::cos(t) + jx, 0.7 * std::sin(t) + jy,
              t / (4.0 * M_PI) * 2.0 - 1.0 + jz};
    }
    case 9: {  // three orthogonal rods
      const int axis = static_cast<int>(rng.uniform_index(3));
      const double along = rng.uniform(-1.0, 1.0);
      const double u = rng.uniform(-0.15, 0.15), v = rng.uniform(-0.15, 0.15);
      if (axis == 0) return {along, u, v};
      if (axis == 1) return {u, along, v};
      return {u, v, along};
    }
    default:
      throw std::invalid_argument("synthetic: unknown family");
  }
}

inline LabeledDataset gen_synthetic(int classes, int samples_per_class,
                                    int points_per_cloud, Rng& rng) {
  detail::require(classes >= 1 && classes <= 10, "synthetic: classes must be in [1, 10]");
  detail::require(samples_per_class >= 1, "synthetic: samples_per_class must be >= 1");
  detail::require(points_per_cloud >= 1, "synthetic: points_per_cloud must be >= 1");
  LabeledDataset dataset;
  dataset.class_count = classes;
  dataset.class_names.assign(synthetic_class_names().begin(),
                             synthetic_class_names().begin() + classes);
  dataset.samples.reserve(static_cast<size_t>(classes) * samples_per_class);
  for (int cls = 0; cls < classes; ++cls) {
    for (int s = 0; s < samples_per_class; ++s) {
      const double sx = rng.uniform(0.8, 1.2);
      const double sy = rng.uniform(0.8, 1.2);
      const double sz = rng.uniform(0.8, 1.2);
      const double angle = rng.uniform(0.0, 2.0 * M_PI);
      const double c = std::cos(angle), sn = std::sin(angle);
      PointCloud cloud;
      cloud.pts.resize(points_per_cloud, 3);
      for (int p = 0; p < points_per_cloud; ++p) {
        auto pt = sample_family_point(cls, rng);
        const double x = pt[0] * sx, y = pt[1] * sy, z = pt[2] * sz;
        cloud.pts(p, 0) = static_cast<float>(c * x - sn * y);
        cloud.pts(p, 1) = static_cast<float>(sn * x + c * y);
        cloud.pts(p, 2) = static_cast<float>(z);
      }
      dataset.samples.push_back({normalize_unit_sphere(cloud), cls});
    }
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// Results export. Accuracy rows go to a matrix CSV; aggregates (including
// real wall time) go to a summary CSV. The matrix file is part of the
// reproducibility contract, so its wall_time column is always zero.
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  std::string dataset_name;
  std::string scenario;  // "task_il" | "class_il"
  int tasks_trained = 0;
  int task_evaluated = 0;
  double accuracy = 0.0;
  double wall_time_seconds = 0.0;
};

struct SummaryRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  std::string dataset_name;
  std::string scenario;
  int tasks_trained = 0;
  double micro_average = 0.0;
  double macro_average = 0.0;
  double wall_time_seconds = 0.0;
};

namespace detail {
inline std::string format_fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace detail

inline void write_results(const std::vector<ResultRow>& rows,
                          const std::string& matrix_path,
                          const std::vector<SummaryRow>& summaries,
                          const std::string& summary_path) {
  {
    std::ofstream os(matrix_path, std::ios::trunc);
    if (!os) throw std::runtime_error("results: cannot open " + matrix_path);
    os << "run_id,seed,method,dataset_name,scenario,tasks_trained,"
          "task_evaluated,accuracy,wall_time_seconds\n";
    for (const auto& r : rows) {
      detail::require(r.accuracy >= 0.0 && r.accuracy <= 1.0,
                      "results: accuracy out of [0, 1]");
      os << r.run_id << ',' << r.seed << ',' << r.method << ','
         << r.dataset_name << ',' << r.scenario << ',' << r.tasks_trained
         << ',' << r.task_evaluated << ',' << detail::format_fixed6(r.accuracy)
         << ',' << detail::format_fixed6(0.0) << "\n";
    }
    os.flush();
    if (!os) throw std::runtime_error("results: write failed: " + matrix_path);
  }
  {
    std::ofstream os(summary_path, std::ios::trunc);
    if (!os) throw std::runtime_error("results: cannot open " + summary_path);
    os << "run_id,seed,method,dataset_name,scenario,tasks_trained,"
          "micro_average,macro_average,wall_time_seconds\n";
    for (const auto& r : summaries)
      os << r.run_id << ',' << r.seed << ',' << r.method << ','
         << r.dataset_name << ',' << r.scenario << ',' << r.tasks_trained
         << ',' << detail::format_fixed6(r.micro_average) << ','
         << detail::format_fixed6(r.macro_average) << ','
         << detail::format_fixed6(r.wall_time_seconds) << "\n";
    os.flush();
    if (!os) throw std::runtime_error("results: write failed: " + summary_path);
  }
}

}  // namespace rcr
