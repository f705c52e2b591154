#pragma once

// Synthetic generators (icosphere shapes, correspondence poses, grid-patch
// superpixels), raw PGM images and the dataset manifest loader.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "affconv/config.hpp"
#include "affconv/context.hpp"
#include "affconv/io.hpp"
#include "affconv/mesh.hpp"
#include "affconv/model.hpp"
#include "affconv/pooling.hpp"
#include "affconv/training.hpp"

namespace affconv::data {

// ---------------------------------------------------------------- icospheres

/// Unit icosahedron, faces counter-clockwise seen from outside.
inline Mesh icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const double v[12][3] = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  Tensor<double> pos(12, 3);
  const double norm = std::sqrt(1.0 + t * t);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t c = 0; c < 3; ++c) pos(i, c) = v[i][c] / norm;
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  return Mesh(std::move(pos), std::move(faces));
}

/// One 4-to-1 face split. Old vertices keep their ids; midpoints are appended
/// in order of first appearance and projected to the unit sphere.
/// `parents[k]` holds the endpoints of midpoint num_vertices() + k.
inline Mesh subdivide(const Mesh& m, std::vector<std::array<VertexId, 2>>* parents = nullptr) {
  const std::size_t n = m.num_vertices();
  std::map<std::pair<VertexId, VertexId>, VertexId> mid;
  std::vector<std::array<VertexId, 2>> par;
  auto midpoint = [&](VertexId a, VertexId b) {
    const auto key = std::minmax(a, b);
    auto it = mid.find(key);
    if (it != mid.end()) return it->second;
    const VertexId id = n + par.size();
    par.push_back({key.first, key.second});
    mid.emplace(key, id);
    return id;
  };
  std::vector<Face> faces;
  for (const Face& f : m.faces()) {
    const VertexId ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
    faces.push_back({f[0], ab, ca});
    faces.push_back({f[1], bc, ab});
    faces.push_back({f[2], ca, bc});
    faces.push_back({ab, bc, ca});
  }
  Tensor<double> pos(n + par.size(), 3);
  const auto& old = m.positions();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) pos(i, c) = old(i, c);
  for (std::size_t k = 0; k < par.size(); ++k) {
    double len = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      pos(n + k, c) = 0.5 * (old(par[k][0], c) + old(par[k][1], c));
      len += pos(n + k, c) * pos(n + k, c);
    }
    len = std::sqrt(len);
    for (std::size_t c = 0; c < 3; ++c) pos(n + k, c) /= len;
  }
  if (parents != nullptr) *parents = std::move(par);
  return Mesh(std::move(pos), std::move(faces));
}

inline Mesh icosphere(std::size_t subdivisions) {
  Mesh m = icosahedron();
  for (std::size_t s = 0; s < subdivisions; ++s) m = subdivide(m);
  return m;
}

/// Meshes and pooling steps of a subdivision hierarchy, finest first.
struct MeshLevels {
  std::vector<Mesh> meshes;          // meshes[0] finest
  std::vector<PoolingLevel> pools;   // pools[k]: meshes[k] -> meshes[k+1]
};

/// Down-sampling keeps the coarse vertices (a prefix of the fine ids); up-sampling
/// copies them and puts each midpoint halfway between its two parents.
inline MeshLevels icosphere_levels(std::size_t subdivisions, std::size_t pool_levels) {
  require(pool_levels <= subdivisions, ErrorCode::InvalidArgument,
          "icosphere: pool_levels must not exceed subdivisions");
  std::vector<Mesh> chain{icosahedron()};
  std::vector<std::vector<std::array<VertexId, 2>>> parents;
  for (std::size_t s = 0; s < subdivisions; ++s) {
    parents.emplace_back();
    chain.push_back(subdivide(chain.back(), &parents.back()));
  }
  MeshLevels out;
  for (std::size_t k = 0; k <= pool_levels; ++k) out.meshes.push_back(chain[subdivisions - k]);
  for (std::size_t k = 0; k < pool_levels; ++k) {
    const Mesh& fine = chain[subdivisions - k];
    const Mesh& coarse = chain[subdivisions - k - 1];
    const auto& par = parents[subdivisions - k - 1];
    const std::size_t nc = coarse.num_vertices(), nf = fine.num_vertices();
    std::vector<Triplet> down, up;
    for (std::size_t i = 0; i < nc; ++i) {
      down.push_back({i, i, 1.0});
      up.push_back({i, i, 1.0});
    }
    for (std::size_t j = 0; j < par.size(); ++j) {
      up.push_back({nc + j, par[j][0], 0.5});
      up.push_back({nc + j, par[j][1], 0.5});
    }
    PoolingLevel level{SparseMatrix(nc, nf, std::move(down)), SparseMatrix(nf, nc, std::move(up)), coarse.graph()};
    level.validate();
    out.pools.push_back(std::move(level));
  }
  return out;
}

/// Smooth radial field: r(p) = 1 + sum_k a_k exp(-|p - c_k|^2 / (2 w^2)) with
/// centres on the unit sphere and a_k uniform in [-amplitude, amplitude].
struct RadialField {
  std::vector<std::array<double, 3>> centers;
  std::vector<double> amplitudes;
  double width = 0.6;

  static RadialField random(std::size_t bumps, double amplitude, std::mt19937_64& rng) {
    RadialField f;
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t k = 0; k < bumps; ++k) {
      std::array<double, 3> c{n01(rng), n01(rng), n01(rng)};
      const double len = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
      for (double& v : c) v /= len > 0 ? len : 1.0;
      f.centers.push_back(c);
      f.amplitudes.push_back(amplitude * u(rng));
    }
    return f;
  }

  double operator()(const double* p) const {
    double r = 1.0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) d2 += (p[c] - centers[k][c]) * (p[c] - centers[k][c]);
      r += amplitudes[k] * std::exp(-d2 / (2.0 * width * width));
    }
    return r;
  }
};

/// Scales every vertex of `base` along its position vector by the field.
inline Mesh deform(const Mesh& base, const RadialField& field) {
  Tensor<double> pos = base.positions();
  for (std::size_t i = 0; i < pos.rows(); ++i) {
    const double p[3] = {pos(i, 0), pos(i, 1), pos(i, 2)};
    const double r = field(p);
    for (std::size_t c = 0; c < 3; ++c) pos(i, c) = p[c] * r;
  }
  return base.with_positions(std::move(pos));
}

struct IcosphereSpec {
  std::size_t subdivisions = 2;
  std::size_t samples = 100;
  std::size_t bumps = 4;     // deform seed count
  double amplitude = 0.2;    // noise amplitude of the radial field
  std::uint64_t seed = 0;
};

inline std::vector<Mesh> icosphere_samples(const IcosphereSpec& spec) {
  require(spec.subdivisions <= 4, ErrorCode::InvalidArgument, "icosphere: subdivisions must be <= 4");
  const Mesh base = icosphere(spec.subdivisions);
  std::vector<Mesh> out;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    std::mt19937_64 rng(ad::detail::splitmix64(spec.seed ^ ad::detail::splitmix64(i + 1)));
    out.push_back(deform(base, RadialField::random(spec.bumps, spec.amplitude, rng)));
  }
  return out;
}

struct CorrespondenceSpec {
  std::size_t poses = 20;
  std::size_t bumps = 4;
  double amplitude = 0.2;   // radial field amplitude
  double stretch = 0.1;     // per-axis scale jitter
  double jitter = 0.01;     // per-vertex noise
  std::uint64_t seed = 0;
};

/// Poses of one base mesh: smooth radial deformation, anisotropic scaling and
/// per-vertex noise. Vertex i of every pose corresponds to vertex i of the base.
inline std::vector<Mesh> correspondence_poses(const Mesh& base, const CorrespondenceSpec& spec) {
  std::vector<Mesh> out;
  for (std::size_t i = 0; i < spec.poses; ++i) {
    std::mt19937_64 rng(ad::detail::splitmix64(spec.seed ^ ad::detail::splitmix64(1000003 + i)));
    Mesh m = deform(base, RadialField::random(spec.bumps, spec.amplitude, rng));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double scale[3] = {1.0 + spec.stretch * u(rng), 1.0 + spec.stretch * u(rng), 1.0 + spec.stretch * u(rng)};
    Tensor<double> pos = m.positions();
    for (std::size_t v = 0; v < pos.rows(); ++v)
      for (std::size_t c = 0; c < 3; ++c) pos(v, c) = pos(v, c) * scale[c] + spec.jitter * u(rng);
    out.push_back(base.with_positions(std::move(pos)));
  }
  return out;
}

// ---------------------------------------------------------------- superpixels

/// Raw 8-bit grayscale PGM (P5, maxval 255). Values are in [0, 1].
inline std::string to_pgm(const Tensor<double>& image) {
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (double v : image.values()) out.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline Tensor<double> parse_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    require(pos > start, ErrorCode::ParseError, "pgm: truncated header");
    return bytes.substr(start, pos - start);
  };
  require(token() == "P5", ErrorCode::ParseError, "pgm: only binary P5 images are supported");
  const std::size_t w = parse_index(token(), "pgm width");
  const std::size_t h = parse_index(token(), "pgm height");
  const std::size_t maxval = parse_index(token(), "pgm maxval");
  require(maxval >= 1 && maxval <= 255, ErrorCode::ParseError, "pgm: maxval must be in [1, 255]");
  ++pos;  // single whitespace before the raster
  require(bytes.size() >= pos + w * h, ErrorCode::ParseError, "pgm: raster shorter than " + std::to_string(w * h));
  Tensor<double> img(h, w);
  for (std::size_t i = 0; i < w * h; ++i)
    img.values()[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
  return img;
}

/// Seven-segment digit drawn with jittered offset, stroke width and intensity,
/// plus uniform pixel noise.
inline Tensor<double> digit_image(std::size_t label, std::size_t size, double noise, std::mt19937_64& rng) {
  require(label < 10, ErrorCode::LabelOutOfRange, "digit label must be < 10");
  require(size >= 8, ErrorCode::InvalidArgument, "digit images need at least 8 pixels");
  // segments a b c d e f g
  static const char* kSegments[10] = {"abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double left = s * (0.25 + 0.1 * (u(rng) - 0.5)), right = s * (0.75 + 0.1 * (u(rng) - 0.5));
  const double top = s * (0.15 + 0.1 * (u(rng) - 0.5)), bottom = s * (0.85 + 0.1 * (u(rng) - 0.5));
  const double middle = 0.5 * (top + bottom);
  const double half = s * (0.05 + 0.03 * u(rng));
  const double ink = 0.7 + 0.3 * u(rng);
  Tensor<double> img(size, size);
  auto stroke = [&](double x0, double y0, double x1, double y1) {
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c) {
        const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
        const double dx = x1 - x0, dy = y1 - y0;
        double t = ((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy);
        t = std::clamp(t, 0.0, 1.0);
        const double ex = x - (x0 + t * dx), ey = y - (y0 + t * dy);
        if (ex * ex + ey * ey <= half * half) img(r, c) = ink;
      }
  };
  for (const char* p = kSegments[label]; *p != '\0'; ++p) {
    switch (*p) {
      case 'a': stroke(left, top, right, top); break;
      case 'b': stroke(right, top, right, middle); break;
      case 'c': stroke(right, middle, right, bottom); break;
      case 'd': stroke(left, bottom, right, bottom); break;
      case 'e': stroke(left, middle, left, bottom); break;
      case 'f': stroke(left, top, left, middle); break;
      case 'g': stroke(left, middle, right, middle); break;
    }
  }
  if (noise > 0)
    for (double& v : img.values()) v = std::clamp(v + noise * (u(rng) - 0.5), 0.0, 1.0);
  return img;
}

struct SuperpixelGraph {
  Graph graph;              // kNN graph over patch centroids, positions (x, y, 0) in [0, 1]
  Tensor<double> features;  // patch mean intensity, one column
};

/// grid x grid patches; each becomes a vertex at its intensity-weighted centroid
/// (geometric centre for blank patches) joined to its k nearest centroids.
inline SuperpixelGraph superpixel_graph(const Tensor<double>& image, std::size_t grid, std::size_t k) {
  require(grid >= 1 && grid * grid <= 100, ErrorCode::InvalidArgument, "superpixel grid must give 1..100 vertices");
  require(image.rows() >= grid && image.cols() >= grid, ErrorCode::InvalidArgument, "image smaller than patch grid");
  const std::size_t n = grid * grid;
  Tensor<double> pos(n, 3), feat(n, 1);
  for (std::size_t gr = 0; gr < grid; ++gr)
    for (std::size_t gc = 0; gc < grid; ++gc) {
      const std::size_t r0 = gr * image.rows() / grid, r1 = (gr + 1) * image.rows() / grid;
      const std::size_t c0 = gc * image.cols() / grid, c1 = (gc + 1) * image.cols() / grid;
      double mass = 0, sx = 0, sy = 0, sum = 0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
          const double v = image(r, c);
          sum += v;
          mass += v;
          sx += v * (static_cast<double>(c) + 0.5);
          sy += v * (static_cast<double>(r) + 0.5);
        }
      const std::size_t id = gr * grid + gc;
      const double cx = mass > 1e-12 ? sx / mass : 0.5 * static_cast<double>(c0 + c1);
      const double cy = mass > 1e-12 ? sy / mass : 0.5 * static_cast<double>(r0 + r1);
      pos(id, 0) = cx / static_cast<double>(image.cols());
      pos(id, 1) = cy / static_cast<double>(image.rows());
      feat(id, 0) = sum / static_cast<double>((r1 - r0) * (c1 - c0));
    }
  const std::size_t kk = std::min(k, n - 1);
  std::vector<Edge> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = pos(i, 0) - pos(j, 0), dy = pos(i, 1) - pos(j, 1);
      d.push_back({dx * dx + dy * dy, j});
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
    for (std::size_t t = 0; t < kk; ++t) pairs.push_back({i, d[t].second});
  }
  return {Graph::undirected(n, pairs, std::move(pos)), std::move(feat)};
}

struct SuperpixelSpec {
  std::size_t samples = 100;
  std::size_t image_size = 28;
  std::size_t grid = 5;
  std::size_t k = 6;
  std::size_t classes = 10;
  double noise = 0.2;
  std::uint64_t seed = 0;
};

struct SuperpixelSample {
  Tensor<double> image;
  SuperpixelGraph graph;
  std::size_t label = 0;
};

inline std::vector<SuperpixelSample> superpixel_samples(const SuperpixelSpec& spec) {
  require(spec.classes >= 1 && spec.classes <= 10, ErrorCode::InvalidArgument, "superpixel classes must be 1..10");
  std::vector<SuperpixelSample> out;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    std::mt19937_64 rng(ad::detail::splitmix64(spec.seed ^ ad::detail::splitmix64(2000003 + i)));
    const std::size_t label = i % spec.classes;
    auto img = digit_image(label, spec.image_size, spec.noise, rng);
    auto g = superpixel_graph(img, spec.grid, spec.k);
    out.push_back({std::move(img), std::move(g), label});
  }
  return out;
}

// ---------------------------------------------------------------- hierarchies

/// Hierarchy whose coarse levels are meshes too, so spirals exist at every level.
/// Coarse positions are pooled from the fine positions.
inline Hierarchy make_mesh_hierarchy(const Mesh& fine, const std::vector<Mesh>& coarse,
                                     std::vector<PoolingLevel> pools, const ContextOptions& opts = {}) {
  require(coarse.size() == pools.size(), ErrorCode::ShapeMismatch, "one coarse mesh per pooling level");
  Hierarchy h;
  h.levels.push_back(make_context(fine, opts));
  Tensor<double> pos = fine.positions();
  for (std::size_t k = 0; k < pools.size(); ++k) {
    require(pools[k].fine_size() == pos.rows() && pools[k].coarse_size() == coarse[k].num_vertices(),
            ErrorCode::ShapeMismatch, "pooling level " + std::to_string(k) + " does not match the meshes");
    pos = pools[k].down.multiply(pos);
    h.levels.push_back(make_context(coarse[k].with_positions(pos), opts));
  }
  h.pools = std::move(pools);
  return h;
}

// ---------------------------------------------------------------- manifests
//
//   format_version = 1
//   task = reconstruction | correspondence | classification
//   template = template.off        mesh tasks: shared connectivity
//   pooling = pooling              optional pooling directory
//   fixed_topology = true
//   classes = 10                   classification
//   normalization = norm.ckpt      optional, tensors norm.mean / norm.std
//   samples:
//     train sample_0000.off                       reconstruction
//     train pose_0000.off pose_0000.labels        correspondence
//     train graph_0000.txt graph_0000.csv 7       classification (edges, x,y,z,feature.., label)
//   end

struct ManifestEntry {
  std::string split;
  std::vector<std::string> files;
  std::size_t label = 0;
};

struct Manifest {
  train::Task task = train::Task::Reconstruction;
  std::string dir;
  std::string template_mesh;
  std::string pooling;
  std::string normalization;
  bool fixed_topology = false;
  std::size_t classes = 0;
  std::vector<ManifestEntry> samples;

  static Manifest load(const std::string& path) {
    const auto doc = ConfigDoc::load(path);
    Manifest m;
    m.dir = doc.dir();
    m.task = train::parse_task(doc.require_key("task"));
    m.template_mesh = doc.path("template");
    m.pooling = doc.path("pooling");
    m.normalization = doc.path("normalization");
    m.fixed_topology = doc.get_bool("fixed_topology", false);
    m.classes = doc.get_size("classes", 0);
    std::set<std::string> seen;
    for (const auto& line : doc.list("samples")) {
      const auto t = ConfigDoc::tokens(line);
      ManifestEntry e;
      require(!t.empty() && (t[0] == "train" || t[0] == "test"), ErrorCode::ParseError,
              path + ": sample line must start with train or test: '" + line + "'");
      e.split = t[0];
      const std::size_t want = m.task == train::Task::Reconstruction ? 2 : m.task == train::Task::Correspondence ? 3 : 4;
      require(t.size() == want, ErrorCode::ParseError, path + ": sample line '" + line + "' needs " +
                                                           std::to_string(want) + " fields");
      for (std::size_t i = 1; i < t.size(); ++i) {
        if (m.task == train::Task::Classification && i == 3) {
          e.label = parse_index(t[i], path + ": label");
        } else {
          e.files.push_back(doc.resolve(t[i]));
          require(std::filesystem::exists(e.files.back()), ErrorCode::IoError, "missing sample file " + e.files.back());
        }
      }
      require(seen.insert(e.files[0]).second, ErrorCode::InvalidArgument,
              path + ": " + e.files[0] + " is listed more than once (splits must be disjoint)");
      m.samples.push_back(std::move(e));
    }
    require(!m.samples.empty(), ErrorCode::InvalidArgument, path + ": no samples listed");
    if (m.task != train::Task::Classification)
      require(!m.template_mesh.empty(), ErrorCode::InvalidArgument, path + ": mesh tasks need a template mesh");
    for (const auto& unused : doc.unused_keys())
      fail(ErrorCode::ParseError, path + ": unknown key '" + unused + "'");
    return m;
  }
};

struct LoadOptions {
  ContextOptions context;
  std::size_t pool_levels = 0;  // graclus levels for graphs without a pooling directory
};

inline std::vector<Mesh> load_coarse_meshes(const std::string& pooling, std::size_t count) {
  std::vector<Mesh> out;
  for (std::size_t k = 0; k < count; ++k) {
    const auto file = pooling_file(pooling, k, "mesh.off");
    if (!std::filesystem::exists(file)) return {};
    out.push_back(load_mesh(file));
  }
  return out;
}

/// Builds the hierarchy of one mesh with the manifest's pooling (if any).
inline Hierarchy mesh_hierarchy(const Mesh& mesh, const Manifest& m, const LoadOptions& opts) {
  if (m.pooling.empty()) {
    if (opts.pool_levels == 0) return make_hierarchy(make_context(mesh, opts.context), {}, opts.context);
    return make_hierarchy(make_context(mesh, opts.context), graclus_coarsen(mesh.graph(), opts.pool_levels),
                          opts.context);
  }
  auto pools = load_pooling(m.pooling, 0, mesh.positions());
  const auto coarse = load_coarse_meshes(m.pooling, pools.size());
  if (!coarse.empty()) return make_mesh_hierarchy(mesh, coarse, std::move(pools), opts.context);
  return make_hierarchy(make_context(mesh, opts.context), std::move(pools), opts.context);
}

inline std::vector<std::size_t> parse_labels(const std::string& text, const std::string& source) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    const auto line = ConfigDoc::trim(text.substr(start, nl - start));
    if (!line.empty()) out.push_back(parse_index(line, source));
    start = nl + 1;
  }
  return out;
}

inline std::string to_labels(const std::vector<std::size_t>& labels) {
  std::string out;
  for (auto l : labels) out += std::to_string(l) + "\n";
  return out;
}

inline train::Dataset load_dataset(const Manifest& m, const LoadOptions& opts = {}) {
  using train::Task;
  train::Dataset d;
  d.task = m.task;
  auto add = [&](const ManifestEntry& e, train::Sample s) {
    (e.split == "train" ? d.train : d.test).push_back(std::move(s));
  };
  if (m.task == Task::Reconstruction) {
    const Mesh tmpl = load_mesh(m.template_mesh);
    d.hierarchies.push_back(mesh_hierarchy(tmpl, m, opts));
    for (const auto& e : m.samples) {
      const Mesh s = load_mesh(e.files[0]);
      require(s.num_vertices() == tmpl.num_vertices() && s.faces() == tmpl.faces(), ErrorCode::InvalidArgument,
              e.files[0] + ": connectivity differs from the template");
      add(e, train::Sample{s.positions(), s.positions(), {}, 0});
    }
  } else if (m.task == Task::Correspondence) {
    const Mesh tmpl = load_mesh(m.template_mesh);
    d.num_classes = tmpl.num_vertices();
    for (const auto& e : m.samples) {
      const Mesh s = load_mesh(e.files[0]);
      require(!m.fixed_topology || s.faces() == tmpl.faces(), ErrorCode::InvalidArgument,
              e.files[0] + ": connectivity differs from the template");
      auto labels = parse_labels(read_text_file(e.files[1]), e.files[1]);
      require(labels.size() == s.num_vertices(), ErrorCode::ShapeMismatch,
              e.files[1] + ": one label per vertex expected");
      for (auto l : labels)
        require(l < d.num_classes, ErrorCode::LabelOutOfRange, e.files[1] + ": label outside the template");
      d.hierarchies.push_back(mesh_hierarchy(s, m, opts));
      add(e, train::Sample{s.positions(), {}, std::move(labels), d.hierarchies.size() - 1});
    }
  } else {
    std::size_t max_label = 0;
    for (const auto& e : m.samples) {
      Graph g = parse_edge_list(read_text_file(e.files[0]));
      const auto table = parse_csv(read_text_file(e.files[1]));
      require(table.values.rows() == g.num_vertices() && table.values.cols() >= 4, ErrorCode::ShapeMismatch,
              e.files[1] + ": expected x,y,z and at least one feature column per vertex");
      Tensor<double> pos(g.num_vertices(), 3), feat(g.num_vertices(), table.values.cols() - 3);
      for (std::size_t i = 0; i < g.num_vertices(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) pos(i, c) = table.values(i, c);
        for (std::size_t c = 3; c < table.values.cols(); ++c) feat(i, c - 3) = table.values(i, c);
      }
      g = g.with_positions(std::move(pos));
      d.hierarchies.push_back(
          make_hierarchy(make_context(g, opts.context), graclus_coarsen(g, opts.pool_levels), opts.context));
      max_label = std::max(max_label, e.label);
      add(e, train::Sample{std::move(feat), {}, {e.label}, d.hierarchies.size() - 1});
    }
    d.num_classes = m.classes > 0 ? m.classes : max_label + 1;
    require(max_label < d.num_classes, ErrorCode::LabelOutOfRange, "class label outside 'classes'");
  }
  const auto& any = d.train.empty() ? d.test : d.train;
  d.in_channels = any.front().x.cols();
  return d;
}

// ---------------------------------------------------------------- generation

/// Writes a generated dataset described by a generator spec into `out_dir` and
/// returns the manifest path. Generator specs:
///
///   format_version = 1
///   generator = icosphere | correspondence | superpixel
///   seed = 0
///   test_fraction = 0.2
///   icosphere:       subdivisions samples bumps amplitude pool_levels
///   correspondence:  subdivisions (or base = mesh.off) poses bumps amplitude stretch jitter
///   superpixel:      samples image_size grid k classes noise
inline std::string generate(const ConfigDoc& spec, const std::string& out_dir, std::string* resolved = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string gen = spec.require_key("generator");
  const std::uint64_t seed = spec.get_u64("seed", 0);
  const double test_fraction = spec.get_double("test_fraction", 0.2);
  require(test_fraction >= 0.0 && test_fraction < 1.0, ErrorCode::InvalidArgument, "test_fraction must be in [0, 1)");
  ConfigWriter res;
  res.add("generator", gen).add("seed", seed, 0).add("test_fraction", test_fraction);
  ConfigWriter manifest;
  std::vector<std::string> lines;
  auto split_of = [&](std::size_t i, std::size_t n) {
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    return i + n_test >= n ? "test" : "train";
  };
  auto name = [](const std::string& stem, std::size_t i, const std::string& ext) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return stem + "_" + buf + ext;
  };
  auto path = [&](const std::string& f) { return (fs::path(out_dir) / f).string(); };

  if (gen == "icosphere") {
    IcosphereSpec s;
    s.subdivisions = spec.get_size("subdivisions", s.subdivisions);
    s.samples = spec.get_size("samples", s.samples);
    s.bumps = spec.get_size("bumps", s.bumps);
    s.amplitude = spec.get_double("amplitude", s.amplitude);
    s.seed = seed;
    const std::size_t pool_levels = spec.get_size("pool_levels", std::min<std::size_t>(2, s.subdivisions));
    res.add("subdivisions", s.subdivisions).add("samples", s.samples).add("bumps", s.bumps);
    res.add("amplitude", s.amplitude).add("pool_levels", pool_levels);
    const auto samples = icosphere_samples(s);
    const auto levels = icosphere_levels(s.subdivisions, pool_levels);
    write_text_file(path("template.off"), to_off(levels.meshes[0]));
    if (pool_levels > 0) {
      save_pooling(path("pooling"), levels.pools);
      for (std::size_t k = 0; k < pool_levels; ++k)
        write_text_file(pooling_file(path("pooling"), k, "mesh.off"), to_off(levels.meshes[k + 1]));
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      write_text_file(path(name("sample", i, ".off")), to_off(samples[i]));
      lines.push_back(std::string(split_of(i, samples.size())) + " " + name("sample", i, ".off"));
    }
    manifest.add("task", "reconstruction").add("template", "template.off");
    if (pool_levels > 0) manifest.add("pooling", "pooling");
    manifest.add("fixed_topology", true);
  } else if (gen == "correspondence") {
    CorrespondenceSpec s;
    s.poses = spec.get_size("poses", s.poses);
    s.bumps = spec.get_size("bumps", s.bumps);
    s.amplitude = spec.get_double("amplitude", s.amplitude);
    s.stretch = spec.get_double("stretch", s.stretch);
    s.jitter = spec.get_double("jitter", s.jitter);
    s.seed = seed;
    Mesh base;
    if (spec.has("base")) {
      base = load_mesh(spec.path("base"));
      res.add("base", spec.path("base"));
    } else {
      const std::size_t sub = spec.get_size("subdivisions", 2);
      require(sub <= 4, ErrorCode::InvalidArgument, "correspondence: subdivisions must be <= 4");
      base = icosphere(sub);
      res.add("subdivisions", sub);
    }
    res.add("poses", s.poses).add("bumps", s.bumps).add("amplitude", s.amplitude);
    res.add("stretch", s.stretch).add("jitter", s.jitter);
    write_text_file(path("template.off"), to_off(base));
    std::vector<std::size_t> ids(base.num_vertices());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto poses = correspondence_poses(base, s);
    for (std::size_t i = 0; i < poses.size(); ++i) {
      write_text_file(path(name("pose", i, ".off")), to_off(poses[i]));
      write_text_file(path(name("pose", i, ".labels")), to_labels(ids));
      lines.push_back(std::string(split_of(i, poses.size())) + " " + name("pose", i, ".off") + " " +
                      name("pose", i, ".labels"));
    }
    manifest.add("task", "correspondence").add("template", "template.off").add("fixed_topology", true);
  } else if (gen == "superpixel") {
    SuperpixelSpec s;
    s.samples = spec.get_size("samples", s.samples);
    s.image_size = spec.get_size("image_size", s.image_size);
    s.grid = spec.get_size("grid", s.grid);
    s.k = spec.get_size("k", s.k);
    s.classes = spec.get_size("classes", s.classes);
    s.noise = spec.get_double("noise", s.noise);
    s.seed = seed;
    res.add("samples", s.samples).add("image_size", s.image_size).add("grid", s.grid).add("k", s.k);
    res.add("classes", s.classes).add("noise", s.noise);
    const auto samples = superpixel_samples(s);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& sp = samples[i];
      write_text_file(path(name("image", i, ".pgm")), to_pgm(sp.image));
      write_text_file(path(name("graph", i, ".txt")), to_edge_list(sp.graph.graph));
      const auto& p = sp.graph.graph.positions();
      Tensor<double> table(p.rows(), 4);
      for (std::size_t v = 0; v < p.rows(); ++v) {
        for (std::size_t c = 0; c < 3; ++c) table(v, c) = p(v, c);
        table(v, 3) = sp.graph.features(v, 0);
      }
      write_text_file(path(name("graph", i, ".csv")), to_csv({"x", "y", "z", "intensity"}, table));
      lines.push_back(std::string(split_of(i, samples.size())) + " " + name("graph", i, ".txt") + " " +
                      name("graph", i, ".csv") + " " + std::to_string(sp.label));
    }
    manifest.add("task", "classification").add("classes", s.classes).add("fixed_topology", false);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown generator '" + gen + "'");
  }
  for (const auto& unused : spec.unused_keys())
    fail(ErrorCode::ParseError, spec.source() + ": unknown key '" + unused + "'");
  manifest.list("samples", lines);
  const std::string manifest_path = path("manifest.txt");
  write_text_file(manifest_path, manifest.str());
  write_text_file(path("resolved_spec.txt"), res.str());
  if (resolved != nullptr) *resolved = res.str();
  return manifest_path;
}

}  // namespace affconv::data
