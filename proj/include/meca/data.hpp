#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "meca/error.hpp"
#include "meca/matrix.hpp"

namespace meca {

/// Samples stored column-wise (d₀ × n); labels, when present, one-hot (n × K).
struct Dataset {
  DenseMatrix inputs;
  std::optional<DenseMatrix> labels;
  std::string domain_tag;

  std::size_t size() const noexcept { return inputs.cols(); }
  std::size_t dim() const noexcept { return inputs.rows(); }
  std::size_t num_classes() const noexcept { return labels ? labels->cols() : 0; }
  bool has_labels() const noexcept { return labels.has_value(); }

  Dataset without_labels() const { return Dataset{inputs, std::nullopt, domain_tag}; }

  /// Class index per sample (argmax of the one-hot row).
  std::vector<int> class_indices() const {
    std::vector<int> out(size(), -1);
    if (!labels) return out;
    for (std::size_t i = 0; i < size(); ++i) {
      auto row = labels->row(i);
      out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.domain_tag = domain_tag;
    out.inputs = DenseMatrix(dim(), idx.size());
    for (std::size_t r = 0; r < dim(); ++r)
      for (std::size_t j = 0; j < idx.size(); ++j) out.inputs(r, j) = inputs(r, idx[j]);
    if (labels) {
      DenseMatrix l(idx.size(), labels->cols());
      for (std::size_t j = 0; j < idx.size(); ++j)
        for (std::size_t c = 0; c < labels->cols(); ++c) l(j, c) = (*labels)(idx[j], c);
      out.labels = std::move(l);
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void validate_one_hot(const DenseMatrix& labels) {
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    int ones = 0;
    for (double v : labels.row(i)) {
      if (v == 1.0) ++ones;
      else require(v == 0.0, ErrorKind::BadShape, "label row is not one-hot");
    }
    require(ones == 1, ErrorKind::BadShape, "label row is not one-hot");
  }
}

inline DenseMatrix one_hot(const std::vector<int>& classes, std::size_t k) {
  DenseMatrix out(classes.size(), k);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    require(classes[i] >= 0 && static_cast<std::size_t>(classes[i]) < k, ErrorKind::BadParams,
            "class index out of range");
    out(i, static_cast<std::size_t>(classes[i])) = 1.0;
  }
  return out;
}

// --- synthetic generators ---------------------------------------------------

/// Class means on a radius-4 circle in the first two coordinates, unit
/// isotropic noise everywhere. Samples are interleaved by class.
inline Dataset gen_blobs(std::size_t k_classes, std::size_t per_class, std::size_t dim,
                         std::uint64_t seed) {
  require(k_classes >= 2, ErrorKind::BadParams, "need at least two classes");
  require(dim >= 2, ErrorKind::BadParams, "need at least two dimensions");
  require(per_class >= 1, ErrorKind::BadParams, "need at least one sample per class");
  constexpr double kRadius = 4.0;
  const std::size_t n = k_classes * per_class;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.domain_tag = "blobs";
  ds.inputs = DenseMatrix(dim, n);
  std::vector<int> cls(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = i % k_classes;
    cls[i] = static_cast<int>(c);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                         static_cast<double>(k_classes);
    for (std::size_t r = 0; r < dim; ++r) {
      double mean = 0.0;
      if (r == 0) mean = kRadius * std::cos(angle);
      if (r == 1) mean = kRadius * std::sin(angle);
      ds.inputs(r, i) = mean + noise(rng);
    }
  }
  ds.labels = one_hot(cls, k_classes);
  return ds;
}

/// Two interleaved half circles in the first two coordinates; remaining
/// coordinates carry pure noise.
inline Dataset gen_moons(std::size_t per_class, std::size_t dim, double noise_sigma,
                         std::uint64_t seed) {
  require(dim >= 2, ErrorKind::BadParams, "need at least two dimensions");
  require(per_class >= 1, ErrorKind::BadParams, "need at least one sample per class");
  require(noise_sigma >= 0.0, ErrorKind::BadParams, "noise must be non-negative");
  const std::size_t n = 2 * per_class;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.domain_tag = "moons";
  ds.inputs = DenseMatrix(dim, n);
  std::vector<int> cls(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    cls[i] = c;
    const double t = u(rng);
    const double x = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    const double y = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    ds.inputs(0, i) = x + noise_sigma * noise(rng);
    ds.inputs(1, i) = y + noise_sigma * noise(rng);
    for (std::size_t r = 2; r < dim; ++r) ds.inputs(r, i) = noise_sigma * noise(rng);
  }
  ds.labels = one_hot(cls, 2);
  return ds;
}

struct ShiftSpec {
  double rotation_deg = 0.0;
  std::vector<double> translation;
  double scale = 1.0;
  double noise_sigma = 0.0;
};

/// x ↦ scale·R(rotation)·x + translation + N(0, σ²); rotation acts on the
/// first two coordinates. Labels are carried over untouched.
inline Dataset apply_shift(const Dataset& ds, const ShiftSpec& spec, std::uint64_t seed) {
  require(spec.scale > 0.0 && std::isfinite(spec.scale), ErrorKind::BadParams,
          "scale must be positive");
  require(spec.noise_sigma >= 0.0, ErrorKind::BadParams, "noise must be non-negative");
  require(spec.translation.size() <= ds.dim(), ErrorKind::BadParams,
          "translation longer than the input dimension");
  require(spec.rotation_deg == 0.0 || ds.dim() >= 2, ErrorKind::BadParams,
          "rotation needs at least two dimensions");
  Dataset out = ds;
  const double rad = spec.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t j = 0; j < ds.size(); ++j) {
    if (spec.rotation_deg != 0.0) {
      const double x = ds.inputs(0, j), y = ds.inputs(1, j);
      out.inputs(0, j) = c * x - s * y;
      out.inputs(1, j) = s * x + c * y;
    }
    for (std::size_t r = 0; r < ds.dim(); ++r) {
      double v = out.inputs(r, j);
      if (spec.scale != 1.0) v *= spec.scale;
      if (r < spec.translation.size()) v += spec.translation[r];
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
      out.inputs(r, j) = v;
    }
  }
  return out;
}

struct DomainPair {
  Dataset source;
  Dataset target;
};

/// Desk-scale stand-in for a digit-domain shift: four blobs in 16 dimensions,
/// target rotated 30°, translated by (1, −1), scaled by 1.3 and re-noised.
inline ShiftSpec rotated_blobs_shift(std::size_t dim = 16) {
  ShiftSpec s;
  s.rotation_deg = 30.0;
  s.translation.assign(dim, 0.0);
  s.translation[0] = 1.0;
  s.translation[1] = -1.0;
  s.scale = 1.3;
  s.noise_sigma = 0.2;
  return s;
}

inline DomainPair rotated_blobs_benchmark(std::uint64_t seed, std::size_t per_class = 250) {
  constexpr std::size_t kClasses = 4, kDim = 16;
  DomainPair p;
  p.source = gen_blobs(kClasses, per_class, kDim, seed);
  p.source.domain_tag = "source";
  p.target = apply_shift(gen_blobs(kClasses, per_class, kDim, seed + 1),
                         rotated_blobs_shift(kDim), seed + 2);
  p.target.domain_tag = "target";
  return p;
}

inline DomainPair rotated_moons_benchmark(std::uint64_t seed, std::size_t per_class = 250) {
  DomainPair p;
  p.source = gen_moons(per_class, 2, 0.1, seed);
  p.source.domain_tag = "source";
  ShiftSpec s;
  s.rotation_deg = 30.0;
  s.translation = {0.2, -0.2};
  s.noise_sigma = 0.05;
  p.target = apply_shift(gen_moons(per_class, 2, 0.1, seed + 1), s, seed + 2);
  p.target.domain_tag = "target";
  return p;
}

// --- IDX --------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {
inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  require(off + 4 <= b.size(), ErrorKind::TruncatedFile, "IDX header ends early");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void append_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}
}  // namespace detail

/// Parses rank-3 u8 IDX images (and optionally rank-1 u8 labels). Pixels
/// are scaled by 1/255; labels become one-hot with K = max label + 1.
inline Dataset read_idx(const std::string& images_path,
                        const std::optional<std::string>& labels_path = std::nullopt) {
  const auto img = detail::read_file_bytes(images_path);
  require(detail::read_be32(img, 0) == kIdxImageMagic, ErrorKind::BadMagic,
          "image file magic is not 0x00000803");
  const std::size_t n = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  constexpr std::size_t kImageHeader = 16;
  const std::size_t pixels = rows * cols;
  require(img.size() >= kImageHeader + n * pixels, ErrorKind::TruncatedFile,
          "image payload shorter than declared");
  require(img.size() == kImageHeader + n * pixels, ErrorKind::ParseError,
          "trailing bytes after image payload");

  Dataset ds;
  ds.domain_tag = "idx";
  ds.inputs = DenseMatrix(pixels, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < pixels; ++p)
      ds.inputs(p, i) = static_cast<double>(img[kImageHeader + i * pixels + p]) / 255.0;

  if (labels_path) {
    const auto lab = detail::read_file_bytes(*labels_path);
    require(detail::read_be32(lab, 0) == kIdxLabelMagic, ErrorKind::BadMagic,
            "label file magic is not 0x00000801");
    const std::size_t m = detail::read_be32(lab, 4);
    constexpr std::size_t kLabelHeader = 8;
    require(lab.size() >= kLabelHeader + m, ErrorKind::TruncatedFile,
            "label payload shorter than declared");
    require(lab.size() == kLabelHeader + m, ErrorKind::ParseError,
            "trailing bytes after label payload");
    require(m == n, ErrorKind::CountMismatch, "image and label counts differ");
    std::vector<int> cls(m);
    int max_label = 0;
    for (std::size_t i = 0; i < m; ++i) {
      cls[i] = lab[kLabelHeader + i];
      max_label = std::max(max_label, cls[i]);
    }
    ds.labels = one_hot(cls, static_cast<std::size_t>(max_label) + 1);
  }
  return ds;
}

inline std::vector<std::uint8_t> encode_idx_images(const std::vector<std::uint8_t>& pixels,
                                                   std::uint32_t count, std::uint32_t rows,
                                                   std::uint32_t cols) {
  std::vector<std::uint8_t> b;
  detail::append_be32(b, kIdxImageMagic);
  detail::append_be32(b, count);
  detail::append_be32(b, rows);
  detail::append_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

inline std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  detail::append_be32(b, kIdxLabelMagic);
  detail::append_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

// --- CSV --------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Header `f0,...,f{d-1},label`; one row per sample; label −1 when absent.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  for (std::size_t r = 0; r < ds.dim(); ++r) f << 'f' << r << ',';
  f << "label\n";
  const auto cls = ds.class_indices();
  for (std::size_t j = 0; j < ds.size(); ++j) {
    for (std::size_t r = 0; r < ds.dim(); ++r) f << format_double(ds.inputs(r, j)) << ',';
    f << cls[j] << '\n';
  }
  require(static_cast<bool>(f), ErrorKind::IoError, "write failed: " + path);
}

/// Reads the CSV layout written by write_csv. When `num_classes` is given
/// the one-hot width is fixed to it; otherwise K = max label + 1.
inline Dataset read_csv(const std::string& path,
                        std::optional<std::size_t> num_classes = std::nullopt) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), ErrorKind::ParseError, "missing header");

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };

  const auto header = split(line);
  require(header.size() >= 2 && header.back() == "label", ErrorKind::ParseError,
          "header must end with a label column");
  const std::size_t d = header.size() - 1;
  for (std::size_t r = 0; r < d; ++r)
    require(header[r] == "f" + std::to_string(r), ErrorKind::ParseError,
            "unexpected column name " + header[r]);

  std::vector<double> values;
  std::vector<int> cls;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    require(cells.size() == d + 1, ErrorKind::ParseError,
            "row " + std::to_string(line_no) + " has the wrong width");
    for (std::size_t r = 0; r <= d; ++r) {
      std::size_t used = 0;
      try {
        if (r < d) {
          values.push_back(std::stod(cells[r], &used));
        } else {
          cls.push_back(std::stoi(cells[r], &used));
        }
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == cells[r].size() && used > 0, ErrorKind::ParseError,
              "bad number on row " + std::to_string(line_no));
    }
  }

  Dataset ds;
  ds.domain_tag = path;
  const std::size_t n = cls.size();
  ds.inputs = DenseMatrix(d, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t r = 0; r < d; ++r) ds.inputs(r, j) = values[j * d + r];

  const bool any_label = std::any_of(cls.begin(), cls.end(), [](int c) { return c >= 0; });
  const bool all_label = std::all_of(cls.begin(), cls.end(), [](int c) { return c >= 0; });
  require(!any_label || all_label, ErrorKind::ParseError, "mix of labeled and unlabeled rows");
  for (int c : cls) require(c >= -1, ErrorKind::ParseError, "negative label other than -1");
  if (any_label) {
    const int mx = *std::max_element(cls.begin(), cls.end());
    std::size_t k = static_cast<std::size_t>(mx) + 1;
    if (num_classes) {
      require(*num_classes >= k, ErrorKind::ParseError, "label exceeds class count");
      k = *num_classes;
    }
    ds.labels = one_hot(cls, k);
  }
  return ds;
}

}  // namespace meca
