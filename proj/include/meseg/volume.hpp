#ifndef MESEG_VOLUME_HPP
#define MESEG_VOLUME_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "meseg/error.hpp"

namespace meseg {

struct Dim3 {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
  bool operator==(const Dim3&) const = default;
};

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  double voxel_volume_mm3() const { return sx * sy * sz; }
  bool operator==(const Spacing&) const = default;
};

// Dense 3D scalar grid. Storage is a flat array in x-fastest order
// (index = x + nx*(y + ny*z)), matching the NIfTI on-disk layout so
// serialized grids are byte-comparable. Immutable after construction.
class Volume {
 public:
  Volume(Dim3 dim, Spacing spacing, std::vector<double> data);

  const Dim3& dim() const { return dim_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<double>& data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dim_.nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dim_.ny) * z);
  }
  double at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  double operator[](std::size_t i) const { return data_[i]; }

 private:
  Dim3 dim_;
  Spacing spacing_;
  std::vector<double> data_;
};

// Volume whose values are probabilities in [0, 1].
class ProbMap {
 public:
  explicit ProbMap(Volume v);
  ProbMap(Dim3 dim, Spacing spacing, std::vector<double> data)
      : ProbMap(Volume(dim, spacing, std::move(data))) {}

  const Volume& volume() const { return v_; }
  const Dim3& dim() const { return v_.dim(); }
  const Spacing& spacing() const { return v_.spacing(); }
  const std::vector<double>& data() const { return v_.data(); }
  std::size_t size() const { return v_.size(); }
  double operator[](std::size_t i) const { return v_[i]; }

 private:
  Volume v_;
};

// Boolean 3D grid, same layout as Volume.
class BinaryMask {
 public:
  BinaryMask(Dim3 dim, Spacing spacing, std::vector<std::uint8_t> data);

  const Dim3& dim() const { return dim_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<std::uint8_t>& data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dim_.nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dim_.ny) * z);
  }
  bool at(int x, int y, int z) const { return data_[index(x, y, z)] != 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }

  std::size_t count_true() const;

 private:
  Dim3 dim_;
  Spacing spacing_;
  std::vector<std::uint8_t> data_;
};

// Connected-component labels. 0 is background, labels are contiguous
// 1..num_labels.
class LabelMap {
 public:
  LabelMap(Dim3 dim, Spacing spacing, std::vector<std::int32_t> data,
           int num_labels);

  const Dim3& dim() const { return dim_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<std::int32_t>& data() const { return data_; }
  int num_labels() const { return num_labels_; }
  std::size_t size() const { return data_.size(); }
  std::int32_t operator[](std::size_t i) const { return data_[i]; }

 private:
  Dim3 dim_;
  Spacing spacing_;
  std::vector<std::int32_t> data_;
  int num_labels_;
};

// Throws Errc::dim_mismatch unless both grids have identical dims.
void require_same_dims(const Dim3& a, const Dim3& b, const char* where);

// Voxel is true iff p_i > t (strict, so a voxel at exactly t is background).
BinaryMask threshold(const ProbMap& p, double t);

// (v - mu) / sigma with population statistics taken over `region` (or the
// whole grid when absent) and applied to every voxel.
Volume zscore_normalize(const Volume& v,
                        const std::optional<BinaryMask>& region = {});

// Deterministic labeling: components are numbered by the scan-order position
// of their first voxel. Connectivity must be 6, 18 or 26.
LabelMap connected_components(const BinaryMask& m, int connectivity = 26);

// Per-label (label, volume in mL); spacing is in mm, 1 mL = 1000 mm^3.
std::vector<std::pair<int, double>> component_volumes_ml(const LabelMap& lm);

}  // namespace meseg

#endif
