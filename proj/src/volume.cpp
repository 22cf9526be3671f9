#include "meseg/volume.hpp"

#include <array>
#include <cmath>
#include <numeric>

namespace meseg {

namespace {

void check_grid(const Dim3& dim, const Spacing& sp, std::size_t n,
                const char* type) {
  if (dim.nx <= 0 || dim.ny <= 0 || dim.nz <= 0)
    throw Error(Errc::invalid_argument,
                std::string(type) + ": dims must be positive");
  if (!(sp.sx > 0.0) || !(sp.sy > 0.0) || !(sp.sz > 0.0))
    throw Error(Errc::invalid_argument,
                std::string(type) + ": spacing must be positive");
  if (n != dim.voxels())
    throw Error(Errc::invalid_argument,
                std::string(type) + ": data length does not match dims");
}

}  // namespace

Volume::Volume(Dim3 dim, Spacing spacing, std::vector<double> data)
    : dim_(dim), spacing_(spacing), data_(std::move(data)) {
  check_grid(dim_, spacing_, data_.size(), "Volume");
  for (double v : data_)
    if (!std::isfinite(v))
      throw Error(Errc::numeric, "Volume: non-finite value");
}

ProbMap::ProbMap(Volume v) : v_(std::move(v)) {
  for (double p : v_.data())
    if (p < 0.0 || p > 1.0)
      throw Error(Errc::invalid_argument, "ProbMap: value outside [0,1]");
}

BinaryMask::BinaryMask(Dim3 dim, Spacing spacing,
                       std::vector<std::uint8_t> data)
    : dim_(dim), spacing_(spacing), data_(std::move(data)) {
  check_grid(dim_, spacing_, data_.size(), "BinaryMask");
  for (auto& b : data_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count_true() const {
  std::size_t n = 0;
  for (auto b : data_) n += b;
  return n;
}

LabelMap::LabelMap(Dim3 dim, Spacing spacing, std::vector<std::int32_t> data,
                   int num_labels)
    : dim_(dim), spacing_(spacing), data_(std::move(data)),
      num_labels_(num_labels) {
  check_grid(dim_, spacing_, data_.size(), "LabelMap");
  if (num_labels_ < 0)
    throw Error(Errc::invalid_argument, "LabelMap: negative num_labels");
  for (auto l : data_)
    if (l < 0 || l > num_labels_)
      throw Error(Errc::invalid_argument, "LabelMap: label out of range");
}

void require_same_dims(const Dim3& a, const Dim3& b, const char* where) {
  if (!(a == b))
    throw Error(Errc::dim_mismatch, std::string(where) + ": dim mismatch");
}

BinaryMask threshold(const ProbMap& p, double t) {
  if (t < 0.0 || t > 1.0)
    throw Error(Errc::invalid_argument, "threshold: t outside [0,1]");
  std::vector<std::uint8_t> out(p.size());
  const auto& d = p.data();
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > t ? 1 : 0;
  return BinaryMask(p.dim(), p.spacing(), std::move(out));
}

Volume zscore_normalize(const Volume& v,
                        const std::optional<BinaryMask>& region) {
  if (region) require_same_dims(v.dim(), region->dim(), "zscore_normalize");

  // Fixed sequential-by-index accumulation, population variance.
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (region && !(*region)[i]) continue;
    sum += v[i];
    sumsq += v[i] * v[i];
    ++n;
  }
  if (n < 2)
    throw Error(Errc::invalid_argument,
                "zscore_normalize: region needs at least 2 voxels");
  const double mu = sum / n;
  const double var = sumsq / n - mu * mu;
  if (!(var > 0.0))
    throw Error(Errc::numeric, "zscore_normalize: zero variance");
  const double sigma = std::sqrt(var);

  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mu) / sigma;
  return Volume(v.dim(), v.spacing(), std::move(out));
}

namespace {

// Neighbor offsets for 6/18/26 connectivity: all nonzero (dx,dy,dz) in
// {-1,0,1}^3 whose L1 norm is within the allowed range.
std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
  int max_l1;
  switch (connectivity) {
    case 6: max_l1 = 1; break;
    case 18: max_l1 = 2; break;
    case 26: max_l1 = 3; break;
    default:
      throw Error(Errc::invalid_argument,
                  "connected_components: connectivity must be 6, 18 or 26");
  }
  std::vector<std::array<int, 3>> offs;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (l1 >= 1 && l1 <= max_l1) offs.push_back({dx, dy, dz});
      }
  return offs;
}

}  // namespace

LabelMap connected_components(const BinaryMask& m, int connectivity) {
  const auto offs = neighbor_offsets(connectivity);
  const Dim3 dim = m.dim();
  std::vector<std::int32_t> labels(m.size(), 0);
  int next_label = 0;
  std::vector<std::size_t> stack;

  // Scan order is the flat index order, so labels are assigned by the
  // first voxel of each component.
  for (int z = 0; z < dim.nz; ++z)
    for (int y = 0; y < dim.ny; ++y)
      for (int x = 0; x < dim.nx; ++x) {
        std::size_t i = m.index(x, y, z);
        if (!m[i] || labels[i] != 0) continue;
        ++next_label;
        labels[i] = next_label;
        stack.push_back(i);
        while (!stack.empty()) {
          std::size_t cur = stack.back();
          stack.pop_back();
          int cx = static_cast<int>(cur % dim.nx);
          int cy = static_cast<int>((cur / dim.nx) % dim.ny);
          int cz = static_cast<int>(cur / (static_cast<std::size_t>(dim.nx) * dim.ny));
          for (const auto& o : offs) {
            int nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
            if (nx < 0 || nx >= dim.nx || ny < 0 || ny >= dim.ny || nz < 0 ||
                nz >= dim.nz)
              continue;
            std::size_t ni = m.index(nx, ny, nz);
            if (m[ni] && labels[ni] == 0) {
              labels[ni] = next_label;
              stack.push_back(ni);
            }
          }
        }
      }
  return LabelMap(dim, m.spacing(), std::move(labels), next_label);
}

std::vector<std::pair<int, double>> component_volumes_ml(const LabelMap& lm) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(lm.num_labels()) + 1,
                                  0);
  for (std::size_t i = 0; i < lm.size(); ++i) counts[lm[i]]++;
  const double voxel_ml = lm.spacing().voxel_volume_mm3() / 1000.0;
  std::vector<std::pair<int, double>> out;
  for (int l = 1; l <= lm.num_labels(); ++l)
    out.emplace_back(l, static_cast<double>(counts[l]) * voxel_ml);
  return out;
}

}  // namespace meseg
