#include "meseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "meseg/error.hpp"
#include "meseg/rng.hpp"

namespace meseg {

namespace {

// Redraws per lesion before giving up; generous because rejection only
// happens when a candidate touches an already-placed lesion.
constexpr int kMaxPlacementAttempts = 200;

inline double sq(double x) { return x * x; }

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(radius) + 1);
  for (int i = 0; i <= radius; ++i)
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * sq(i / sigma));
  return k;
}

// kernel[r] is the weight at |offset| r; the window is truncated at the
// line ends and renormalized by the in-bounds weight sum.
void blur_line(const std::vector<double>& in, int n,
               const std::vector<double>& kernel, std::vector<double>& out) {
  const int radius = static_cast<int>(kernel.size()) - 1;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - radius);
    const int hi = std::min(n - 1, i + radius);
    double acc = 0.0;
    double wsum = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double w = kernel[static_cast<std::size_t>(std::abs(j - i))];
      acc += w * in[static_cast<std::size_t>(j)];
      wsum += w;
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (dim.nx <= 0 || dim.ny <= 0 || dim.nz <= 0)
    throw Error(Errc::invalid_argument, "SynthConfig: dims must be positive");
  if (spacing.sx <= 0.0 || spacing.sy <= 0.0 || spacing.sz <= 0.0)
    throw Error(Errc::invalid_argument,
                "SynthConfig: spacing must be positive");
  if (min_lesions < 0 || max_lesions < min_lesions)
    throw Error(Errc::invalid_argument,
                "SynthConfig: lesion count range invalid");
  if (!(min_radius > 0.0) || max_radius < min_radius)
    throw Error(Errc::invalid_argument,
                "SynthConfig: lesion radius range invalid");
  if (!(noise_sigma >= 0.0) || !(blur_sigma >= 0.0))
    throw Error(Errc::invalid_argument, "SynthConfig: sigmas must be >= 0");
  if (!std::isfinite(fg_mean) || !std::isfinite(bg_mean))
    throw Error(Errc::invalid_argument,
                "SynthConfig: intensities must be finite");
  // A lesion of semi-axis r needs a center in [r, n-1-r] along each
  // in-plane axis (and along z unless the grid is a single slice).
  const bool fits_xy = 2.0 * max_radius <= dim.nx - 1 &&
                       2.0 * max_radius <= dim.ny - 1;
  const bool fits_z = dim.nz == 1 || 2.0 * max_radius <= dim.nz - 1;
  if (max_lesions > 0 && (!fits_xy || !fits_z))
    throw Error(Errc::invalid_argument,
                "SynthConfig: lesion radius exceeds grid");
}

void ShiftParams::validate() const {
  if (!(gain > 0.0))
    throw Error(Errc::invalid_argument, "ShiftParams: gain must be > 0");
  if (!(gamma > 0.0))
    throw Error(Errc::invalid_argument, "ShiftParams: gamma must be > 0");
  if (!(noise_sigma >= 0.0) || !(blur_delta >= 0.0))
    throw Error(Errc::invalid_argument,
                "ShiftParams: sigma and blur must be >= 0");
  if (!std::isfinite(offset))
    throw Error(Errc::invalid_argument, "ShiftParams: offset must be finite");
}

bool ShiftParams::is_identity() const {
  return gain == 1.0 && offset == 0.0 && gamma == 1.0 && noise_sigma == 0.0 &&
         blur_delta == 0.0;
}

ShiftParams ShiftParams::ood_preset() {
  ShiftParams s;
  s.gain = 1.3;
  s.offset = 0.1;
  s.gamma = 0.8;
  s.noise_sigma = 0.05;
  s.blur_delta = 0.0;
  return s;
}

SynthSample synth_generate_one(const SynthConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng = Rng::substream(cfg.seed, index);
  const Dim3 d = cfg.dim;
  const bool flat = d.nz == 1;
  const std::size_t n = d.voxels();

  int count = cfg.min_lesions;
  if (cfg.max_lesions > cfg.min_lesions)
    count += static_cast<int>(rng.bounded(
        static_cast<std::uint64_t>(cfg.max_lesions - cfg.min_lesions) + 1));

  std::vector<std::uint8_t> mask(n, 0);
  // Already-placed lesions dilated by one voxel (26-neighborhood): a new
  // lesion may not touch this set, so distinct lesions never merge into
  // one connected component.
  std::vector<std::uint8_t> forbidden(n, 0);
  auto at = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(d.nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(d.ny) * z);
  };

  std::vector<std::array<int, 3>> vox;
  for (int lesion = 0; lesion < count; ++lesion) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed;
         ++attempt) {
      const double rx = rng.uniform(cfg.min_radius, cfg.max_radius);
      const double ry = rng.uniform(cfg.min_radius, cfg.max_radius);
      const double rz = rng.uniform(cfg.min_radius, cfg.max_radius);
      const double ux = rng.uniform01();
      const double uy = rng.uniform01();
      const double uz = rng.uniform01();
      const double cx = rx + (d.nx - 1 - 2.0 * rx) * ux;
      const double cy = ry + (d.ny - 1 - 2.0 * ry) * uy;
      const double cz = flat ? 0.0 : rz + (d.nz - 1 - 2.0 * rz) * uz;

      const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
      const int x1 = std::min(d.nx - 1, static_cast<int>(std::ceil(cx + rx)));
      const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
      const int y1 = std::min(d.ny - 1, static_cast<int>(std::ceil(cy + ry)));
      const int z0 = flat ? 0 : std::max(0, static_cast<int>(std::floor(cz - rz)));
      const int z1 =
          flat ? 0 : std::min(d.nz - 1, static_cast<int>(std::ceil(cz + rz)));

      vox.clear();
      for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            double q = sq((x - cx) / rx) + sq((y - cy) / ry);
            if (!flat) q += sq((z - cz) / rz);
            if (q <= 1.0) vox.push_back({x, y, z});
          }
      // A thin ellipse can miss every voxel center; treat it like a clash
      // and redraw.
      if (vox.empty()) continue;
      bool clash = false;
      for (const auto& c : vox)
        if (forbidden[at(c[0], c[1], c[2])]) {
          clash = true;
          break;
        }
      if (clash) continue;

      for (const auto& c : vox) {
        mask[at(c[0], c[1], c[2])] = 1;
        const int zlo = flat ? 0 : std::max(0, c[2] - 1);
        const int zhi = flat ? 0 : std::min(d.nz - 1, c[2] + 1);
        for (int z = zlo; z <= zhi; ++z)
          for (int y = std::max(0, c[1] - 1); y <= std::min(d.ny - 1, c[1] + 1);
               ++y)
            for (int x = std::max(0, c[0] - 1);
                 x <= std::min(d.nx - 1, c[0] + 1); ++x)
              forbidden[at(x, y, z)] = 1;
      }
      placed = true;
    }
    if (!placed)
      throw Error(Errc::invalid_argument,
                  "synth_generate: could not place lesion " +
                      std::to_string(lesion + 1) + " of " +
                      std::to_string(count) +
                      " without overlap; grid too crowded for the radius "
                      "range");
  }

  std::vector<double> img(n, cfg.bg_mean);
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) img[i] = cfg.fg_mean;
  Volume image(d, cfg.spacing, std::move(img));
  if (cfg.blur_sigma > 0.0) image = gaussian_blur(image, cfg.blur_sigma);
  if (cfg.noise_sigma > 0.0) {
    std::vector<double> noisy = image.data();
    for (auto& x : noisy) x += cfg.noise_sigma * rng.normal();
    image = Volume(d, cfg.spacing, std::move(noisy));
  }
  return {std::move(image), BinaryMask(d, cfg.spacing, std::move(mask))};
}

std::vector<SynthSample> synth_generate(const SynthConfig& cfg, int n) {
  if (n < 1)
    throw Error(Errc::invalid_argument, "synth_generate: n must be >= 1");
  std::vector<SynthSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(synth_generate_one(cfg, static_cast<std::uint64_t>(i)));
  return out;
}

Volume apply_domain_shift(const Volume& v, const ShiftParams& s,
                          std::uint64_t seed) {
  s.validate();
  if (s.is_identity()) return v;
  std::vector<double> data = v.data();
  // Skip untouched stages entirely so parameter values of exactly 1/0 are
  // bit-exact no-ops rather than pow/multiply round trips.
  const bool do_gamma = s.gamma != 1.0;
  const bool do_affine = s.gain != 1.0 || s.offset != 0.0;
  if (do_gamma || do_affine) {
    for (auto& x : data) {
      const double c = std::clamp(x, 0.0, 1.0);
      const double g = do_gamma ? std::pow(c, s.gamma) : c;
      x = s.gain * g + s.offset;
    }
  }
  Volume out(v.dim(), v.spacing(), std::move(data));
  if (s.blur_delta > 0.0) out = gaussian_blur(out, s.blur_delta);
  if (s.noise_sigma > 0.0) {
    std::vector<double> noisy = out.data();
    Rng rng(seed);
    for (auto& x : noisy) x += s.noise_sigma * rng.normal();
    out = Volume(v.dim(), v.spacing(), std::move(noisy));
  }
  return out;
}

Volume gaussian_blur(const Volume& v, double sigma) {
  if (sigma <= 0.0) return v;
  const Dim3& d = v.dim();
  std::vector<double> data = v.data();
  const std::vector<double> kernel = gaussian_kernel(sigma);
  std::vector<double> line;
  std::vector<double> out;

  if (d.nx > 1) {
    line.resize(static_cast<std::size_t>(d.nx));
    out.resize(static_cast<std::size_t>(d.nx));
    for (int z = 0; z < d.nz; ++z)
      for (int y = 0; y < d.ny; ++y) {
        for (int x = 0; x < d.nx; ++x)
          line[static_cast<std::size_t>(x)] = data[v.index(x, y, z)];
        blur_line(line, d.nx, kernel, out);
        for (int x = 0; x < d.nx; ++x)
          data[v.index(x, y, z)] = out[static_cast<std::size_t>(x)];
      }
  }
  if (d.ny > 1) {
    line.resize(static_cast<std::size_t>(d.ny));
    out.resize(static_cast<std::size_t>(d.ny));
    for (int z = 0; z < d.nz; ++z)
      for (int x = 0; x < d.nx; ++x) {
        for (int y = 0; y < d.ny; ++y)
          line[static_cast<std::size_t>(y)] = data[v.index(x, y, z)];
        blur_line(line, d.ny, kernel, out);
        for (int y = 0; y < d.ny; ++y)
          data[v.index(x, y, z)] = out[static_cast<std::size_t>(y)];
      }
  }
  if (d.nz > 1) {
    line.resize(static_cast<std::size_t>(d.nz));
    out.resize(static_cast<std::size_t>(d.nz));
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        for (int z = 0; z < d.nz; ++z)
          line[static_cast<std::size_t>(z)] = data[v.index(x, y, z)];
        blur_line(line, d.nz, kernel, out);
        for (int z = 0; z < d.nz; ++z)
          data[v.index(x, y, z)] = out[static_cast<std::size_t>(z)];
      }
  }
  return Volume(d, v.spacing(), std::move(data));
}

}  // namespace meseg
