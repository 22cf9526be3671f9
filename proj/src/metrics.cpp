#include "meseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace meseg {

// Calibration ----------------------------------------------------------------

CalibrationTable ece(const std::vector<double>& probs,
                     const std::vector<int>& labels, int num_bins,
                     EceConvention convention) {
  if (probs.size() != labels.size())
    throw Error(Errc::invalid_argument, "ece: length mismatch");
  if (probs.empty())
    throw Error(Errc::invalid_argument, "ece: empty input");
  if (num_bins < 1)
    throw Error(Errc::invalid_argument, "ece: num_bins must be >= 1");

  CalibrationTable table;
  table.convention = convention;
  table.bins.resize(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);

  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p < 0.0 || p > 1.0)
      throw Error(Errc::invalid_argument, "ece: probability outside [0,1]");
    double conf;
    double hit;
    if (convention == EceConvention::positive_prob) {
      conf = p;
      hit = labels[i] ? 1.0 : 0.0;
    } else {
      conf = std::max(p, 1.0 - p);
      const int pred = p > 0.5 ? 1 : 0;
      hit = pred == (labels[i] ? 1 : 0) ? 1.0 : 0.0;
    }
    int b = static_cast<int>(conf * num_bins);
    if (b == num_bins) b = num_bins - 1;  // closes the last bin at 1.0
    table.bins[b].count++;
    conf_sum[b] += conf;
    acc_sum[b] += hit;
  }

  const double n = static_cast<double>(probs.size());
  double e = 0.0;
  for (int b = 0; b < num_bins; ++b) {
    auto& bin = table.bins[b];
    bin.lower = static_cast<double>(b) / num_bins;
    bin.upper = static_cast<double>(b + 1) / num_bins;
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[b] / bin.count;
      bin.fraction_positive = acc_sum[b] / bin.count;
      e += (bin.count / n) *
           std::abs(bin.fraction_positive - bin.mean_confidence);
    }
  }
  table.ece = e;
  return table;
}

std::vector<ReliabilityPoint> reliability_points(const CalibrationTable& t) {
  std::vector<ReliabilityPoint> points;
  for (const auto& bin : t.bins)
    if (bin.count > 0)
      points.push_back({bin.mean_confidence, bin.fraction_positive, bin.count});
  return points;
}

// Discrimination -------------------------------------------------------------

double dice(const BinaryMask& g, const BinaryMask& p) {
  require_same_dims(g.dim(), p.dim(), "dice");
  std::size_t inter = 0, ng = 0, np = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool gi = g[i], pi = p[i];
    inter += gi && pi;
    ng += gi;
    np += pi;
  }
  if (ng + np == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ng + np);
}

namespace {

// Voxels of m with at least one 6-neighbor that is false or outside.
std::vector<std::uint8_t> boundary_voxels(const BinaryMask& m) {
  const Dim3 d = m.dim();
  std::vector<std::uint8_t> out(m.size(), 0);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!m.at(x, y, z)) continue;
        const bool surface =
            x == 0 || !m.at(x - 1, y, z) || x == d.nx - 1 || !m.at(x + 1, y, z) ||
            y == 0 || !m.at(x, y - 1, z) || y == d.ny - 1 || !m.at(x, y + 1, z) ||
            z == 0 || !m.at(x, y, z - 1) || z == d.nz - 1 || !m.at(x, y, z + 1);
        if (surface) out[m.index(x, y, z)] = 1;
      }
  return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D lower envelope of parabolas (Felzenszwalb-Huttenlocher) over samples
// at positions i * step. Only finite parabolas enter the envelope; a line
// with no finite value stays all-infinite.
void dt_1d(const std::vector<double>& f, int n, double step,
           std::vector<int>& v, std::vector<double>& zb,
           std::vector<double>& out) {
  auto pos = [step](int i) { return step * i; };
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = 0.0;
    while (k >= 0) {
      s = ((f[q] + pos(q) * pos(q)) - (f[v[k]] + pos(v[k]) * pos(v[k]))) /
          (2.0 * pos(q) - 2.0 * pos(v[k]));
      if (s > zb[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    zb[k] = k == 0 ? -kInf : s;
    zb[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (zb[k + 1] < pos(q)) ++k;
    const double dx = pos(q) - pos(v[k]);
    out[q] = dx * dx + f[v[k]];
  }
}

// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
// site, with anisotropic spacing. `sites` is a flat 0/1 grid.
std::vector<double> squared_edt(const std::vector<std::uint8_t>& sites,
                                const Dim3& d, const Spacing& sp) {
  std::vector<double> dist(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i)
    dist[i] = sites[i] ? 0.0 : kInf;

  const int max_n = std::max({d.nx, d.ny, d.nz});
  std::vector<double> line(max_n), out(max_n), zb(max_n + 1);
  std::vector<int> v(max_n);
  auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(d.nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(d.ny) * z);
  };

  // x pass
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) line[x] = dist[idx(x, y, z)];
      dt_1d(line, d.nx, sp.sx, v, zb, out);
      for (int x = 0; x < d.nx; ++x) dist[idx(x, y, z)] = out[x];
    }
  // y pass
  for (int z = 0; z < d.nz; ++z)
    for (int x = 0; x < d.nx; ++x) {
      for (int y = 0; y < d.ny; ++y) line[y] = dist[idx(x, y, z)];
      dt_1d(line, d.ny, sp.sy, v, zb, out);
      for (int y = 0; y < d.ny; ++y) dist[idx(x, y, z)] = out[y];
    }
  // z pass
  for (int y = 0; y < d.ny; ++y)
    for (int x = 0; x < d.nx; ++x) {
      for (int z = 0; z < d.nz; ++z) line[z] = dist[idx(x, y, z)];
      dt_1d(line, d.nz, sp.sz, v, zb, out);
      for (int z = 0; z < d.nz; ++z) dist[idx(x, y, z)] = out[z];
    }
  return dist;
}

// Nearest-rank percentile of an unsorted pool.
double pool_percentile(std::vector<double> pool, double percentile) {
  std::sort(pool.begin(), pool.end());
  const auto n = pool.size();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return pool[rank - 1];
}

}  // namespace

double hausdorff(const BinaryMask& g, const BinaryMask& p, double percentile) {
  require_same_dims(g.dim(), p.dim(), "hausdorff");
  if (!(g.spacing() == p.spacing()))
    throw Error(Errc::dim_mismatch, "hausdorff: spacing mismatch");
  if (percentile <= 0.0 || percentile > 100.0)
    throw Error(Errc::invalid_argument,
                "hausdorff: percentile must be in (0, 100]");
  if (g.count_true() == 0 || p.count_true() == 0)
    throw Error(Errc::invalid_argument,
                "hausdorff: undefined for an empty mask");

  const auto bg = boundary_voxels(g);
  const auto bp = boundary_voxels(p);
  const auto dist_to_p = squared_edt(bp, g.dim(), g.spacing());
  const auto dist_to_g = squared_edt(bg, g.dim(), g.spacing());

  std::vector<double> pool_gp, pool_pg;
  for (std::size_t i = 0; i < bg.size(); ++i) {
    if (bg[i]) pool_gp.push_back(std::sqrt(dist_to_p[i]));
    if (bp[i]) pool_pg.push_back(std::sqrt(dist_to_g[i]));
  }
  return std::max(pool_percentile(std::move(pool_gp), percentile),
                  pool_percentile(std::move(pool_pg), percentile));
}

// Uncertainty protocols ------------------------------------------------------

std::optional<double> mean_foreground_entropy(const ProbMap& y, double t) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > t) {
      sum += binary_entropy(y[i]);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw Error(Errc::invalid_argument, "pearson_r: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2)
    throw Error(Errc::invalid_argument, "pearson_r: need at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0))
    throw Error(Errc::numeric, "pearson_r: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// U for the subset of pooled values flagged by `in_a`, by pair counting.
double u_by_pairs(const std::vector<double>& pooled,
                  const std::vector<std::uint8_t>& in_a) {
  double u = 0.0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (!in_a[i]) continue;
    for (std::size_t j = 0; j < pooled.size(); ++j) {
      if (in_a[j]) continue;
      if (pooled[i] > pooled[j]) u += 1.0;
      else if (pooled[i] == pooled[j]) u += 0.5;
    }
  }
  return u;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Exact two-sided p: share of group assignments whose U deviates from the
// null mean at least as much as observed. Enumerates all C(n, na) subsets
// of pooled indices with a revolving-door successor.
double exact_permutation_p(const std::vector<double>& pooled, std::size_t na,
                           double u_obs) {
  const std::size_t n = pooled.size();
  const double mu = static_cast<double>(na) * (n - na) / 2.0;
  const double dev = std::abs(u_obs - mu) - 1e-12;

  std::vector<std::size_t> comb(na);
  std::iota(comb.begin(), comb.end(), 0);
  std::vector<std::uint8_t> in_a(n, 0);
  std::size_t total = 0, hits = 0;
  for (;;) {
    std::fill(in_a.begin(), in_a.end(), 0);
    for (auto c : comb) in_a[c] = 1;
    if (std::abs(u_by_pairs(pooled, in_a) - mu) >= dev) ++hits;
    ++total;
    // next combination in lexicographic order
    std::size_t i = na;
    while (i > 0 && comb[i - 1] == n - na + i - 1) --i;
    if (i == 0) break;
    ++comb[i - 1];
    for (std::size_t j = i; j < na; ++j) comb[j] = comb[j - 1] + 1;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.empty() || b.empty())
    throw Error(Errc::invalid_argument, "mann_whitney_u: empty group");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;

  // Midranks over the pooled sample.
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(n);
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });

  double rank_sum_a = 0.0;
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second == 0) rank_sum_a += midrank;
    tie_term += t * t * t - t;
    i = j;
  }
  const double u = rank_sum_a - static_cast<double>(na) * (na + 1) / 2.0;

  MannWhitneyResult res;
  res.u = u;

  // Exact permutation distribution when the enumeration is small; the
  // normal approximation deviates too much from exact for tiny groups.
  if (n <= 14) {
    std::vector<double> values(n);
    for (std::size_t k = 0; k < n; ++k) values[k] = pooled[k].first;
    res.p_two_sided = exact_permutation_p(values, na, u);
    return res;
  }

  const double mu = static_cast<double>(na) * nb / 2.0;
  const double var =
      (static_cast<double>(na) * nb / 12.0) *
      (static_cast<double>(n + 1) -
       tie_term / (static_cast<double>(n) * (n - 1)));
  if (!(var > 0.0)) {
    res.p_two_sided = 1.0;  // all pooled values identical
    return res;
  }
  double dev = std::abs(u - mu) - 0.5;  // continuity correction
  if (dev < 0.0) dev = 0.0;
  const double z = dev / std::sqrt(var);
  res.p_two_sided = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
  return res;
}

// Outcome analysis ------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
  if (values.empty())
    throw Error(Errc::invalid_argument, "quantile: empty input");
  if (q < 0.0 || q > 1.0)
    throw Error(Errc::invalid_argument, "quantile: q outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

OutcomeBreakdown confusion_outcomes(const ProbMap& y, const BinaryMask& gt,
                                    double t) {
  require_same_dims(y.dim(), gt.dim(), "confusion_outcomes");
  const Volume h = entropy_map(y);
  std::array<std::vector<double>, 4> per_class;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pred = y[i] > t;
    const bool truth = gt[i];
    Outcome o = pred ? (truth ? Outcome::tp : Outcome::fp)
                     : (truth ? Outcome::fn : Outcome::tn);
    per_class[static_cast<int>(o)].push_back(h[i]);
  }
  OutcomeBreakdown out;
  for (int c = 0; c < 4; ++c) {
    out.counts[c] = per_class[c].size();
    if (!per_class[c].empty())
      out.entropy[c] = EntropyStats{quantile(per_class[c], 0.5),
                                    quantile(per_class[c], 0.25),
                                    quantile(per_class[c], 0.75)};
  }
  return out;
}

std::array<std::vector<ScanReport>, 3> stratify_by_lesion_load(
    const std::vector<ScanReport>& reports, double lo_ml, double hi_ml) {
  std::array<std::vector<ScanReport>, 3> groups;
  for (const auto& r : reports) {
    if (r.lesion_load_ml < lo_ml) groups[0].push_back(r);
    else if (r.lesion_load_ml <= hi_ml) groups[1].push_back(r);
    else groups[2].push_back(r);
  }
  return groups;
}

const char* to_string(EceConvention c) {
  return c == EceConvention::positive_prob ? "positive_prob" : "max_prob";
}

}  // namespace meseg
