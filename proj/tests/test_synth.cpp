#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "doctest.h"
#include "meseg/rng.hpp"
#include "meseg/synth.hpp"
#include "meseg/volume.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using meseg::BinaryMask;
using meseg::Dim3;
using meseg::Errc;
using meseg::ShiftParams;
using meseg::SynthConfig;
using meseg::SynthSample;
using meseg::Volume;
using testutil::thrown_code;

namespace {

SynthConfig flat_config() {
  SynthConfig cfg;
  cfg.dim = {24, 20, 1};
  cfg.spacing = {2.0, 2.0, 2.0};
  cfg.min_lesions = 1;
  cfg.max_lesions = 3;
  cfg.min_radius = 2.0;
  cfg.max_radius = 4.0;
  cfg.noise_sigma = 0.0;
  cfg.blur_sigma = 0.0;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("SynthConfig::validate rejection matrix") {
  auto bad = [](auto mutate) {
    SynthConfig cfg = flat_config();
    mutate(cfg);
    return thrown_code([&] { cfg.validate(); });
  };
  CHECK_NOTHROW(flat_config().validate());
  CHECK(bad([](SynthConfig& c) { c.dim.nx = 0; }) == Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.dim.nz = -1; }) == Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.spacing.sy = 0.0; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.min_lesions = -1; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.max_lesions = c.min_lesions - 1; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.min_radius = 0.0; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.max_radius = c.min_radius - 1.0; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.noise_sigma = -0.1; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) { c.blur_sigma = -0.1; }) ==
        Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) {
          c.noise_sigma = std::numeric_limits<double>::quiet_NaN();
        }) == Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) {
          c.fg_mean = std::numeric_limits<double>::infinity();
        }) == Errc::invalid_argument);
  CHECK(bad([](SynthConfig& c) {
          c.bg_mean = std::numeric_limits<double>::quiet_NaN();
        }) == Errc::invalid_argument);
}

TEST_CASE("validate rejects radii that cannot fit the grid") {
  SynthConfig cfg = flat_config();
  // 2 * max_radius must fit within nx-1 and ny-1.
  cfg.dim = {9, 24, 1};
  cfg.max_radius = 4.0;
  CHECK_NOTHROW(cfg.validate());  // 8 <= 8
  cfg.max_radius = 4.1;
  CHECK(thrown_code([&] { cfg.validate(); }) == Errc::invalid_argument);

  // A single-slice grid exempts the z axis.
  cfg = flat_config();
  cfg.dim = {24, 24, 1};
  cfg.max_radius = 4.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.dim = {24, 24, 5};  // now 2r = 8 > nz-1 = 4
  CHECK(thrown_code([&] { cfg.validate(); }) == Errc::invalid_argument);
  cfg.dim = {24, 24, 9};
  CHECK_NOTHROW(cfg.validate());

  // With zero lesions the radius is never used.
  cfg = flat_config();
  cfg.dim = {5, 5, 1};
  cfg.min_lesions = 0;
  cfg.max_lesions = 0;
  cfg.max_radius = 50.0;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("ShiftParams::validate and is_identity") {
  ShiftParams s;
  CHECK_NOTHROW(s.validate());
  CHECK(s.is_identity());

  auto bad = [](auto mutate) {
    ShiftParams p;
    mutate(p);
    return thrown_code([&] { p.validate(); });
  };
  CHECK(bad([](ShiftParams& p) { p.gain = 0.0; }) == Errc::invalid_argument);
  CHECK(bad([](ShiftParams& p) { p.gain = -1.0; }) == Errc::invalid_argument);
  CHECK(bad([](ShiftParams& p) { p.gamma = 0.0; }) == Errc::invalid_argument);
  CHECK(bad([](ShiftParams& p) { p.noise_sigma = -0.01; }) ==
        Errc::invalid_argument);
  CHECK(bad([](ShiftParams& p) { p.blur_delta = -0.01; }) ==
        Errc::invalid_argument);
  CHECK(bad([](ShiftParams& p) {
          p.offset = std::numeric_limits<double>::infinity();
        }) == Errc::invalid_argument);

  for (auto mutate : {+[](ShiftParams& p) { p.gain = 1.1; },
                      +[](ShiftParams& p) { p.offset = 0.1; },
                      +[](ShiftParams& p) { p.gamma = 0.9; },
                      +[](ShiftParams& p) { p.noise_sigma = 0.01; },
                      +[](ShiftParams& p) { p.blur_delta = 0.5; }}) {
    ShiftParams p;
    mutate(p);
    CHECK_FALSE(p.is_identity());
  }
}

TEST_CASE("ood_preset carries the fixed recipe") {
  const ShiftParams s = ShiftParams::ood_preset();
  CHECK(s.gain == 1.3);
  CHECK(s.offset == 0.1);
  CHECK(s.gamma == 0.8);
  CHECK(s.noise_sigma == 0.05);
  CHECK(s.blur_delta == 0.0);
  CHECK_FALSE(s.is_identity());
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("generation is deterministic per (seed, index)") {
  const SynthConfig cfg = flat_config();
  for (std::uint64_t idx : {0ULL, 1ULL, 9ULL}) {
    SynthSample a = meseg::synth_generate_one(cfg, idx);
    SynthSample b = meseg::synth_generate_one(cfg, idx);
    CHECK(a.image.data() == b.image.data());
    CHECK(a.mask.data() == b.mask.data());
  }
}

TEST_CASE("batch generation equals per-index generation") {
  const SynthConfig cfg = flat_config();
  auto batch = meseg::synth_generate(cfg, 4);
  REQUIRE(batch.size() == 4);
  for (std::uint64_t i = 0; i < 4; ++i) {
    SynthSample one = meseg::synth_generate_one(cfg, i);
    CHECK(batch[i].image.data() == one.image.data());
    CHECK(batch[i].mask.data() == one.mask.data());
  }
  CHECK(thrown_code([&] { meseg::synth_generate(cfg, 0); }) ==
        Errc::invalid_argument);
}

TEST_CASE("different indices and different seeds give different samples") {
  SynthConfig cfg = flat_config();
  SynthSample a = meseg::synth_generate_one(cfg, 0);
  SynthSample b = meseg::synth_generate_one(cfg, 1);
  CHECK(a.mask.data() != b.mask.data());
  cfg.seed = 8;
  SynthSample c = meseg::synth_generate_one(cfg, 0);
  CHECK(a.mask.data() != c.mask.data());
}

TEST_CASE("a clean sample paints exactly two intensity levels") {
  const SynthConfig cfg = flat_config();  // no blur, no noise
  for (std::uint64_t idx = 0; idx < 6; ++idx) {
    SynthSample s = meseg::synth_generate_one(cfg, idx);
    REQUIRE(s.image.size() == s.mask.size());
    CHECK(s.mask.count_true() > 0);
    for (std::size_t i = 0; i < s.image.size(); ++i)
      CHECK(s.image[i] == (s.mask[i] ? cfg.fg_mean : cfg.bg_mean));
    CHECK(s.image.spacing() == cfg.spacing);
    CHECK(s.mask.spacing() == cfg.spacing);
  }
}

TEST_CASE("lesion count equals the connected component count when pinned") {
  SynthConfig cfg = flat_config();
  cfg.min_lesions = 3;
  cfg.max_lesions = 3;
  for (std::uint64_t idx = 0; idx < 8; ++idx) {
    SynthSample s = meseg::synth_generate_one(cfg, idx);
    CHECK(meseg::connected_components(s.mask, 26).num_labels() == 3);
  }
}

TEST_CASE("lesion count stays within the configured range") {
  SynthConfig cfg = flat_config();
  cfg.min_lesions = 1;
  cfg.max_lesions = 3;
  bool saw_low = false, saw_high = false;
  for (std::uint64_t idx = 0; idx < 24; ++idx) {
    SynthSample s = meseg::synth_generate_one(cfg, idx);
    const int n = meseg::connected_components(s.mask, 26).num_labels();
    CHECK(n >= 1);
    CHECK(n <= 3);
    saw_low = saw_low || n == 1;
    saw_high = saw_high || n == 3;
  }
  // The range is actually explored.
  CHECK(saw_low);
  CHECK(saw_high);
}

TEST_CASE("3D generation fills ellipsoids inside the volume") {
  SynthConfig cfg;
  cfg.dim = {15, 15, 15};
  cfg.spacing = {1.0, 1.0, 1.0};
  cfg.min_lesions = 2;
  cfg.max_lesions = 2;
  cfg.min_radius = 2.0;
  cfg.max_radius = 3.0;
  cfg.noise_sigma = 0.0;
  cfg.seed = 5;
  SynthSample s = meseg::synth_generate_one(cfg, 0);
  CHECK(meseg::connected_components(s.mask, 26).num_labels() == 2);
  // Some lesion voxel off the z=0 slice proves the z axis participates.
  bool off_slice = false;
  for (int z = 1; z < cfg.dim.nz && !off_slice; ++z)
    for (int y = 0; y < cfg.dim.ny && !off_slice; ++y)
      for (int x = 0; x < cfg.dim.nx; ++x)
        if (s.mask.at(x, y, z)) {
          off_slice = true;
          break;
        }
  CHECK(off_slice);
}

TEST_CASE("draw order is radii, then center fractions, then noise") {
  SynthConfig cfg;
  cfg.dim = {21, 17, 1};
  cfg.spacing = {1.0, 1.0, 1.0};
  cfg.min_lesions = 1;
  cfg.max_lesions = 1;  // equal bounds: no count draw
  cfg.min_radius = 3.0;
  cfg.max_radius = 3.0;  // radius draws still consumed, all exactly 3
  cfg.fg_mean = 0.8;
  cfg.bg_mean = 0.2;
  cfg.noise_sigma = 0.0;
  cfg.seed = 99;

  for (std::uint64_t idx : {0ULL, 3ULL}) {
    SynthSample s = meseg::synth_generate_one(cfg, idx);

    meseg::Rng rng = meseg::Rng::substream(cfg.seed, idx);
    const double rx = rng.uniform(3.0, 3.0);
    const double ry = rng.uniform(3.0, 3.0);
    const double rz = rng.uniform(3.0, 3.0);
    (void)rz;
    const double ux = rng.uniform01();
    const double uy = rng.uniform01();
    const double uz = rng.uniform01();
    (void)uz;  // drawn even for flat grids
    const double cx = rx + (21 - 1 - 2.0 * rx) * ux;
    const double cy = ry + (17 - 1 - 2.0 * ry) * uy;

    std::vector<std::uint8_t> want(cfg.dim.voxels(), 0);
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 21; ++x) {
        const double q = ((x - cx) / 3.0) * ((x - cx) / 3.0) +
                         ((y - cy) / 3.0) * ((y - cy) / 3.0);
        if (q <= 1.0) want[static_cast<std::size_t>(x) + 21u * y] = 1;
      }
    CHECK(s.mask.data() == want);

    // The noise stream continues from the placement stream.
    SynthConfig noisy = cfg;
    noisy.noise_sigma = 0.07;
    SynthSample sn = meseg::synth_generate_one(noisy, idx);
    for (std::size_t i = 0; i < sn.image.size(); ++i) {
      const double base = want[i] ? 0.8 : 0.2;
      CHECK(sn.image[i] == base + 0.07 * rng.normal());
    }
  }
}

TEST_CASE("blur in the config smooths the painted image deterministically") {
  SynthConfig clean = flat_config();
  SynthConfig blurred = clean;
  blurred.blur_sigma = 1.5;
  for (std::uint64_t idx : {0ULL, 2ULL}) {
    SynthSample a = meseg::synth_generate_one(clean, idx);
    SynthSample b = meseg::synth_generate_one(blurred, idx);
    // Same placement stream: identical masks, image blurred after painting.
    CHECK(a.mask.data() == b.mask.data());
    CHECK(b.image.data() == meseg::gaussian_blur(a.image, 1.5).data());
  }
}

TEST_CASE("impossible placement reports which lesion failed") {
  SynthConfig cfg;
  cfg.dim = {9, 9, 1};
  cfg.min_lesions = 2;
  cfg.max_lesions = 2;
  cfg.min_radius = 4.0;
  cfg.max_radius = 4.0;  // center is pinned to (4,4): the second always clashes
  cfg.noise_sigma = 0.0;
  CHECK_THROWS_WITH_AS(
      meseg::synth_generate_one(cfg, 0),
      "synth_generate: could not place lesion 2 of 2 without overlap; grid "
      "too crowded for the radius range",
      meseg::Error);
}

TEST_CASE("gaussian_blur with nonpositive sigma is the bit-exact identity") {
  testutil::TestRng rng(71);
  Volume v = rng.random_volume({5, 4, 3}, -2.0, 2.0);
  CHECK(meseg::gaussian_blur(v, 0.0).data() == v.data());
  CHECK(meseg::gaussian_blur(v, -1.0).data() == v.data());
}

TEST_CASE("gaussian_blur preserves power-of-two constants exactly") {
  Volume v({6, 5, 4}, {}, std::vector<double>(120, 0.5));
  Volume b = meseg::gaussian_blur(v, 1.2);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == 0.5);

  Volume w({6, 5, 4}, {}, std::vector<double>(120, 0.37));
  Volume bw = meseg::gaussian_blur(w, 1.2);
  for (std::size_t i = 0; i < bw.size(); ++i)
    CHECK(bw[i] == doctest::Approx(0.37).epsilon(1e-13));
}

TEST_CASE("gaussian_blur matches the reference implementation") {
  testutil::TestRng rng(72);
  for (int rep = 0; rep < 10; ++rep) {
    const Dim3 d{rng.uniform_int(1, 7), rng.uniform_int(1, 7),
                 rng.coin(0.4) ? 1 : rng.uniform_int(2, 7)};
    Volume v = rng.random_volume(d, -1.0, 3.0);
    const double sigma = rng.uniform(0.4, 2.0);
    Volume got = meseg::gaussian_blur(v, sigma);
    Volume want = oracle::blur_ref(v, sigma);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(oracle::rel_err(got[i], want[i], 1e-9) < 1e-12);
  }
}

TEST_CASE("blur keeps values inside the input range") {
  testutil::TestRng rng(73);
  Volume v = rng.random_volume({8, 8, 1}, 0.0, 1.0);
  Volume b = meseg::gaussian_blur(v, 2.5);
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < v.size(); ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK(b[i] >= lo - 1e-12);
    CHECK(b[i] <= hi + 1e-12);
  }
}

TEST_CASE("apply_domain_shift identity returns the input bit-exactly") {
  testutil::TestRng rng(74);
  // Values outside [0,1] included: identity must not clamp.
  Volume v = rng.random_volume({4, 4, 2}, -0.5, 1.5);
  ShiftParams s;
  Volume out = meseg::apply_domain_shift(v, s, 123);
  CHECK(out.data() == v.data());
}

TEST_CASE("affine-only shift clamps to [0,1] and maps linearly") {
  Volume v({4, 1, 1}, {}, {-0.5, 0.0, 0.5, 1.5});
  ShiftParams s;
  s.gain = 2.0;
  s.offset = 1.0;
  Volume out = meseg::apply_domain_shift(v, s, 0);
  CHECK(out.data() == std::vector<double>{1.0, 1.0, 2.0, 3.0});
}

TEST_CASE("gamma-only shift is pow after clamping") {
  Volume v({3, 1, 1}, {}, {0.25, 0.5, 1.0});
  ShiftParams s;
  s.gamma = 0.5;
  Volume out = meseg::apply_domain_shift(v, s, 0);
  CHECK(out[0] == std::pow(0.25, 0.5));
  CHECK(out[1] == std::pow(0.5, 0.5));
  CHECK(out[2] == 1.0);
}

TEST_CASE("noise-only shift adds the seeded normal stream, no clamping") {
  testutil::TestRng trng(75);
  Volume v = trng.random_volume({5, 3, 1}, -1.0, 2.0);
  ShiftParams s;
  s.noise_sigma = 0.2;
  Volume out = meseg::apply_domain_shift(v, s, 4711);
  meseg::Rng rng(4711);
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(out[i] == v[i] + 0.2 * rng.normal());
}

TEST_CASE("blur-only shift equals gaussian_blur") {
  testutil::TestRng rng(76);
  Volume v = rng.random_volume({6, 6, 1}, 0.0, 1.0);
  ShiftParams s;
  s.blur_delta = 1.1;
  CHECK(meseg::apply_domain_shift(v, s, 1).data() ==
        meseg::gaussian_blur(v, 1.1).data());
}

TEST_CASE("seed only matters when the shift draws noise") {
  testutil::TestRng rng(77);
  Volume v = rng.random_volume({4, 4, 1}, 0.0, 1.0);
  ShiftParams quiet;
  quiet.gamma = 0.8;
  CHECK(meseg::apply_domain_shift(v, quiet, 1).data() ==
        meseg::apply_domain_shift(v, quiet, 2).data());

  ShiftParams noisy = quiet;
  noisy.noise_sigma = 0.05;
  CHECK(meseg::apply_domain_shift(v, noisy, 1).data() !=
        meseg::apply_domain_shift(v, noisy, 2).data());
  CHECK(meseg::apply_domain_shift(v, noisy, 1).data() ==
        meseg::apply_domain_shift(v, noisy, 1).data());
}

TEST_CASE("full preset shift composes all stages in order") {
  testutil::TestRng trng(78);
  Volume v = trng.random_volume({5, 5, 1}, 0.0, 1.0);
  const ShiftParams s = ShiftParams::ood_preset();
  Volume got = meseg::apply_domain_shift(v, s, 31);

  std::vector<double> want = v.data();
  for (auto& x : want) x = 1.3 * std::pow(std::clamp(x, 0.0, 1.0), 0.8) + 0.1;
  meseg::Rng rng(31);
  for (auto& x : want) x += 0.05 * rng.normal();
  CHECK(got.data() == want);
}

}  // TEST_SUITE
