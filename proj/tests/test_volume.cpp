#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "doctest.h"
#include "meseg/volume.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using meseg::BinaryMask;
using meseg::Dim3;
using meseg::Errc;
using meseg::LabelMap;
using meseg::ProbMap;
using meseg::Spacing;
using meseg::Volume;
using testutil::thrown_code;

TEST_SUITE("volume") {

TEST_CASE("Dim3 voxel count and Spacing voxel volume") {
  CHECK(Dim3{4, 5, 6}.voxels() == 120);
  CHECK(Dim3{1, 1, 1}.voxels() == 1);
  CHECK(Spacing{1.0, 1.0, 3.0}.voxel_volume_mm3() == 3.0);
  CHECK(Spacing{0.5, 0.5, 2.0}.voxel_volume_mm3() == 0.5);
}

TEST_CASE("Volume stores x-fastest and indexes consistently") {
  const Dim3 d{3, 4, 2};
  std::vector<double> data(d.voxels());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(i);
  Volume v(d, {}, data);
  CHECK(v.size() == 24);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::size_t i = static_cast<std::size_t>(x) +
                              3u * (static_cast<std::size_t>(y) + 4u * z);
        CHECK(v.index(x, y, z) == i);
        CHECK(v.at(x, y, z) == data[i]);
        CHECK(v[i] == data[i]);
      }
}

TEST_CASE("grid validation rejects bad dims, spacing and lengths") {
  std::vector<double> one{0.0};
  CHECK(thrown_code([&] { Volume({0, 1, 1}, {}, one); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { Volume({1, -2, 1}, {}, one); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { Volume({1, 1, 1}, {0.0, 1.0, 1.0}, one); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { Volume({1, 1, 1}, {1.0, -1.0, 1.0}, one); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] {
          Volume({1, 1, 1}, {1.0, 1.0, std::numeric_limits<double>::quiet_NaN()},
                 one);
        }) == Errc::invalid_argument);
  CHECK(thrown_code([&] { Volume({2, 1, 1}, {}, one); }) ==
        Errc::invalid_argument);
  CHECK_THROWS_WITH_AS(Volume({2, 1, 1}, {}, one),
                       "Volume: data length does not match dims", meseg::Error);
}

TEST_CASE("Volume rejects non-finite values") {
  CHECK(thrown_code([&] {
          Volume({2, 1, 1}, {},
                 {1.0, std::numeric_limits<double>::infinity()});
        }) == Errc::numeric);
  CHECK(thrown_code([&] {
          Volume({2, 1, 1}, {},
                 {std::numeric_limits<double>::quiet_NaN(), 0.0});
        }) == Errc::numeric);
  CHECK_THROWS_WITH_AS(
      Volume({1, 1, 1}, {}, {std::numeric_limits<double>::infinity()}),
      "Volume: non-finite value", meseg::Error);
}

TEST_CASE("ProbMap accepts [0,1] inclusive and rejects outside") {
  CHECK_NOTHROW(ProbMap({3, 1, 1}, {}, {0.0, 0.5, 1.0}));
  CHECK(thrown_code([&] { ProbMap({1, 1, 1}, {}, {1.0000001}); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { ProbMap({1, 1, 1}, {}, {-0.0000001}); }) ==
        Errc::invalid_argument);
}

TEST_CASE("BinaryMask normalizes arbitrary bytes to 0/1") {
  BinaryMask m({4, 1, 1}, {}, {0, 1, 2, 255});
  CHECK(m.data() == std::vector<std::uint8_t>{0, 1, 1, 1});
  CHECK(m.count_true() == 3);
  CHECK_FALSE(m[0]);
  CHECK(m[3]);
}

TEST_CASE("LabelMap validates the label range") {
  CHECK_NOTHROW(LabelMap({3, 1, 1}, {}, {0, 1, 2}, 2));
  CHECK(thrown_code([&] { LabelMap({2, 1, 1}, {}, {0, 3}, 2); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { LabelMap({2, 1, 1}, {}, {-1, 0}, 2); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { LabelMap({1, 1, 1}, {}, {0}, -1); }) ==
        Errc::invalid_argument);
}

TEST_CASE("require_same_dims throws dim_mismatch with the call site prefix") {
  CHECK_NOTHROW(meseg::require_same_dims({2, 3, 4}, {2, 3, 4}, "here"));
  CHECK(thrown_code([&] {
          meseg::require_same_dims({2, 3, 4}, {2, 3, 5}, "here");
        }) == Errc::dim_mismatch);
  CHECK_THROWS_WITH_AS(meseg::require_same_dims({1, 1, 1}, {2, 1, 1}, "caller"),
                       "caller: dim mismatch", meseg::Error);
}

TEST_CASE("threshold is strict: a voxel exactly at t stays background") {
  ProbMap p({4, 1, 1}, {}, {0.0, 0.5, 0.5000001, 1.0});
  BinaryMask m = meseg::threshold(p, 0.5);
  CHECK(m.data() == std::vector<std::uint8_t>{0, 0, 1, 1});
  CHECK(thrown_code([&] { meseg::threshold(p, -0.1); }) ==
        Errc::invalid_argument);
  CHECK(thrown_code([&] { meseg::threshold(p, 1.1); }) ==
        Errc::invalid_argument);
  // Extremes of the valid range.
  CHECK(meseg::threshold(p, 0.0).count_true() == 3);
  CHECK(meseg::threshold(p, 1.0).count_true() == 0);
}

TEST_CASE("zscore of {1,2,3} hits the closed form") {
  Volume v({3, 1, 1}, {}, {1.0, 2.0, 3.0});
  Volume z = meseg::zscore_normalize(v);
  // Population sd of {1,2,3} is sqrt(2/3).
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(z[0] == doctest::Approx(-1.0 / s).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  CHECK(z[2] == doctest::Approx(1.0 / s).epsilon(1e-15));
}

TEST_CASE("zscore output has zero mean and unit population variance") {
  testutil::TestRng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Dim3 d = rng.small_dim(6);
    if (d.voxels() < 2) continue;
    Volume v = rng.random_volume(d, -5.0, 5.0);
    Volume z = meseg::zscore_normalize(v);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      sum += z[i];
      sumsq += z[i] * z[i];
    }
    const double n = static_cast<double>(z.size());
    CHECK(std::abs(sum / n) < 1e-9);
    CHECK(sumsq / n == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("zscore over a region uses only region statistics") {
  Volume v({4, 1, 1}, {}, {1.0, 2.0, 3.0, 100.0});
  BinaryMask region({4, 1, 1}, {}, {1, 1, 1, 0});
  Volume z = meseg::zscore_normalize(v, region);
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(z[0] == doctest::Approx(-1.0 / s).epsilon(1e-15));
  CHECK(z[3] == doctest::Approx(98.0 / s).epsilon(1e-12));
}

TEST_CASE("zscore failure modes") {
  Volume v({3, 1, 1}, {}, {1.0, 2.0, 3.0});
  BinaryMask tiny({3, 1, 1}, {}, {1, 0, 0});
  CHECK(thrown_code([&] { meseg::zscore_normalize(v, tiny); }) ==
        Errc::invalid_argument);
  Volume flat({3, 1, 1}, {}, {4.0, 4.0, 4.0});
  CHECK(thrown_code([&] { meseg::zscore_normalize(flat); }) == Errc::numeric);
  Volume one({1, 1, 1}, {}, {1.0});
  CHECK(thrown_code([&] { meseg::zscore_normalize(one); }) ==
        Errc::invalid_argument);
  BinaryMask wrong({4, 1, 1}, {}, {1, 1, 1, 1});
  CHECK(thrown_code([&] { meseg::zscore_normalize(Volume({4, 1, 1}, {}, {1, 2, 3, 4}),
                                                  wrong); }) == std::nullopt);
  CHECK(thrown_code([&] { meseg::zscore_normalize(v, wrong); }) ==
        Errc::dim_mismatch);
}

TEST_CASE("connected_components rejects unknown connectivity") {
  BinaryMask m({1, 1, 1}, {}, {1});
  for (int c : {0, 1, 4, 8, 27, -6}) {
    CHECK(thrown_code([&] { meseg::connected_components(m, c); }) ==
          Errc::invalid_argument);
  }
}

TEST_CASE("two voxels touching only at a corner: 26 joins, 18 and 6 do not") {
  const Dim3 d{2, 2, 2};
  std::vector<std::uint8_t> data(d.voxels(), 0);
  BinaryMask probe(d, {}, data);
  data[probe.index(0, 0, 0)] = 1;
  data[probe.index(1, 1, 1)] = 1;  // L1 distance 3 from the first
  BinaryMask m(d, {}, data);
  CHECK(meseg::connected_components(m, 26).num_labels() == 1);
  CHECK(meseg::connected_components(m, 18).num_labels() == 2);
  CHECK(meseg::connected_components(m, 6).num_labels() == 2);
}

TEST_CASE("two voxels sharing an edge: 18 joins, 6 does not") {
  const Dim3 d{2, 2, 1};
  std::vector<std::uint8_t> data(d.voxels(), 0);
  BinaryMask probe(d, {}, data);
  data[probe.index(0, 0, 0)] = 1;
  data[probe.index(1, 1, 0)] = 1;  // L1 distance 2
  BinaryMask m(d, {}, data);
  CHECK(meseg::connected_components(m, 26).num_labels() == 1);
  CHECK(meseg::connected_components(m, 18).num_labels() == 1);
  CHECK(meseg::connected_components(m, 6).num_labels() == 2);
}

TEST_CASE("connected_components matches BFS flood fill label-for-label") {
  testutil::TestRng rng(77);
  for (int rep = 0; rep < 60; ++rep) {
    const Dim3 d = rng.small_dim(6);
    BinaryMask m = rng.random_mask(d, rng.uniform(0.2, 0.7));
    for (int conn : {6, 18, 26}) {
      LabelMap got = meseg::connected_components(m, conn);
      auto [want, count] = oracle::flood_fill_components(m, conn);
      CHECK(got.num_labels() == count);
      CHECK(got.data() == want);
    }
  }
}

TEST_CASE("all-background and all-foreground masks") {
  const Dim3 d{3, 3, 3};
  BinaryMask bg(d, {}, std::vector<std::uint8_t>(d.voxels(), 0));
  LabelMap lbg = meseg::connected_components(bg);
  CHECK(lbg.num_labels() == 0);
  CHECK(meseg::component_volumes_ml(lbg).empty());

  BinaryMask fg(d, {}, std::vector<std::uint8_t>(d.voxels(), 1));
  for (int conn : {6, 18, 26})
    CHECK(meseg::connected_components(fg, conn).num_labels() == 1);
}

TEST_CASE("component labels follow scan order of first voxels") {
  // Two separated bars along x: the one whose first voxel scans earlier
  // must get label 1.
  const Dim3 d{5, 3, 1};
  std::vector<std::uint8_t> data(d.voxels(), 0);
  BinaryMask probe(d, {}, data);
  data[probe.index(3, 0, 0)] = 1;  // scan index 3 -> label 1
  data[probe.index(4, 0, 0)] = 1;
  data[probe.index(0, 2, 0)] = 1;  // later scanline -> label 2
  BinaryMask m(d, {}, data);
  LabelMap lm = meseg::connected_components(m, 6);
  REQUIRE(lm.num_labels() == 2);
  CHECK(lm[m.index(3, 0, 0)] == 1);
  CHECK(lm[m.index(4, 0, 0)] == 1);
  CHECK(lm[m.index(0, 2, 0)] == 2);
}

TEST_CASE("component_volumes_ml converts voxel counts via spacing") {
  // 5000 voxels at 1 x 1 x 3 mm = 15000 mm^3 = 15 mL.
  const Dim3 d{50, 100, 1};
  BinaryMask m(d, {1.0, 1.0, 3.0}, std::vector<std::uint8_t>(d.voxels(), 1));
  LabelMap lm = meseg::connected_components(m);
  auto vols = meseg::component_volumes_ml(lm);
  REQUIRE(vols.size() == 1);
  CHECK(vols[0].first == 1);
  CHECK(vols[0].second == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("component volumes partition the foreground") {
  testutil::TestRng rng(5150);
  for (int rep = 0; rep < 20; ++rep) {
    const Dim3 d = rng.small_dim(6);
    const Spacing sp = rng.random_spacing();
    BinaryMask m = rng.random_mask(d, 0.5, sp);
    LabelMap lm = meseg::connected_components(m, 26);
    auto vols = meseg::component_volumes_ml(lm);
    CHECK(static_cast<int>(vols.size()) == lm.num_labels());
    double total = 0.0;
    for (std::size_t k = 0; k < vols.size(); ++k) {
      CHECK(vols[k].first == static_cast<int>(k) + 1);
      CHECK(vols[k].second > 0.0);
      total += vols[k].second;
    }
    const double want =
        static_cast<double>(m.count_true()) * sp.voxel_volume_mm3() / 1000.0;
    CHECK(total == doctest::Approx(want).epsilon(1e-12));
  }
}

}  // TEST_SUITE
