#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adreg/vol_io.hpp"
#include "adreg/volume_ops.hpp"
#include "support.hpp"

using namespace adreg;
namespace fs = std::filesystem;

TEST_CASE("normalize_intensity: degenerate input") {
  Volume v(Grid3::isotropic(2, 1.0));
  for (double& x : v.values) x = 1.0;
  CHECK_THROWS_WITH_AS(normalize_intensity(v), doctest::Contains("degenerate"),
                       std::runtime_error);
}

TEST_CASE("normalize_intensity: two-point standardization") {
  Volume v(Grid3({2, 2, 2}, {1, 1, 1}));
  // half zeros, half twos -> mean 1, population var 1
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = i % 2 ? 2.0 : 0.0;
  const Volume out = normalize_intensity(v);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    CHECK(out.values[i] == doctest::Approx(i % 2 ? 1.0 : -1.0).epsilon(1e-12));
}

TEST_CASE("normalize_intensity: random volume re-checked with direct moments") {
  const Volume v = test::random_volume(Grid3::isotropic(16, 1.0), 42, -3.0, 7.0);
  const Volume out = normalize_intensity(v);
  // independent oracle: recompute the moments
  double mean = 0;
  for (double x : out.values) mean += x;
  mean /= double(out.values.size());
  double var = 0;
  for (double x : out.values) var += (x - mean) * (x - mean);
  var /= double(out.values.size());
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("resample_isotropic: identity is bit-exact") {
  const Volume v = test::random_volume(Grid3::isotropic(8, 1.5, {0.3, -2.0, 1.1}), 3);
  const Volume out = resample_isotropic(v, 1.5);
  CHECK(out.grid == v.grid);
  CHECK(out.values == v.values);
}

TEST_CASE("resample_isotropic: 4^3 at 2mm -> 8^3 at 1mm, midpoint average") {
  Volume v(Grid3::isotropic(4, 2.0));
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) v.at(x, y, z) = double(x);
  const Volume out = resample_isotropic(v, 1.0);
  CHECK(out.grid.shape == std::array<std::int64_t, 3>{8, 8, 8});
  CHECK(out.grid.spacing == std::array<double, 3>{1.0, 1.0, 1.0});
  // new center baked halfway between two old centers along x samples their mean
  // old centers at x = 0,2,4,6; new at -0.5, 0.5, ..., 6.5
  // new index 3 -> x = 2.5 -> between old values 1 and 2
  CHECK(out.at(3, 2, 2) == doctest::Approx(1.25).epsilon(1e-12));  // (1+1.5)/2 of ramp/2mm
}

TEST_CASE("resample_isotropic: trilinear reproduces a linear ramp (interior)") {
  const Grid3 g = Grid3::isotropic(8, 1.0);
  Volume ramp(g);
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) {
        const auto w = g.world(x, y, z);
        ramp.at(x, y, z) = 2.0 * w[0] - 0.5 * w[1] + 0.25 * w[2] + 1.0;
      }
  const Volume down = resample_isotropic(ramp, 2.0);
  const Volume up = resample_isotropic(down, 1.0);
  // trilinear interpolation (not extrapolation) is exact on linear fields:
  // compare where the up-sampled centers lie inside the down-sampled center
  // hull (one coarse voxel in from the border)
  const auto lo = down.grid.origin;
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) {
        const auto w = up.grid.world(x, y, z);
        bool interior = true;
        for (int a = 0; a < 3; ++a) {
          const double last =
              lo[std::size_t(a)] + 2.0 * double(down.grid.shape[std::size_t(a)] - 1);
          if (w[std::size_t(a)] < lo[std::size_t(a)] || w[std::size_t(a)] > last) interior = false;
        }
        if (!interior) continue;
        const double expect = 2.0 * w[0] - 0.5 * w[1] + 0.25 * w[2] + 1.0;
        CHECK(up.at(x, y, z) == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("resample_isotropic: target spacing beyond extent errors") {
  const Volume v = test::random_volume(Grid3::isotropic(4, 1.0), 5);
  CHECK_THROWS_AS(resample_isotropic(v, 100.0), std::invalid_argument);
}

TEST_CASE("gaussian_filter3: sigma 0 is a bit-exact identity") {
  const Volume v = test::random_volume(Grid3::isotropic(6, 2.0), 9);
  const Volume out = gaussian_filter3(v, 0.0);
  CHECK(out.values == v.values);
}

TEST_CASE("gaussian_filter3: negative sigma errors") {
  const Volume v = test::random_volume(Grid3::isotropic(6, 2.0), 9);
  CHECK_THROWS_AS(gaussian_filter3(v, -1.0), std::invalid_argument);
}

TEST_CASE("gaussian_filter3: impulse response matches explicit kernel tabulation") {
  const Grid3 g = Grid3::isotropic(9, 1.0);
  Volume v(g);
  v.at(4, 4, 4) = 1.0;
  const double sigma = 1.0;  // = 1 voxel
  const Volume out = gaussian_filter3(v, sigma);

  // oracle: tabulate the normalized 1D kernel directly
  const std::int64_t r = std::int64_t(std::ceil(3.0 * sigma / 1.0));
  std::vector<double> k(std::size_t(2 * r + 1));
  double s = 0;
  for (std::int64_t i = -r; i <= r; ++i) {
    k[std::size_t(i + r)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    s += k[std::size_t(i + r)];
  }
  for (double& w : k) w /= s;
  CHECK(out.at(4, 4, 4) == doctest::Approx(k[std::size_t(r)] * k[std::size_t(r)] * k[std::size_t(r)]).epsilon(1e-12));

  double total = 0;
  for (double x : out.values) total += x;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gaussian_filter3: constant field unchanged in the unpadded interior") {
  const Grid3 g = Grid3::isotropic(16, 1.0);
  Volume v(g);
  for (double& x : v.values) x = 3.25;
  const double sigma = 1.0;
  const Volume out = gaussian_filter3(v, sigma);
  const std::int64_t r = std::int64_t(std::ceil(3.0 * sigma));
  for (std::int64_t z = r; z < 16 - r; ++z)
    for (std::int64_t y = r; y < 16 - r; ++y)
      for (std::int64_t x = r; x < 16 - r; ++x)
        CHECK(out.at(x, y, z) == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("gaussian_filter3: translation equivariance and range preservation") {
  const Grid3 g = Grid3::isotropic(24, 1.0);
  LabelMap l = test::sphere_label(g, {8, 8, 8}, 3.0);
  LabelMap shifted = test::sphere_label(g, {11, 8, 8}, 3.0);  // +3 voxels in x
  const LabelMap fl = gaussian_filter3(l, 1.5);
  const LabelMap fs = gaussian_filter3(shifted, 1.5);
  // interior comparison, away from both borders
  for (std::int64_t z = 6; z < 18; ++z)
    for (std::int64_t y = 6; y < 18; ++y)
      for (std::int64_t x = 6; x < 15; ++x)
        CHECK(fl.at(x, y, z) == doctest::Approx(fs.at(x + 3, y, z)).epsilon(1e-9));
  for (double v : fl.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
  }
}

TEST_CASE("gaussian_filter3: filtered sum never exceeds the input sum") {
  const Grid3 g = Grid3::isotropic(12, 1.0);
  LabelMap l = test::sphere_label(g, {2, 2, 2}, 3.0);  // mass near a corner
  double in_sum = l.sum();
  const LabelMap out = gaussian_filter3(l, 2.0);
  CHECK(out.sum() <= in_sum + 1e-9);
}

TEST_CASE("centroid: basic and weighted") {
  const Grid3 g = Grid3::isotropic(8, 1.0);
  LabelMap l(g, LabelKind::landmark);
  l.at(2, 3, 4) = 1.0;
  auto c = centroid(l);
  CHECK(c[0] == doctest::Approx(2.0));
  CHECK(c[1] == doctest::Approx(3.0));
  CHECK(c[2] == doctest::Approx(4.0));

  LabelMap two(g, LabelKind::landmark);
  two.at(0, 0, 0) = 1.0;
  two.at(4, 0, 0) = 1.0;
  CHECK(centroid(two)[0] == doctest::Approx(2.0));

  LabelMap empty(g, LabelKind::landmark);
  CHECK_THROWS_WITH_AS(centroid(empty), doctest::Contains("empty label"), std::runtime_error);
}

TEST_CASE("centroid: soft sphere lands on its center; origin equivariance") {
  Grid3 g = Grid3::isotropic(20, 1.0);
  LabelMap l = test::sphere_label(g, {9.0, 10.0, 8.0}, 4.0);
  const LabelMap soft = gaussian_filter3(l, 1.0);
  auto c = centroid(soft);
  CHECK(std::abs(c[0] - 9.0) < 0.5);
  CHECK(std::abs(c[1] - 10.0) < 0.5);
  CHECK(std::abs(c[2] - 8.0) < 0.5);

  LabelMap moved = soft;
  moved.grid.origin = {5.0, -1.0, 2.0};
  auto cm = centroid(moved);
  CHECK(cm[0] == doctest::Approx(c[0] + 5.0).epsilon(1e-12));
  CHECK(cm[1] == doctest::Approx(c[1] - 1.0).epsilon(1e-12));
  CHECK(cm[2] == doctest::Approx(c[2] + 2.0).epsilon(1e-12));
}

TEST_CASE("vol io: round trip preserves metadata bit-exactly, values to f32") {
  const fs::path dir = fs::temp_directory_path() / "adreg_io_test";
  fs::create_directories(dir);
  const Grid3 g({5, 6, 7}, {0.8, 1.1, 2.3}, {0.1, -4.5, 3.3});
  Volume v = test::random_volume(g, 17, -2, 2);
  const std::string path = (dir / "vol.vol").string();
  save_volume(v, path);
  const Volume r = load_volume(path);
  CHECK(r.grid.shape == g.shape);
  CHECK(r.grid.spacing == g.spacing);
  CHECK(r.grid.origin == g.origin);
  for (std::size_t i = 0; i < v.values.size(); ++i)
    CHECK(r.values[i] == double(float(v.values[i])));

  DisplacementField d = test::smooth_field(g, 5, 2.0, 6.0);
  const std::string fpath = (dir / "field.vol").string();
  save_field(d, fpath);
  const DisplacementField rf = load_field(fpath);
  CHECK(rf.grid == g);
  for (std::size_t i = 0; i < d.u.size(); ++i) CHECK(rf.u[i] == double(float(d.u[i])));
  fs::remove_all(dir);
}

TEST_CASE("vol io: truncated payload names expected and actual byte counts") {
  const fs::path dir = fs::temp_directory_path() / "adreg_io_trunc";
  fs::create_directories(dir);
  const Grid3 g = Grid3::isotropic(4, 1.0);
  Volume v = test::random_volume(g, 3);
  const std::string path = (dir / "t.vol").string();
  save_volume(v, path);
  fs::resize_file(path + ".raw", 10);
  try {
    load_volume(path);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("256") != std::string::npos);  // expected bytes: 64 voxels * 4
    CHECK(msg.find("10") != std::string::npos);   // actual bytes
  }
  fs::remove_all(dir);
}

TEST_CASE("vol io: malformed header and non-finite payload rejected") {
  const fs::path dir = fs::temp_directory_path() / "adreg_io_bad";
  fs::create_directories(dir);
  const std::string path = (dir / "bad.vol").string();
  std::ofstream(path) << "not a header\n";
  CHECK_THROWS_AS(load_volume(path), std::runtime_error);

  const Grid3 g = Grid3::isotropic(2, 1.0);
  Volume v(g);
  save_volume(v, path);
  {
    std::ofstream raw(path + ".raw", std::ios::binary);
    std::vector<float> junk(8, std::numeric_limits<float>::quiet_NaN());
    raw.write(reinterpret_cast<const char*>(junk.data()), 32);
  }
  CHECK_THROWS_WITH_AS(load_volume(path), doctest::Contains("non-finite"), std::runtime_error);
  fs::remove_all(dir);
}
