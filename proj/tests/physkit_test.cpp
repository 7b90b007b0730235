#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "centrifuge/physkit.hpp"

namespace pk = centrifuge::physkit;

TEST(Physkit, WavenumberToGhz) {
  EXPECT_EQ(pk::wavenumber_to_ghz(0.0), 0.0);
  EXPECT_NEAR(pk::wavenumber_to_ghz(0.17), 5.0965, 5e-5);
  EXPECT_NEAR(pk::wavenumber_to_ghz(0.86), 25.782, 5e-4);
  EXPECT_EQ(pk::PhysicalConstants::c_GHz_per_wavenumber, 29.9792458);
}

TEST(Physkit, ThermalEnergy) {
  EXPECT_EQ(pk::thermal_energy(0.0), 0.0);
  EXPECT_NEAR(pk::thermal_energy(0.4), 0.27801, 5e-6);
  EXPECT_NEAR(pk::thermal_energy(1.0), 0.69503, 5e-6);
  EXPECT_NEAR(pk::PhysicalConstants::kB_wavenumber_per_K, 0.695034800, 1e-8);
  EXPECT_THROW(pk::thermal_energy(-1.0), std::invalid_argument);
}

TEST(Physkit, RoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> exponent(-6.0, 6.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = std::pow(10.0, exponent(rng)) * (i % 2 ? -1.0 : 1.0);
    EXPECT_NEAR(pk::ghz_to_wavenumber(pk::wavenumber_to_ghz(x)), x, 1e-14 * std::abs(x));
  }
}

TEST(Physkit, AngularFrequency) {
  // 1 GHz is one cycle per 1000 ps.
  EXPECT_NEAR(pk::ghz_to_rad_per_ps(1.0) * 1000.0, pk::two_pi, 1e-12);
  EXPECT_NEAR(pk::wavenumber_to_rad_per_ps(1.0), pk::ghz_to_rad_per_ps(29.9792458), 1e-15);
}

// The speed-of-light literal lives only in physkit.hpp.
TEST(Physkit, SingleSourceOfConstants) {
  namespace fs = std::filesystem;
  int hits = 0;
  for (const auto& dir : {"include", "tools"}) {
    const fs::path root = fs::path(CENTRIFUGE_SOURCE_DIR) / dir;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (!entry.is_regular_file()) continue;
      std::ifstream in(entry.path());
      std::stringstream ss;
      ss << in.rdbuf();
      if (ss.str().find("29.979") != std::string::npos) {
        EXPECT_EQ(entry.path().filename(), "physkit.hpp");
        ++hits;
      }
    }
  }
  EXPECT_EQ(hits, 1);
}
