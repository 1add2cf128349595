// Writes the reference workload to disk so the CLI can be run on it:
//   <dir>/reference_net.json
//   <dir>/calib/sample_NN.qmtn

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "quantmcu/network_io.hpp"
#include "quantmcu/reference.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"write the reference network and calibration set"};
  std::string dir = "reference";
  std::uint64_t seed = quantmcu::reference::kSeed;
  std::size_t count = quantmcu::reference::kCalibrationSamples;
  app.add_option("dir", dir, "output directory");
  app.add_option("--seed", seed, "calibration seed");
  app.add_option("--samples", count, "calibration sample count")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(fs::path(dir) / "calib");
    std::ofstream(fs::path(dir) / "reference_net.json") << quantmcu::network_to_json(quantmcu::reference::network()).dump(2)
                                                         << '\n';
    const auto cal = quantmcu::reference::calibration(seed, count);
    for (std::size_t i = 0; i < cal.samples.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%02zu.qmtn", i);
      quantmcu::save_tensor(fs::path(dir) / "calib" / name, cal.samples[i]);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cout << "wrote " << dir << "\n";
  return 0;
}
