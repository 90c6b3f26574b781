#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dtwin::cli {

struct PowerflowConfig {
  std::string network;
  std::string out = "out";
  std::string solar_bus;  // writes sensitivity.csv when set
  double tolerance = 1e-8;
  int max_iterations = 50;
};

struct SynthConfig {
  std::string network;
  std::string meters;
  std::string out = "out";
  std::string start = "2021-06-01T00:00:00Z";
  int steps = 120;
  int cadence_s = 30;
  std::uint64_t seed = 1;
  double noise_scale = 1.0;
  std::string load_shape = "daily";  // daily | flat
  std::string solar_reference;
  std::string solar_generator;
  double solar_capacity_mw = 0.0;
  double solar_clip_mw = 0.0;  // 0: no clipping
  std::vector<std::string> set_taps;  // "tx03=3"
};

struct QualityConfig {
  std::string measurements;
  std::string meters;
  std::string out = "out";
  std::size_t stuck_min_len = 20;
  double gross_z = 8.0;
  bool no_step_detect = false;
};

struct WindowConfig {
  std::string time;
  std::string from;
  std::string to;
  int stride = 4;
};

struct TapSweepConfig {
  std::vector<std::string> transformers;
  int max_passes = 10;
};

struct DsseConfig {
  std::string network;
  std::string meters;
  std::string measurements;
  std::string out = "out";
  std::string mode = "raw";  // raw | synthetic
  WindowConfig window;
  bool no_quality = false;
  bool tap_sweep = false;
  TapSweepConfig sweep;
  double tolerance = 1e-10;
  int max_iterations = 100;
  std::uint64_t seed = 1;
};

struct TapCommandConfig {
  std::string network;
  std::string meters;
  std::string measurements;
  std::string out = "out";
  WindowConfig window;
  TapSweepConfig sweep;
  std::uint64_t seed = 1;
};

struct ExportLimitConfig {
  std::string network;
  std::string out = "out";
  std::string solar_bus;
  std::string reference;
  double capacity_mw = 0.0;
  double offset_mw = 0.0;
  bool fit_offset = false;
  std::string measured;      // timestamp,MW file
  std::string measurements;  // or a meter CSV together with solar_meter
  std::string meters;
  std::string solar_meter;
  std::string v_twin;
  std::vector<std::string> schemes{"conservative:0.5", "unity", "q_control:0.9"};
  double price = 100.0;
  double carbon = 400.0;
  double cadence_s = 0.0;  // 0: taken from the data
  bool svg = false;
};

int run_powerflow(const PowerflowConfig& c);
int run_synth(const SynthConfig& c, std::size_t jobs);
int run_quality(const QualityConfig& c);
int run_dsse(const DsseConfig& c, std::size_t jobs);
int run_tap_sweep(const TapCommandConfig& c, std::size_t jobs);
int run_export_limit(const ExportLimitConfig& c);

}  // namespace dtwin::cli
