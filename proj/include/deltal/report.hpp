#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace deltal {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;  // scatter points instead of a polyline
};

struct PlotOptions {
  std::string title;
  std::string x_label = "x";
  std::string y_label = "y";
};

struct PlotFiles {
  std::string svg;
  std::string csv;  // header `series,x,y`, one row per point
};

// Deterministic rendering. Throws std::invalid_argument on non-finite values or
// mismatched x/y sizes.
PlotFiles render_plot(std::span<const PlotSeries> series, const PlotOptions& options);

// Writes `path` (an .svg) and the CSV next to it with the extension replaced.
void emit_plot_data(std::span<const PlotSeries> series, const std::filesystem::path& path,
                    const PlotOptions& options = {});

// Temp file in the same directory, then rename. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(std::string_view text);

// Shortest text that reads back to the same double.
std::string format_number(double value);

std::string fnv1a_hex(std::string_view data);

inline constexpr const char* kManifestName = "manifest.json";

// Everything one experiment produces, held in memory until written.
struct ReportBundle {
  std::string kind;
  std::string config_hash;
  std::string summary;
  bool pass = false;
  std::map<std::string, std::string> files;  // file name -> content, written flat
};

// Writes every file of the bundle plus summary.txt and the manifest into `dir`.
// Outputs listed by a previous manifest that this run no longer produces are
// removed. A non-empty directory without a manifest, or with files no manifest
// accounts for, is refused with IoError.
void write_bundle(const ReportBundle& bundle, const std::filesystem::path& dir);

struct ManifestCheck {
  std::string kind;
  std::string config_hash;
  bool pass = false;
  std::vector<std::string> problems;  // missing, modified or unlisted files

  bool ok() const { return problems.empty(); }
};

ManifestCheck verify_manifest(const std::filesystem::path& dir);

}  // namespace deltal
