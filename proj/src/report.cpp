#include "deltal/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <json.hpp>

#include "deltal/errors.hpp"

namespace deltal {

namespace fs = std::filesystem;
using nlohmann::json;

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_number(double value) { return fmt::format("{}", value); }

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

namespace {

constexpr double kWidth = 760;
constexpr double kHeight = 440;
constexpr double kLeft = 80;
constexpr double kRight = 200;  // room for the legend
constexpr double kTop = 44;
constexpr double kBottom = 56;
constexpr int kTicks = 5;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (lo > hi) return {};
  if (lo == hi) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.04;
  return {lo - pad, hi + pad};
}

}  // namespace

PlotFiles render_plot(std::span<const PlotSeries> series, const PlotOptions& options) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot series '" + s.name + "': x and y differ in size");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        throw std::invalid_argument("plot series '" + s.name + "' has a non-finite point");
      }
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  const auto py = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      kWidth, kHeight);
  svg += fmt::format("<text x=\"{:.1f}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                     kLeft + pw / 2, escape_xml(options.title));
  svg += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
                     kLeft, kTop, pw, ph);
  for (int i = 0; i <= kTicks; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / kTicks;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / kTicks;
    svg += fmt::format(
        "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"#ddd\"/>"
        "<text x=\"{0:.1f}\" y=\"{3:.1f}\" text-anchor=\"middle\">{4:.4g}</text>\n",
        px(fx), kTop, kTop + ph, kTop + ph + 18, fx);
    svg += fmt::format(
        "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"#ddd\"/>"
        "<text x=\"{3:.1f}\" y=\"{4:.1f}\" text-anchor=\"end\">{5:.4g}</text>\n",
        kLeft, py(fy), kLeft + pw, kLeft - 6, py(fy) + 4, fy);
  }
  svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2,
                     kHeight - 14, escape_xml(options.x_label));
  svg += fmt::format(
      "<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.1f})\">{1}</text>\n",
      kTop + ph / 2, escape_xml(options.y_label));

  std::string csv = "series,x,y\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    svg += fmt::format("<g class=\"series\" data-name=\"{}\">\n", escape_xml(s.name));
    if (s.markers) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>\n",
                           px(s.x[i]), py(s.y[i]), color);
      }
    } else if (!s.x.empty()) {
      svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"", color);
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        svg += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", px(s.x[i]), py(s.y[i]));
      }
      svg += "\"/>\n";
    }
    svg += "</g>\n";
    const double ly = kTop + 10 + 18 * static_cast<double>(k);
    svg += fmt::format(
        "<g class=\"legend-entry\"><rect x=\"{0:.1f}\" y=\"{1:.1f}\" width=\"12\" height=\"12\" fill=\"{2}\"/>"
        "<text x=\"{3:.1f}\" y=\"{4:.1f}\">{5}</text></g>\n",
        kLeft + pw + 14, ly - 10, color, kLeft + pw + 32, ly, escape_xml(s.name));
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      csv += fmt::format("{},{},{}\n", csv_field(s.name), format_number(s.x[i]), format_number(s.y[i]));
    }
  }
  svg += "</svg>\n";
  return {std::move(svg), std::move(csv)};
}

void emit_plot_data(std::span<const PlotSeries> series, const fs::path& path, const PlotOptions& options) {
  const PlotFiles files = render_plot(series, options);
  write_file_atomic(path, files.svg);
  fs::path csv_path = path;
  csv_path.replace_extension(".csv");
  write_file_atomic(csv_path, files.csv);
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json load_manifest(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

std::set<std::string> listed_names(const json& manifest) {
  std::set<std::string> names;
  if (!manifest.contains("files") || !manifest["files"].is_array()) return names;
  for (const auto& f : manifest["files"]) {
    if (f.contains("name") && f["name"].is_string()) names.insert(f["name"].get<std::string>());
  }
  return names;
}

}  // namespace

void write_bundle(const ReportBundle& bundle, const fs::path& dir) {
  std::map<std::string, std::string> files = bundle.files;
  files["summary.txt"] = bundle.summary;
  for (const auto& [name, _] : files) {
    if (name.empty() || name == kManifestName || name.find('/') != std::string::npos) {
      throw IoError("invalid output file name '" + name + "'");
    }
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const fs::path manifest_path = dir / kManifestName;
  std::set<std::string> previous;
  if (fs::exists(manifest_path)) previous = listed_names(load_manifest(manifest_path));
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name != kManifestName && !previous.count(name)) {
      throw IoError("refusing to write into " + dir.string() + ": '" + name + "' is not from a previous run");
    }
  }

  json listed = json::array();
  for (const auto& [name, content] : files) {
    write_file_atomic(dir / name, content);
    listed.push_back({{"name", name}, {"bytes", content.size()}, {"fnv1a", fnv1a_hex(content)}});
  }
  for (const auto& name : previous) {
    if (!files.count(name) && name != kManifestName) fs::remove(dir / name, ec);
  }
  listed.push_back({{"name", kManifestName}});

  const json manifest = {
      {"kind", bundle.kind},
      {"config_hash", bundle.config_hash},
      {"pass", bundle.pass},
      {"created", fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(
                                                           std::chrono::system_clock::now())))},
      {"files", listed},
  };
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

ManifestCheck verify_manifest(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  if (!fs::exists(manifest_path)) throw IoError("no manifest in " + dir.string());
  const json manifest = load_manifest(manifest_path);
  ManifestCheck check;
  check.kind = manifest.value("kind", "");
  check.config_hash = manifest.value("config_hash", "");
  check.pass = manifest.value("pass", false);
  const std::set<std::string> names = listed_names(manifest);
  for (const auto& f : manifest.value("files", json::array())) {
    const std::string name = f.value("name", "");
    if (name == kManifestName) continue;
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      check.problems.push_back("missing: " + name);
    } else if (fnv1a_hex(read_file(p)) != f.value("fnv1a", "")) {
      check.problems.push_back("modified: " + name);
    }
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!names.count(name)) check.problems.push_back("unlisted: " + name);
  }
  std::sort(check.problems.begin(), check.problems.end());
  return check;
}

}  // namespace deltal
