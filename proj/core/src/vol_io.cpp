#include "adreg/vol_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adreg {

namespace {

constexpr const char* kMagic = "adreg vol v1";

std::string raw_path(const std::string& path) { return path + ".raw"; }

void write_sidecar(const std::string& path, const Grid3& g, int components,
                   const std::string& kind) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save: cannot open " + path);
  char buf[256];
  f << kMagic << "\n";
  std::snprintf(buf, sizeof buf, "shape: %lld %lld %lld\n", (long long)g.shape[0],
                (long long)g.shape[1], (long long)g.shape[2]);
  f << buf;
  std::snprintf(buf, sizeof buf, "spacing: %.17g %.17g %.17g\n", g.spacing[0], g.spacing[1],
                g.spacing[2]);
  f << buf;
  std::snprintf(buf, sizeof buf, "origin: %.17g %.17g %.17g\n", g.origin[0], g.origin[1],
                g.origin[2]);
  f << buf;
  f << "dtype: float32\n";
  f << "components: " << components << "\n";
  f << "kind: " << kind << "\n";
  if (!f) throw std::runtime_error("save: write failed for " + path);
}

void write_raw(const std::string& path, const double* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save: cannot open " + path);
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = float(data[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(n * sizeof(float)));
  if (!f) throw std::runtime_error("save: write failed for " + path);
}

VolHeader parse_sidecar(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != kMagic)
    throw std::runtime_error("load: malformed header (bad magic) in " + path);
  VolHeader h;
  std::string dtype;
  bool have_shape = false, have_spacing = false, have_origin = false;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "shape:") {
      ss >> h.grid.shape[0] >> h.grid.shape[1] >> h.grid.shape[2];
      have_shape = bool(ss);
    } else if (key == "spacing:") {
      ss >> h.grid.spacing[0] >> h.grid.spacing[1] >> h.grid.spacing[2];
      have_spacing = bool(ss);
    } else if (key == "origin:") {
      ss >> h.grid.origin[0] >> h.grid.origin[1] >> h.grid.origin[2];
      have_origin = bool(ss);
    } else if (key == "dtype:") {
      ss >> dtype;
    } else if (key == "components:") {
      ss >> h.components;
    } else if (key == "kind:") {
      ss >> h.kind;
    }
  }
  if (!have_shape || !have_spacing || !have_origin)
    throw std::runtime_error("load: malformed header (missing fields) in " + path);
  if (dtype != "float32") throw std::runtime_error("load: unsupported dtype in " + path);
  if (h.components != 1 && h.components != 3)
    throw std::runtime_error("load: unsupported component count in " + path);
  h.grid.validate();
  return h;
}

std::vector<double> read_raw(const std::string& path, std::size_t expected_count) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load: cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::size_t bytes = std::size_t(f.tellg());
  f.seekg(0);
  const std::size_t expected_bytes = expected_count * sizeof(float);
  if (bytes != expected_bytes) {
    std::ostringstream msg;
    msg << "load: payload size mismatch in " << path << ": expected " << expected_bytes
        << " bytes, got " << bytes;
    throw std::runtime_error(msg.str());
  }
  std::vector<float> buf(expected_count);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(expected_bytes));
  if (!f) throw std::runtime_error("load: read failed for " + path);
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    if (!std::isfinite(buf[i]))
      throw std::runtime_error("load: non-finite value in " + path);
    out[i] = double(buf[i]);
  }
  return out;
}

}  // namespace

void save_volume(const Volume& v, const std::string& path) {
  write_sidecar(path, v.grid, 1, "image");
  write_raw(raw_path(path), v.values.data(), v.values.size());
}

Volume load_volume(const std::string& path) {
  const VolHeader h = parse_sidecar(path);
  if (h.components != 1) throw std::runtime_error("load_volume: expected 1 component in " + path);
  return Volume(h.grid, read_raw(raw_path(path), std::size_t(h.grid.voxels())));
}

void save_label(const LabelMap& l, const std::string& path) {
  write_sidecar(path, l.grid, 1, l.kind == LabelKind::gland ? "gland" : "landmark");
  write_raw(raw_path(path), l.values.data(), l.values.size());
}

LabelMap load_label(const std::string& path) {
  const VolHeader h = parse_sidecar(path);
  if (h.components != 1) throw std::runtime_error("load_label: expected 1 component in " + path);
  const LabelKind kind = h.kind == "landmark" ? LabelKind::landmark : LabelKind::gland;
  return LabelMap(h.grid, read_raw(raw_path(path), std::size_t(h.grid.voxels())), kind);
}

void save_field(const DisplacementField& d, const std::string& path) {
  write_sidecar(path, d.grid, 3, "ddf");
  write_raw(raw_path(path), d.u.data(), d.u.size());
}

DisplacementField load_field(const std::string& path) {
  const VolHeader h = parse_sidecar(path);
  if (h.components != 3) throw std::runtime_error("load_field: expected 3 components in " + path);
  return DisplacementField(h.grid, read_raw(raw_path(path), std::size_t(3 * h.grid.voxels())));
}

VolHeader read_vol_header(const std::string& path) { return parse_sidecar(path); }

}  // namespace adreg
