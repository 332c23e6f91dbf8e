#pragma once

#include <string>

#include "adreg/volume.hpp"

namespace adreg {

/// File format: `<path>` is a small text sidecar (shape, spacing, origin,
/// dtype, component count, kind) and `<path>.raw` holds the payload as
/// little-endian 32-bit floats in index order [z][y][x] (x fastest),
/// components stored as consecutive full blocks. Grid metadata round-trips
/// bit-exactly; values round-trip within single-precision rounding.

void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

void save_label(const LabelMap& l, const std::string& path);
LabelMap load_label(const std::string& path);

void save_field(const DisplacementField& d, const std::string& path);
DisplacementField load_field(const std::string& path);

/// Peek at a sidecar's component count / kind without loading the payload.
struct VolHeader {
  Grid3 grid;
  int components = 1;
  std::string kind;  // image | gland | landmark | ddf
};
VolHeader read_vol_header(const std::string& path);

}  // namespace adreg
