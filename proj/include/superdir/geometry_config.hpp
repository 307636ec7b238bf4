// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "superdir/array_field.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace superdir {

// Key-value geometry description, one `key = value` per line, `#` comments:
//
//   kind = ula            # ula | upa
//   m = 4                 # ula only
//   rows = 4              # upa only
//   cols = 4              # upa only
//   spacing_wl = 0.25
//   pattern = dipole      # isotropic | dipole
//   axis = y              # ula array axis: x | y | z | ax,ay,az
//   dipole_axis = x       # dipole orientation, same syntax
//   coupling_strength = 0.2   # optional, enables the coupling surrogate
//   coupling_seed = 7
struct GeometryConfig {
    ArrayKind kind = ArrayKind::ula;
    std::size_t m = 4;
    std::size_t rows = 1;
    std::size_t cols = 1;
    double spacing_wl = 0.25;
    ElementKind pattern = ElementKind::isotropic;
    Vec3 axis = Vec3::UnitY();
    Vec3 dipole_axis = Vec3::UnitZ();
    std::optional<double> coupling_strength;
    std::uint64_t coupling_seed = 0;

    std::size_t elements() const { return kind == ArrayKind::ula ? m : rows * cols; }

    ArrayGeometry build() const { return build(spacing_wl); }
    ArrayGeometry build(double spacing) const;
    std::optional<CouplingMatrix> coupling() const { return coupling(spacing_wl); }
    std::optional<CouplingMatrix> coupling(double spacing) const;
};

GeometryConfig parse_geometry_config(const std::string& text);
GeometryConfig load_geometry_config(const std::string& path);
std::string format_geometry_config(const GeometryConfig& cfg);

nlohmann::json to_json(const GeometryConfig& cfg);
GeometryConfig geometry_from_json(const nlohmann::json& j);

// "x" | "y" | "z" | "ax,ay,az"
Vec3 parse_axis(const std::string& s);

}  // namespace superdir
