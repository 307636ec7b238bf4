// SPDX-License-Identifier: Apache-2.0
#include "superdir/geometry_config.hpp"

#include "superdir/error.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace superdir {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidArgument("geometry config: '" + key + "' expects a number, got '" + v + "'");
    }
}

std::size_t to_count(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d < 0.0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
        throw InvalidArgument("geometry config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(d);
}

std::string axis_string(const Vec3& a) {
    if (a == Vec3::UnitX()) return "x";
    if (a == Vec3::UnitY()) return "y";
    if (a == Vec3::UnitZ()) return "z";
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", a.x(), a.y(), a.z());
    return buf;
}

}  // namespace

Vec3 parse_axis(const std::string& s) {
    if (s == "x") return Vec3::UnitX();
    if (s == "y") return Vec3::UnitY();
    if (s == "z") return Vec3::UnitZ();
    double x, y, z;
    char tail;
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf%c", &x, &y, &z, &tail) != 3) {
        throw InvalidArgument("axis must be x, y, z or 'ax,ay,az', got '" + s + "'");
    }
    Vec3 v(x, y, z);
    if (!(v.norm() > 0.0)) throw InvalidArgument("axis must be nonzero");
    return v / v.norm();
}

ArrayGeometry GeometryConfig::build(double spacing) const {
    const ElementPattern element =
        pattern == ElementKind::isotropic ? ElementPattern::isotropic() : ElementPattern::ideal_dipole(dipole_axis);
    if (kind == ArrayKind::ula) return make_ula(m, spacing, axis, element);
    return make_upa(rows, cols, spacing, element);
}

std::optional<CouplingMatrix> GeometryConfig::coupling(double spacing) const {
    if (!coupling_strength) return std::nullopt;
    return make_coupling(elements(), spacing, *coupling_strength, coupling_seed);
}

GeometryConfig parse_geometry_config(const std::string& text) {
    GeometryConfig cfg;
    bool saw_m = false, saw_rows = false, saw_cols = false;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto sep = line.find('=');
        if (sep == std::string::npos) sep = line.find(':');
        if (sep == std::string::npos) {
            throw InvalidArgument("geometry config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, sep));
        const std::string value = trim(line.substr(sep + 1));
        if (key == "kind") {
            if (value == "ula" || value == "ULA") cfg.kind = ArrayKind::ula;
            else if (value == "upa" || value == "UPA") cfg.kind = ArrayKind::upa;
            else throw InvalidArgument("geometry config: kind must be ula or upa, got '" + value + "'");
        } else if (key == "m") {
            cfg.m = to_count(key, value);
            saw_m = true;
        } else if (key == "rows") {
            cfg.rows = to_count(key, value);
            saw_rows = true;
        } else if (key == "cols") {
            cfg.cols = to_count(key, value);
            saw_cols = true;
        } else if (key == "spacing_wl") {
            cfg.spacing_wl = to_double(key, value);
        } else if (key == "pattern") {
            if (value == "isotropic") cfg.pattern = ElementKind::isotropic;
            else if (value == "dipole" || value == "ideal-dipole" || value == "ideal_dipole")
                cfg.pattern = ElementKind::ideal_dipole;
            else throw InvalidArgument("geometry config: pattern must be isotropic or dipole, got '" + value + "'");
        } else if (key == "axis") {
            cfg.axis = parse_axis(value);
        } else if (key == "dipole_axis") {
            cfg.dipole_axis = parse_axis(value);
        } else if (key == "coupling_strength") {
            cfg.coupling_strength = to_double(key, value);
        } else if (key == "coupling_seed") {
            cfg.coupling_seed = to_count(key, value);
        } else {
            throw InvalidArgument("geometry config: unknown key '" + key + "'");
        }
    }
    if (cfg.kind == ArrayKind::ula && !saw_m && (saw_rows || saw_cols)) {
        throw InvalidArgument("geometry config: ula takes 'm', not rows/cols");
    }
    if (cfg.kind == ArrayKind::upa && saw_m && !(saw_rows && saw_cols)) {
        throw InvalidArgument("geometry config: upa takes 'rows' and 'cols'");
    }
    if (cfg.elements() == 0) throw InvalidArgument("geometry config: array has no elements");
    if (!(cfg.spacing_wl > 0.0)) throw InvalidArgument("geometry config: spacing_wl must be positive");
    return cfg;
}

GeometryConfig load_geometry_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open geometry config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_geometry_config(ss.str());
}

std::string format_geometry_config(const GeometryConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "kind = " << (cfg.kind == ArrayKind::ula ? "ula" : "upa") << "\n";
    if (cfg.kind == ArrayKind::ula) {
        out << "m = " << cfg.m << "\n";
        out << "axis = " << axis_string(cfg.axis) << "\n";
    } else {
        out << "rows = " << cfg.rows << "\ncols = " << cfg.cols << "\n";
    }
    out << "spacing_wl = " << cfg.spacing_wl << "\n";
    out << "pattern = " << (cfg.pattern == ElementKind::isotropic ? "isotropic" : "dipole") << "\n";
    if (cfg.pattern == ElementKind::ideal_dipole) out << "dipole_axis = " << axis_string(cfg.dipole_axis) << "\n";
    if (cfg.coupling_strength) {
        out << "coupling_strength = " << *cfg.coupling_strength << "\n";
        out << "coupling_seed = " << cfg.coupling_seed << "\n";
    }
    return out.str();
}

nlohmann::json to_json(const GeometryConfig& cfg) {
    nlohmann::json j;
    j["kind"] = cfg.kind == ArrayKind::ula ? "ula" : "upa";
    j["m"] = cfg.m;
    j["rows"] = cfg.rows;
    j["cols"] = cfg.cols;
    j["spacing_wl"] = cfg.spacing_wl;
    j["pattern"] = cfg.pattern == ElementKind::isotropic ? "isotropic" : "dipole";
    j["axis"] = {cfg.axis.x(), cfg.axis.y(), cfg.axis.z()};
    j["dipole_axis"] = {cfg.dipole_axis.x(), cfg.dipole_axis.y(), cfg.dipole_axis.z()};
    if (cfg.coupling_strength) {
        j["coupling_strength"] = *cfg.coupling_strength;
        j["coupling_seed"] = cfg.coupling_seed;
    } else {
        j["coupling_strength"] = nullptr;
    }
    return j;
}

GeometryConfig geometry_from_json(const nlohmann::json& j) {
    GeometryConfig cfg;
    cfg.kind = j.at("kind").get<std::string>() == "upa" ? ArrayKind::upa : ArrayKind::ula;
    cfg.m = j.at("m").get<std::size_t>();
    cfg.rows = j.at("rows").get<std::size_t>();
    cfg.cols = j.at("cols").get<std::size_t>();
    cfg.spacing_wl = j.at("spacing_wl").get<double>();
    cfg.pattern = j.at("pattern").get<std::string>() == "dipole" ? ElementKind::ideal_dipole : ElementKind::isotropic;
    const auto& a = j.at("axis");
    cfg.axis = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    const auto& d = j.at("dipole_axis");
    cfg.dipole_axis = Vec3(d[0].get<double>(), d[1].get<double>(), d[2].get<double>());
    if (j.contains("coupling_strength") && !j["coupling_strength"].is_null()) {
        cfg.coupling_strength = j["coupling_strength"].get<double>();
        cfg.coupling_seed = j.at("coupling_seed").get<std::uint64_t>();
    }
    return cfg;
}

}  // namespace superdir
