#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/geometry.hpp"

namespace rcv::io {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

/// Binary little-endian PLY: float32 x,y,z, uchar red,green,blue and, when the
/// cloud carries instance ids, ushort instance.
inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
    cloud.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (cloud.instance_ids) out << "property ushort instance\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const float xyz[3] = {static_cast<float>(cloud.positions[i].x()), static_cast<float>(cloud.positions[i].y()),
                              static_cast<float>(cloud.positions[i].z())};
        out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
        const Rgb c = cloud.colors[i];
        const std::uint8_t rgb[3] = {c.r, c.g, c.b};
        out.write(reinterpret_cast<const char*>(rgb), 3);
        if (cloud.instance_ids) {
            const auto id = (*cloud.instance_ids)[i];
            if (id > 0xffff) fail(ErrorKind::InvalidArgument, "instance id exceeds 16 bits");
            const auto id16 = static_cast<std::uint16_t>(id);
            out.write(reinterpret_cast<const char*>(&id16), 2);
        }
    }
    if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

namespace detail {

inline std::size_t ply_type_size(const std::string& type) {
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    if (type == "int" || type == "uint" || type == "float" || type == "int32" || type == "uint32" || type == "float32") return 4;
    if (type == "double" || type == "float64") return 8;
    fail(ErrorKind::IoError, "unsupported ply property type " + type);
}

inline double ply_read_value(const std::string& type, const char* p) {
    auto load = [p]<typename T>(T) {
        T v;
        std::memcpy(&v, p, sizeof v);
        return static_cast<double>(v);
    };
    if (type == "char" || type == "int8") return load(std::int8_t{});
    if (type == "uchar" || type == "uint8") return load(std::uint8_t{});
    if (type == "short" || type == "int16") return load(std::int16_t{});
    if (type == "ushort" || type == "uint16") return load(std::uint16_t{});
    if (type == "int" || type == "int32") return load(std::int32_t{});
    if (type == "uint" || type == "uint32") return load(std::uint32_t{});
    if (type == "float" || type == "float32") return load(float{});
    return load(double{});
}

}  // namespace detail

inline PointCloud read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "ply") fail(ErrorKind::IoError, path.string() + ": missing ply magic");
    struct Property {
        std::string type, name;
        std::size_t offset;
    };
    std::vector<Property> props;
    std::size_t count = 0, stride = 0;
    bool in_vertex = false, binary_le = false;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ss >> name;
            in_vertex = name == "vertex";
            if (in_vertex) ss >> count;
            else fail(ErrorKind::IoError, path.string() + ": only vertex elements are supported");
        } else if (word == "property" && in_vertex) {
            Property p;
            ss >> p.type >> p.name;
            if (p.type == "list") fail(ErrorKind::IoError, path.string() + ": list properties are not supported");
            p.offset = stride;
            stride += detail::ply_type_size(p.type);
            props.push_back(p);
        } else if (word == "end_header") {
            break;
        }
    }
    if (!binary_le) fail(ErrorKind::IoError, path.string() + ": only binary_little_endian ply is supported");
    auto find = [&](const std::string& name) -> const Property* {
        for (const auto& p : props) {
            if (p.name == name) return &p;
        }
        return nullptr;
    };
    const Property* px = find("x");
    const Property* py = find("y");
    const Property* pz = find("z");
    if (!px || !py || !pz) fail(ErrorKind::IoError, path.string() + ": missing x/y/z");
    const Property* pr = find("red");
    const Property* pg = find("green");
    const Property* pb = find("blue");
    const Property* pi = find("instance");

    PointCloud cloud;
    cloud.positions.reserve(count);
    cloud.colors.reserve(count);
    if (pi) cloud.instance_ids.emplace().reserve(count);
    std::vector<char> record(stride);
    for (std::size_t i = 0; i < count; ++i) {
        if (!in.read(record.data(), static_cast<std::streamsize>(stride))) fail(ErrorKind::IoError, path.string() + ": truncated vertex data");
        auto value = [&](const Property* p) { return detail::ply_read_value(p->type, record.data() + p->offset); };
        cloud.positions.emplace_back(value(px), value(py), value(pz));
        Rgb c;
        if (pr && pg && pb) c = {static_cast<std::uint8_t>(value(pr)), static_cast<std::uint8_t>(value(pg)), static_cast<std::uint8_t>(value(pb))};
        cloud.colors.push_back(c);
        if (pi) cloud.instance_ids->push_back(static_cast<std::uint32_t>(value(pi)));
    }
    cloud.validate();
    return cloud;
}

}  // namespace rcv::io
