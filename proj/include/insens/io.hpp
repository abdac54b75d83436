#pragma once

#include "insens/fields.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace insens {

/// Payload kind stored in the container header.
enum class FieldKind : std::uint32_t { Node = 0, Trace = 1, Control = 2 };

template <class Tag>
struct FieldKindOf;
template <>
struct FieldKindOf<NodeTag> {
    static constexpr FieldKind value = FieldKind::Node;
};
template <>
struct FieldKindOf<TraceTag> {
    static constexpr FieldKind value = FieldKind::Trace;
};
template <>
struct FieldKindOf<ControlTag> {
    static constexpr FieldKind value = FieldKind::Control;
};

/// Header of the flat binary container. The file is the 8-byte magic
/// "INSENSF1", then kind (u32), a zero u32, points (u64), levels (u64),
/// T (f64), dt (f64), followed by levels × points little-endian f64 values,
/// time level outermost.
struct ContainerHeader {
    FieldKind kind = FieldKind::Node;
    std::uint64_t points = 0;
    std::uint64_t levels = 0;
    double horizon = 0.0;
    double dt = 0.0;
};

void write_container(const std::string& path, FieldKind kind, const TimeAxis& time, const Eigen::MatrixXd& values);

/// Reads a container of the given kind; throws IoError on malformed files or
/// a kind mismatch.
Eigen::MatrixXd read_container(const std::string& path, FieldKind kind, TimeAxis& time);

ContainerHeader read_container_header(const std::string& path);

template <class Tag>
void write_binary(const std::string& path, const Sampled<Tag>& field) {
    write_container(path, FieldKindOf<Tag>::value, field.time, field.values);
}

template <class Tag>
Sampled<Tag> read_binary(const std::string& path) {
    TimeAxis t;
    Eigen::MatrixXd v = read_container(path, FieldKindOf<Tag>::value, t);
    return Sampled<Tag>(t, std::move(v));
}

/// One row per time level: t followed by the values at every point.
void write_csv(const std::string& path, const TimeAxis& time, const Eigen::MatrixXd& values);

template <class Tag>
void write_csv(const std::string& path, const Sampled<Tag>& field) {
    write_csv(path, field.time, field.values);
}

/// Whitespace-separated columns with an optional '#' comment header.
void write_columns(const std::string& path, const std::vector<std::vector<double>>& columns,
                   const std::string& header = {});

/// Reads a list of numbers separated by commas, whitespace or newlines;
/// lines starting with '#' are skipped. Throws IoError.
std::vector<double> read_numbers(const std::string& path);

} // namespace insens
