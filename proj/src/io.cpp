#include "insens/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace insens {

namespace {

constexpr char kMagic[8] = {'I', 'N', 'S', 'E', 'N', 'S', 'F', '1'};

static_assert(std::endian::native == std::endian::little, "the container format is little-endian");

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw Error(ErrorCode::IoError, path + ": truncated header");
    }
    return v;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
    }
    return out;
}

ContainerHeader read_header(std::istream& in, const std::string& path) {
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw Error(ErrorCode::IoError, path + ": not a field container");
    }
    ContainerHeader h;
    const auto kind = get<std::uint32_t>(in, path);
    if (kind > 2) {
        throw Error(ErrorCode::IoError, path + ": unknown field kind " + std::to_string(kind));
    }
    h.kind = static_cast<FieldKind>(kind);
    (void)get<std::uint32_t>(in, path);
    h.points = get<std::uint64_t>(in, path);
    h.levels = get<std::uint64_t>(in, path);
    h.horizon = get<double>(in, path);
    h.dt = get<double>(in, path);
    return h;
}

} // namespace

void write_container(const std::string& path, FieldKind kind, const TimeAxis& time, const Eigen::MatrixXd& values) {
    require_size(static_cast<std::size_t>(values.cols()), static_cast<std::size_t>(time.levels()), "time levels");
    std::ofstream out = open_out(path, std::ios::out | std::ios::binary);
    out.write(kMagic, sizeof kMagic);
    put(out, static_cast<std::uint32_t>(kind));
    put(out, std::uint32_t{0});
    put(out, static_cast<std::uint64_t>(values.rows()));
    put(out, static_cast<std::uint64_t>(values.cols()));
    put(out, time.horizon);
    put(out, time.dt());
    // Column-major storage already places each time level contiguously.
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!out) {
        throw Error(ErrorCode::IoError, "write failed: " + path);
    }
}

ContainerHeader read_container_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path);
    }
    return read_header(in, path);
}

Eigen::MatrixXd read_container(const std::string& path, FieldKind kind, TimeAxis& time) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path);
    }
    const ContainerHeader h = read_header(in, path);
    if (h.kind != kind) {
        throw Error(ErrorCode::IoError, path + ": field kind " + std::to_string(static_cast<int>(h.kind)) +
                                            ", expected " + std::to_string(static_cast<int>(kind)));
    }
    if (h.levels < 2 || !(h.horizon > 0.0)) {
        throw Error(ErrorCode::IoError, path + ": bad time axis in header");
    }
    time = TimeAxis{h.horizon, static_cast<int>(h.levels - 1)};
    if (std::abs(time.dt() - h.dt) > 1e-12 * h.dt) {
        throw Error(ErrorCode::IoError, path + ": dt does not match T and the level count");
    }
    Eigen::MatrixXd values(static_cast<Eigen::Index>(h.points), static_cast<Eigen::Index>(h.levels));
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
        throw Error(ErrorCode::IoError, path + ": truncated payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::IoError, path + ": trailing bytes after payload");
    }
    return values;
}

void write_csv(const std::string& path, const TimeAxis& time, const Eigen::MatrixXd& values) {
    std::ofstream out = open_out(path);
    out.precision(17);
    out << "t";
    for (Eigen::Index p = 0; p < values.rows(); ++p) {
        out << ",v" << p;
    }
    out << '\n';
    for (Eigen::Index n = 0; n < values.cols(); ++n) {
        out << time.time(static_cast<int>(n));
        for (Eigen::Index p = 0; p < values.rows(); ++p) {
            out << ',' << values(p, n);
        }
        out << '\n';
    }
}

void write_columns(const std::string& path, const std::vector<std::vector<double>>& columns,
                   const std::string& header) {
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (const auto& c : columns) {
        require_size(c.size(), rows, "column length");
    }
    std::ofstream out = open_out(path);
    out.precision(17);
    if (!header.empty()) {
        out << "# " << header << '\n';
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            out << (c ? " " : "") << columns[c][r];
        }
        out << '\n';
    }
}

std::vector<double> read_numbers(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path);
    }
    std::vector<double> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.front() == '#') {
            continue;
        }
        for (char& c : line) {
            if (c == ',' || c == ';' || c == '\t' || c == '\r') {
                c = ' ';
            }
        }
        std::istringstream words(line);
        std::string w;
        while (words >> w) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
            if (ec != std::errc{} || ptr != w.data() + w.size() || !std::isfinite(v)) {
                throw Error(ErrorCode::IoError, path + ":" + std::to_string(lineno) + ": not a number: " + w);
            }
            out.push_back(v);
        }
    }
    return out;
}

} // namespace insens
