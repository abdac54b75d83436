#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "insens/io.hpp"
#include "support.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace insens;
using namespace testsupport;

namespace {

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "insens_test_io";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

std::vector<char> bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void expect_io_error(const std::function<void()>& f) {
    try {
        f();
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoError);
    }
}

} // namespace

TEST_CASE("binary container round trip is bitwise for every kind") {
    std::mt19937_64 rng(3);
    const TimeAxis t{0.75, 6};
    const SpaceTimeField f = random_like(SpaceTimeField(t, 13), rng);
    const BoundaryTrace b = random_like(BoundaryTrace(t, 5), rng);
    const Control c = random_like(Control(t, 4), rng);
    write_binary(temp_path("f.bin"), f);
    write_binary(temp_path("b.bin"), b);
    write_binary(temp_path("c.bin"), c);
    const auto f2 = read_binary<NodeTag>(temp_path("f.bin"));
    const auto b2 = read_binary<TraceTag>(temp_path("b.bin"));
    const auto c2 = read_binary<ControlTag>(temp_path("c.bin"));
    CHECK(f2.time == t);
    CHECK(f2.values == f.values);
    CHECK(b2.values == b.values);
    CHECK(c2.values == c.values);
}

TEST_CASE("container layout: header then levels outermost") {
    const TimeAxis t{2.0, 3};
    BoundaryTrace b(t, 2);
    for (int n = 0; n < t.levels(); ++n) {
        b.values(0, n) = 10.0 * n;
        b.values(1, n) = 10.0 * n + 1.0;
    }
    const std::string p = temp_path("layout.bin");
    write_binary(p, b);
    const std::vector<char> raw = bytes(p);
    const std::size_t header = 8 + 4 + 4 + 8 + 8 + 8 + 8;
    REQUIRE(raw.size() == header + 8 * 2 * 4);
    CHECK(std::string(raw.data(), 8) == "INSENSF1");
    std::uint32_t kind = 0;
    std::memcpy(&kind, raw.data() + 8, 4);
    CHECK(kind == 1);
    double dt = 0.0;
    std::memcpy(&dt, raw.data() + header - 8, 8);
    CHECK(dt == doctest::Approx(2.0 / 3.0));
    for (int i = 0; i < 8; ++i) {
        double v = 0.0;
        std::memcpy(&v, raw.data() + header + 8 * i, 8);
        CHECK(v == 10.0 * (i / 2) + (i % 2));
    }
    const ContainerHeader h = read_container_header(p);
    CHECK(h.kind == FieldKind::Trace);
    CHECK(h.points == 2);
    CHECK(h.levels == 4);
    CHECK(h.horizon == 2.0);
}

TEST_CASE("malformed containers are rejected") {
    const TimeAxis t{1.0, 2};
    const std::string p = temp_path("node.bin");
    write_binary(p, SpaceTimeField(t, 3));
    expect_io_error([&] { (void)read_binary<ControlTag>(p); });
    expect_io_error([&] { (void)read_binary<NodeTag>(temp_path("missing.bin")); });

    std::vector<char> raw = bytes(p);
    {
        std::ofstream out(temp_path("short.bin"), std::ios::binary);
        out.write(raw.data(), static_cast<std::streamsize>(raw.size() - 8));
    }
    expect_io_error([&] { (void)read_binary<NodeTag>(temp_path("short.bin")); });
    {
        std::ofstream out(temp_path("long.bin"), std::ios::binary);
        out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
        out.write("x", 1);
    }
    expect_io_error([&] { (void)read_binary<NodeTag>(temp_path("long.bin")); });
    raw[0] = 'X';
    {
        std::ofstream out(temp_path("magic.bin"), std::ios::binary);
        out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    }
    expect_io_error([&] { (void)read_binary<NodeTag>(temp_path("magic.bin")); });
}

TEST_CASE("CSV export has one row per level") {
    const TimeAxis t{1.0, 4};
    SpaceTimeField f(t, 3);
    f.values(2, 4) = 0.125;
    const std::string p = temp_path("f.csv");
    write_csv(p, f);
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) {
        lines.push_back(l);
    }
    REQUIRE(lines.size() == 6);
    CHECK(lines[0] == "t,v0,v1,v2");
    CHECK(lines[5] == "1,0,0,0.125");
    CHECK(lines[1] == "0,0,0,0");
}

TEST_CASE("number lists and column files") {
    const std::string p = temp_path("nums.txt");
    {
        std::ofstream out(p);
        out << "# header\n1, 2.5\n-3e-2\t4\n\n";
    }
    CHECK(read_numbers(p) == std::vector<double>{1.0, 2.5, -0.03, 4.0});
    {
        std::ofstream out(p);
        out << "1 2\nthree\n";
    }
    try {
        (void)read_numbers(p);
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoError);
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    const std::string c = temp_path("cols.dat");
    write_columns(c, {{0.0, 0.5}, {1.0, -2.0}}, "x y");
    std::ifstream in(c);
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l1 == "# x y");
    CHECK(l2 == "0 1");
    CHECK(l3 == "0.5 -2");
    CHECK_THROWS_AS(write_columns(c, {{0.0}, {1.0, 2.0}}), Error);
}
