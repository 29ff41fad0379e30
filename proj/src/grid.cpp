#include "melfront/grid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace melfront {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff),
    };
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error(std::string("RMG1: truncated header while reading ") + field);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

bool MelGrid::finite() const {
    for (float v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void save_rmg(const std::string& path, const MelGrid& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("RMG1: cannot open for writing: " + path);
    os.write("RMG1", 4);
    write_u32(os, 1u);
    write_u32(os, static_cast<std::uint32_t>(grid.frames));
    write_u32(os, static_cast<std::uint32_t>(grid.bins));
    const unsigned char res = static_cast<unsigned char>(grid.resolution);
    const unsigned char norm = grid.normalized ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&res), 1);
    os.write(reinterpret_cast<const char*>(&norm), 1);
    const char reserved[6] = {0, 0, 0, 0, 0, 0};
    os.write(reserved, 6);
    // values are IEEE binary32; this code assumes a little-endian host
    os.write(reinterpret_cast<const char*>(grid.values.data()),
             static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
    if (!os) throw std::runtime_error("RMG1: write failed: " + path);
}

MelGrid load_rmg(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("RMG1: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RMG1", 4) != 0) {
        throw std::runtime_error("RMG1: bad magic in " + path + " (expected RMG1)");
    }
    const std::uint32_t version = read_u32(is, "version");
    if (version != 1) {
        throw std::runtime_error("RMG1: unsupported version field " + std::to_string(version));
    }
    const std::uint32_t frames = read_u32(is, "frames");
    const std::uint32_t bins = read_u32(is, "bins");
    if (frames == 0 || bins == 0 || frames > (1u << 24) || bins > (1u << 24)) {
        throw std::runtime_error("RMG1: implausible shape field " + std::to_string(frames) + "x" +
                                 std::to_string(bins));
    }
    unsigned char res = 0, norm = 0;
    char reserved[6];
    if (!is.read(reinterpret_cast<char*>(&res), 1) || !is.read(reinterpret_cast<char*>(&norm), 1) ||
        !is.read(reserved, 6)) {
        throw std::runtime_error("RMG1: truncated header flags in " + path);
    }
    if (res > 2) throw std::runtime_error("RMG1: unknown resolution tag " + std::to_string(res));
    MelGrid grid(static_cast<int>(frames), static_cast<int>(bins), static_cast<GridResolution>(res),
                 norm != 0);
    if (!is.read(reinterpret_cast<char*>(grid.values.data()),
                 static_cast<std::streamsize>(grid.values.size() * sizeof(float)))) {
        throw std::runtime_error("RMG1: truncated value payload in " + path);
    }
    return grid;
}

void save_stats_json(const std::string& path, const NormStats& stats) {
    nlohmann::json j;
    j["mean"] = stats.mean;
    j["std"] = stats.std_dev;
    j["data_min"] = stats.data_min;
    j["data_max"] = stats.data_max;
    j["n_mels"] = stats.mean.size();
    std::ofstream os(path);
    if (!os) throw std::runtime_error("stats: cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

NormStats load_stats_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("stats: cannot open: " + path);
    nlohmann::json j;
    is >> j;
    NormStats stats;
    stats.mean = j.at("mean").get<std::vector<float>>();
    stats.std_dev = j.at("std").get<std::vector<float>>();
    stats.data_min = j.at("data_min").get<float>();
    stats.data_max = j.at("data_max").get<float>();
    if (stats.mean.size() != stats.std_dev.size()) {
        throw std::runtime_error("stats: mean/std length mismatch in " + path);
    }
    return stats;
}

}  // namespace melfront
