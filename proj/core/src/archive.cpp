#include "actseg/archive.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "actseg/error.hpp"

namespace actseg {

namespace {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'A', 'C', 'T', 'S', 'E', 'G', 'A', 'R'};
constexpr std::uint32_t kFormat = 1;

template <typename T>
void put(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw Error(ErrorCode::IoError, "truncated archive");
    return value;
}

template <typename T>
void put_blob(std::ofstream& out, std::uint8_t dtype, const std::vector<T>& data) {
    put(out, dtype);
    put(out, static_cast<std::uint64_t>(data.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <typename T>
std::vector<T> get_blob(std::ifstream& in, std::uint64_t count) {
    std::vector<T> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) throw Error(ErrorCode::IoError, "truncated archive blob");
    return data;
}

}  // namespace

void write_archive(const Archive& archive, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put(out, kFormat);
    const std::string meta = archive.meta.dump();
    put(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put(out, static_cast<std::uint64_t>(archive.blobs.size()));
    for (const auto& blob : archive.blobs) {
        if (const auto* f = std::get_if<std::vector<float>>(&blob)) {
            put_blob(out, std::uint8_t{0}, *f);
        } else {
            put_blob(out, std::uint8_t{1}, std::get<std::vector<double>>(blob));
        }
    }
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw Error(ErrorCode::IoError, path.string() + " is not an actseg archive");
    if (get<std::uint32_t>(in) != kFormat) throw Error(ErrorCode::IoError, "unsupported archive format");

    Archive archive;
    const auto meta_len = get<std::uint64_t>(in);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw Error(ErrorCode::IoError, "truncated archive metadata");
    archive.meta = nlohmann::json::parse(meta);

    const auto count = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto dtype = get<std::uint8_t>(in);
        const auto n = get<std::uint64_t>(in);
        if (dtype == 0) {
            archive.blobs.emplace_back(get_blob<float>(in, n));
        } else if (dtype == 1) {
            archive.blobs.emplace_back(get_blob<double>(in, n));
        } else {
            throw Error(ErrorCode::IoError, "unknown blob dtype");
        }
    }
    return archive;
}

}  // namespace actseg
