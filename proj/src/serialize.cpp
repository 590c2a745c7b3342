#include "sarmatch/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "sarmatch/errors.hpp"

namespace sarmatch {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of stream reading u32");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void expect_magic(std::istream& is, const char* magic, size_t len) {
    std::string buf(len, '\0');
    is.read(buf.data(), static_cast<std::streamsize>(len));
    if (!is || std::memcmp(buf.data(), magic, len) != 0)
        throw IoError(std::string("bad magic, expected '") + magic + "'");
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("TSR1", 4);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
    static_assert(sizeof(float) == 4);
    const auto d = t.data();
    // floats written verbatim; all supported targets are little-endian
    os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * 4));
}

Tensor read_tensor(std::istream& is) {
    expect_magic(is, "TSR1", 4);
    const uint32_t rank = read_u32(is);
    if (rank > 8) throw IoError("TSR1: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
        d = static_cast<int>(read_u32(is));
        if (d <= 0) throw IoError("TSR1: non-positive dim");
    }
    const int64_t n = shape_numel(shape);
    std::vector<float> data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 4));
    if (!is) throw IoError("TSR1: truncated payload");
    return Tensor::from_vector(std::move(shape), std::move(data));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    write_tensor(os, t);
    if (!os) throw IoError("write failed: " + path);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return read_tensor(is);
}

void save_checkpoint(const std::string& path, const NamedTensors& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("CKPT1", 5);
    write_u32(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(os, t);
    }
    if (!os) throw IoError("write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    expect_magic(is, "CKPT1", 5);
    const uint32_t count = read_u32(is);
    NamedTensors out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t len = read_u32(is);
        if (len > 4096) throw IoError("CKPT1: implausible name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw IoError("CKPT1: truncated name");
        out.emplace_back(std::move(name), read_tensor(is));
    }
    return out;
}

void save_kv_file(const std::string& path, const std::map<std::string, std::string>& kv) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

std::map<std::string, std::string> load_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError(path + ":" + std::to_string(lineno) + ": expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace sarmatch
