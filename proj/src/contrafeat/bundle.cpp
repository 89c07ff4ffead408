#include "bundle.hpp"

#include <cstring>
#include <fstream>

#include "errors.hpp"

namespace contrafeat {

namespace fs = std::filesystem;
using nlohmann::json;

const Tensor& Bundle::get(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError("bundle: missing array '" + name + "'");
    return it->second;
}

void Bundle::put_scalar(const std::string& name, float x) {
    arrays[name] = Tensor::from({1}, {x});
}

float Bundle::get_scalar(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.size() != 1) throw IoError("bundle: '" + name + "' is not a scalar");
    return t[0];
}

void Bundle::put_u64s(const std::string& name, const std::vector<std::uint64_t>& words) {
    Tensor t({static_cast<int>(words.size()), 4});
    for (std::size_t i = 0; i < words.size(); ++i)
        for (int c = 0; c < 4; ++c)
            t.v[i * 4 + static_cast<std::size_t>(c)] =
                static_cast<float>((words[i] >> (16 * c)) & 0xffffULL);
    arrays[name] = std::move(t);
}

std::vector<std::uint64_t> Bundle::get_u64s(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.ndim() != 2 || t.dim(1) != 4) throw IoError("bundle: '" + name + "' is not a u64 array");
    std::vector<std::uint64_t> words(static_cast<std::size_t>(t.dim(0)));
    for (std::size_t i = 0; i < words.size(); ++i) {
        std::uint64_t w = 0;
        for (int c = 0; c < 4; ++c)
            w |= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.v[i * 4 + static_cast<std::size_t>(c)]))
                 << (16 * c);
        words[i] = w;
    }
    return words;
}

namespace {

std::string blob_file_name(const std::string& array_name) {
    std::string out;
    for (char c : array_name) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out + ".bin";
}

void write_f32le(std::ofstream& os, const std::vector<float>& v) {
    std::vector<unsigned char> buf(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &v[i], 4);
        buf[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
        buf[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> read_f32le(std::ifstream& is, std::size_t count) {
    std::vector<unsigned char> buf(count * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw IoError("bundle: short blob read");
    std::vector<float> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(buf[i * 4 + 0]) |
                             (static_cast<std::uint32_t>(buf[i * 4 + 1]) << 8) |
                             (static_cast<std::uint32_t>(buf[i * 4 + 2]) << 16) |
                             (static_cast<std::uint32_t>(buf[i * 4 + 3]) << 24);
        std::memcpy(&v[i], &bits, 4);
    }
    return v;
}

}  // namespace

void save_bundle(const fs::path& dir, const Bundle& b) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("bundle: cannot create directory " + dir.string());

    json arrays = json::object();
    for (const auto& [name, t] : b.arrays) {
        const std::string file = blob_file_name(name);
        std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("bundle: cannot open " + (dir / file).string());
        write_f32le(os, t.v);
        if (!os) throw IoError("bundle: write failed for " + file);
        arrays[name] = {{"shape", t.shape},
                        {"dtype", "f32le"},
                        {"file", file},
                        {"byte_length", t.size() * 4}};
    }
    json manifest = {{"format", "contrafeat-bundle-v1"}, {"arrays", arrays}};
    manifest["config"] = b.config.is_null() ? json() : b.config;

    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("bundle: cannot open manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
    if (!os) throw IoError("bundle: manifest write failed");
}

Bundle load_bundle(const fs::path& dir) {
    std::ifstream ms(dir / "manifest.json");
    if (!ms) throw IoError("bundle: missing manifest in " + dir.string());
    json manifest;
    try {
        ms >> manifest;
    } catch (const json::exception& e) {
        throw IoError("bundle: bad manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "contrafeat-bundle-v1")
        throw IoError("bundle: unknown format in " + dir.string());

    Bundle b;
    if (manifest.contains("config")) b.config = manifest["config"];
    for (const auto& [name, desc] : manifest.at("arrays").items()) {
        std::vector<int> shape = desc.at("shape").get<std::vector<int>>();
        if (desc.at("dtype").get<std::string>() != "f32le")
            throw IoError("bundle: unsupported dtype for '" + name + "'");
        const std::size_t count = Tensor::count(shape);
        if (desc.at("byte_length").get<std::size_t>() != count * 4)
            throw IoError("bundle: byte length mismatch for '" + name + "'");
        std::ifstream is(dir / desc.at("file").get<std::string>(), std::ios::binary);
        if (!is) throw IoError("bundle: missing blob for '" + name + "'");
        Tensor t;
        t.shape = std::move(shape);
        t.v = read_f32le(is, count);
        b.arrays[name] = std::move(t);
    }
    return b;
}

}  // namespace contrafeat
