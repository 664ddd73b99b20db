#include "dropreg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dropreg/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor records are little-endian; big-endian hosts are unsupported");

namespace dropreg {
namespace {

constexpr char kMagic[4] = {'D', 'R', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kMagic, sizeof(kMagic));
    const Shape4& s = t.shape();
    write_u64(out, s.n);
    write_u64(out, s.c);
    write_u64(out, s.h);
    write_u64(out, s.w);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[4] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("tensor read: bad magic, expected DRT1");
    Shape4 s;
    s.n = read_u64(in);
    s.c = read_u64(in);
    s.h = read_u64(in);
    s.w = read_u64(in);
    std::vector<double> values(s.size());
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw IoError("tensor read: truncated record for shape " + s.str());
    return Tensor::from_values(s, std::move(values));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_tensor(out, t);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_tensor(in);
}

void save_parameter_blob(const std::string& blob_path, const std::string& manifest_path,
                         const std::vector<NamedTensor>& tensors) {
    std::ofstream blob(blob_path, std::ios::binary);
    if (!blob) throw IoError("cannot open " + blob_path + " for writing");

    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    for (const NamedTensor& nt : tensors) {
        manifest["tensors"].push_back(
            {{"name", nt.name}, {"offset", static_cast<std::uint64_t>(blob.tellp())}});
        write_tensor(blob, nt.tensor);
    }
    blob.close();

    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot open " + manifest_path + " for writing");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("manifest write failed: " + manifest_path);
}

std::vector<NamedTensor> load_parameter_blob(const std::string& blob_path,
                                             const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open " + manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest parse error in " + manifest_path + ": " + e.what());
    }

    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw IoError("cannot open " + blob_path);

    std::vector<NamedTensor> tensors;
    for (const auto& entry : manifest.at("tensors")) {
        blob.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
        tensors.push_back({entry.at("name").get<std::string>(), read_tensor(blob)});
    }
    return tensors;
}

}  // namespace dropreg
