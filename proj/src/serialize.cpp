#include "pointseg/serialize.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "pointseg/errors.hpp"

using nlohmann::json;

namespace pointseg {

static constexpr char kMagic[4] = {'P', 'S', 'N', 'T'};

void save_params(const ParamStore& params, const std::string& path) {
    json manifest;
    manifest["version"] = 1;
    manifest["tensors"] = json::array();
    uint64_t offset = 0;
    for (size_t i = 0; i < params.count(); ++i) {
        const ParamTensor& p = params[static_cast<int>(i)];
        manifest["tensors"].push_back({{"name", p.name},
                                       {"shape", p.value.shape},
                                       {"dtype", "f64"},
                                       {"offset", offset}});
        offset += p.value.size() * sizeof(double);
    }
    const std::string mstr = manifest.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open for writing: " + path);
    f.write(kMagic, 4);
    const uint64_t mlen = mstr.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (size_t i = 0; i < params.count(); ++i) {
        const ParamTensor& p = params[static_cast<int>(i)];
        f.write(reinterpret_cast<const char*>(p.value.data.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    }
    if (!f) throw InputError("short write: " + path);
}

void load_params(ParamStore& params, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a weights archive: " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mstr(mlen, '\0');
    f.read(mstr.data(), static_cast<std::streamsize>(mlen));
    json manifest;
    try {
        manifest = json::parse(mstr);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("weights manifest: ") + e.what());
    }
    const auto tensors = manifest.at("tensors");
    if (tensors.size() != params.count())
        throw ParseError("weights archive has " + std::to_string(tensors.size()) +
                         " tensors, expected " + std::to_string(params.count()));
    const std::streampos data_start = f.tellg();
    for (const auto& jt : tensors) {
        const std::string name = jt.at("name").get<std::string>();
        const int idx = params.find(name);
        if (idx < 0) throw ParseError("unexpected tensor in archive: " + name);
        ParamTensor& p = params[idx];
        const auto shape = jt.at("shape").get<std::vector<int>>();
        if (shape != p.value.shape)
            throw ParseError("shape mismatch for tensor " + name);
        f.seekg(data_start + static_cast<std::streamoff>(jt.at("offset").get<uint64_t>()));
        f.read(reinterpret_cast<char*>(p.value.data.data()),
               static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!f) throw ParseError("truncated tensor payload: " + name);
    }
}

}  // namespace pointseg
