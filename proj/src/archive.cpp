#include "dgpose/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

namespace dgpose {

static_assert(std::endian::native == std::endian::little, "archives are written little-endian");

namespace {

constexpr char kMagic[8] = {'D', 'G', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr std::size_t kDigest = 32;

void sha256(const std::uint8_t* data, std::size_t n, std::uint8_t* out) {
    unsigned int len = 0;
    if (!EVP_Digest(data, n, out, &len, EVP_sha256(), nullptr) || len != kDigest) {
        throw ArchiveError("sha-256 failed");
    }
}

}  // namespace

void Archive::add(const std::string& name, const Tensor<float>& t) {
    if (!tensors.count(name)) names.push_back(name);
    tensors.insert_or_assign(name, t);
}

const Tensor<float>& Archive::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ArchiveError("archive has no tensor '" + name + "'");
    return it->second;
}

std::vector<std::uint8_t> Archive::serialize() const {
    nlohmann::json h = header;
    nlohmann::json index = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& n : names) {
        const auto& t = tensors.at(n);
        const Shape s = t.shape();
        index.push_back({{"name", n}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", t.size()}});
        offset += t.size();
    }
    h["tensors"] = index;
    const std::string text = h.dump();
    std::vector<std::uint8_t> out(sizeof kMagic + 8 + text.size() + offset * sizeof(float) + kDigest);
    std::uint8_t* p = out.data();
    std::memcpy(p, kMagic, sizeof kMagic);
    p += sizeof kMagic;
    const std::uint64_t len = text.size();
    std::memcpy(p, &len, 8);
    p += 8;
    std::memcpy(p, text.data(), text.size());
    p += text.size();
    for (const auto& n : names) {
        const auto& t = tensors.at(n);
        std::memcpy(p, t.data(), t.size() * sizeof(float));
        p += t.size() * sizeof(float);
    }
    sha256(out.data(), static_cast<std::size_t>(p - out.data()), p);
    return out;
}

Archive Archive::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < sizeof kMagic + 8 + kDigest || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ArchiveError("not a dgpose archive (bad magic or truncated)");
    }
    std::uint8_t digest[kDigest];
    sha256(bytes.data(), bytes.size() - kDigest, digest);
    if (std::memcmp(digest, bytes.data() + bytes.size() - kDigest, kDigest) != 0) {
        throw ArchiveError("archive integrity check failed (sha-256 mismatch)");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + sizeof kMagic, 8);
    const std::size_t body = sizeof kMagic + 8;
    if (len > bytes.size() - body - kDigest) throw ArchiveError("archive header length out of range");
    Archive a;
    try {
        a.header = nlohmann::json::parse(bytes.begin() + body, bytes.begin() + body + len);
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(std::string("archive header is not JSON: ") + e.what());
    }
    const std::uint8_t* blob = bytes.data() + body + len;
    const std::size_t blob_floats = (bytes.size() - body - len - kDigest) / sizeof(float);
    for (const auto& t : a.header.at("tensors")) {
        const auto shape = t.at("shape").get<std::vector<int>>();
        const auto offset = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (shape.size() != 4 || offset + count > blob_floats) throw ArchiveError("archive tensor index corrupt");
        Shape s{shape[0], shape[1], shape[2], shape[3]};
        if (s.size() != count) throw ArchiveError("archive tensor shape/count mismatch");
        std::vector<float> v(count);
        std::memcpy(v.data(), blob + offset * sizeof(float), count * sizeof(float));
        a.add(t.at("name").get<std::string>(), Tensor<float>(s, std::move(v)));
    }
    a.header.erase("tensors");
    return a;
}

void Archive::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ArchiveError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ArchiveError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace dgpose
